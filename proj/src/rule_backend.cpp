#include "asmalign/rule_backend.hpp"

#include "asmalign/bcsd.hpp"
#include "asmalign/error.hpp"
#include "asmalign/hashing.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace asmalign {
namespace {

struct ListingFacts {
  std::size_t instructions = 0;
  bool frame = false;
  bool returns = false;
  std::size_t branches = 0;
  std::size_t memory = 0;
  std::vector<std::string> callees;
};

bool looks_like_symbol(std::string_view s) {
  if (s.empty() || std::isdigit(static_cast<unsigned char>(s[0]))) return false;
  if (s.rfind("loc_", 0) == 0 || s.rfind("short", 0) == 0 || s.rfind("0x", 0) == 0) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '@';
  });
}

// Reads "<n>: <text>" lines of the listing embedded in a prompt.
ListingFacts read_facts(std::string_view prompt) {
  ListingFacts f;
  std::set<std::string> seen;
  std::istringstream in{std::string(prompt)};
  for (std::string line; std::getline(in, line);) {
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i == 0 || i + 1 >= line.size() || line[i] != ':') continue;
    // The listing may sit on the same line as the opening <code> tag.
    std::istringstream ins(line.substr(i + 1));
    std::string mnemonic, operand;
    ins >> mnemonic >> operand;
    ++f.instructions;
    if (mnemonic == "push" && (operand == "rbp" || operand == "ebp")) f.frame = true;
    if (mnemonic == "ret" || mnemonic == "retn") f.returns = true;
    if (mnemonic.size() > 1 && mnemonic[0] == 'j' && mnemonic != "jmp") ++f.branches;
    if (line.find('[') != std::string::npos) ++f.memory;
    if ((mnemonic == "call" || mnemonic == "jmp") && looks_like_symbol(operand) && seen.insert(operand).second) {
      f.callees.push_back(operand);
    }
  }
  return f;
}

std::string callee_list(const std::vector<std::string>& callees) {
  std::string out;
  for (std::size_t i = 0; i < callees.size(); ++i) {
    if (i > 0) out += i + 1 == callees.size() ? " and " : ", ";
    out += callees[i];
  }
  return out;
}

std::string summary(const ListingFacts& f) {
  std::string s = f.frame ? "Sets up a stack frame, " : "Runs without a frame pointer, ";
  s += f.callees.empty() ? "makes no calls" : "calls " + callee_list(f.callees);
  if (f.branches > 0) s += fmt::format(", branches on {} condition{}", f.branches, f.branches == 1 ? "" : "s");
  s += f.returns ? " and returns to its caller." : " and ends in a tail transfer.";
  return s;
}

std::string between(std::string_view text, std::string_view open, std::string_view close) {
  const auto a = text.find(open);
  if (a == std::string_view::npos) return {};
  const auto b = text.find(close, a + open.size());
  return std::string(text.substr(a + open.size(), b == std::string_view::npos ? std::string_view::npos
                                                                                : b - a - open.size()));
}

std::string description_in(std::string_view prompt) {
  auto d = between(prompt, "Here is the description of the code:", ". Generate");
  if (d.empty()) d = between(prompt, "Here is the description of the code:", "\n");
  while (!d.empty() && (d.back() == '.' || std::isspace(static_cast<unsigned char>(d.back())))) d.pop_back();
  return d;
}

std::string detail(const ListingFacts& f, std::string_view description) {
  std::string s = fmt::format("The function consists of {} instructions.", f.instructions);
  s += f.frame ? " It saves the caller's base pointer and establishes a stack frame."
               : " It does not establish a stack frame.";
  if (!f.callees.empty()) s += " Control passes to " + callee_list(f.callees) + ".";
  if (f.branches > 0) s += fmt::format(" Execution forks at {} conditional jump{}.", f.branches, f.branches == 1 ? "" : "s");
  if (f.memory > 0) s += fmt::format(" {} instruction{} access memory.", f.memory, f.memory == 1 ? "" : "s");
  if (!description.empty()) s += fmt::format(" In short: {}.", description);
  return s;
}

std::string conversation(const ListingFacts& f, std::string_view description) {
  std::string s;
  const auto round = [&](std::string_view q, const std::string& a) { s += fmt::format("User: {}\nAI: {}\n", q, a); };
  round("Which functions does this code call?",
        f.callees.empty() ? "It makes no calls." : "It calls " + callee_list(f.callees) + ".");
  round("Does the code set up a stack frame?", f.frame ? "Yes, it pushes the base pointer first." : "No, it keeps no frame.");
  round("How long is the function?", fmt::format("It contains {} instructions.", f.instructions));
  round("Does it make decisions at run time?",
        f.branches > 0 ? fmt::format("Yes, it has {} conditional branches.", f.branches) : "No, the control flow is straight.");
  round("What is its overall purpose?", description.empty() ? summary(f) : std::string(description) + ".");
  return s;
}

std::string reasoning(const ListingFacts& f, std::string_view description) {
  std::string answer = f.callees.empty()
                           ? "It performs its work locally, which suggests a small leaf routine."
                           : "It exists to delegate work to " + callee_list(f.callees) +
                                 ", so its behaviour is defined mostly by those callees.";
  if (!description.empty()) answer += fmt::format(" This matches the summary: {}.", description);
  return "User: What role does this function most likely play in the program?\nAI: " + answer + "\n";
}

std::set<std::string> word_set(std::string_view text) {
  std::set<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.insert(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.insert(std::move(cur));
  return out;
}

std::string verdict(std::string_view prompt, int variant) {
  const auto ref = word_set(between(prompt, "[Assistant 1]\n", "[End of Assistant 1]"));
  const auto cand = word_set(between(prompt, "[Assistant 2]\n", "[End of Assistant 2]"));
  std::size_t common = 0;
  for (const auto& w : cand) common += ref.count(w);
  const std::size_t uni = ref.size() + cand.size() - common;
  const double overlap = uni == 0 ? 0.0 : static_cast<double>(common) / static_cast<double>(uni);
  std::string out;
  const auto jitter = [&](std::size_t side, std::size_t dim) {
    const auto h = fnv1a64(fmt::format("{}|{}|{}|{}", prompt, variant, side, dim));
    return static_cast<int>(h % 3) - 1;
  };
  for (std::size_t d = 0; d < 5; ++d) out += fmt::format("{} ", std::clamp(8 + jitter(0, d), 1, 10));
  out += "/";
  const int base = 1 + static_cast<int>(overlap * 9.0 + 0.5);
  for (std::size_t d = 0; d < 5; ++d) out += fmt::format(" {}", std::clamp(base + jitter(1, d), 1, 10));
  out += fmt::format("\nAssistant 2 shares {:.0f}% of its vocabulary with Assistant 1.", overlap * 100.0);
  return out;
}

std::string reference_answer(std::string_view prompt) {
  const auto description = between(prompt, "Function description:\n", "\n\nQuestion:");
  const auto question = between(prompt, "Question:\n", "\n\n\n");
  return fmt::format("Based on the description, {} Regarding \"{}\": the answer follows from that behaviour.",
                     description, question);
}

std::size_t word_count(std::string_view text) { return count_tokens(text); }

nlohmann::json chat(const nlohmann::json& body, int variant) {
  std::string system, user;
  for (const auto& m : body.at("messages")) {
    const auto role = m.at("role").get<std::string>();
    (role == "system" ? system : user) = m.at("content").get<std::string>();
  }
  const auto facts = read_facts(user);
  std::string content;
  if (user.find("[Assistant 1]") != std::string::npos) {
    content = verdict(user, variant);
  } else if (user.rfind("Function description:", 0) == 0) {
    content = reference_answer(user);
  } else if (user.find("Generate 5 rounds of conversation") != std::string::npos) {
    content = system.find("Complex Reasoning") != std::string::npos ? reasoning(facts, description_in(user))
                                                                     : conversation(facts, description_in(user));
  } else if (system.find("in a detailed manner") != std::string::npos) {
    content = detail(facts, description_in(user));
  } else if (facts.instructions > 0) {
    content = summary(facts);
  } else {
    content = "No assembly listing was provided.";
  }
  std::size_t prompt_words = word_count(system) + word_count(user);
  return {{"id", "rule-" + sha256_hex(body.dump()).substr(0, 12)},
          {"model", body.value("model", std::string("rule"))},
          {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}, {"finish_reason", "stop"}}}},
          {"usage", {{"prompt_tokens", prompt_words}, {"completion_tokens", word_count(content)}}}};
}

nlohmann::json embeddings(const nlohmann::json& body) {
  LocalHashEmbedder embedder(256);
  nlohmann::json data = nlohmann::json::array();
  std::size_t i = 0;
  for (const auto& text : body.at("input")) {
    data.push_back({{"index", i++}, {"embedding", embedder.embed_one(text.get<std::string>())}});
  }
  return {{"data", data}, {"model", body.value("model", std::string("rule"))}};
}

}  // namespace

nlohmann::json RuleBasedTransport::post(std::string_view route, const nlohmann::json& body, int variant) {
  ++calls_;
  try {
    if (route == "/chat/completions") return chat(body, variant);
    if (route == "/embeddings") return embeddings(body);
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed request: ") + e.what());
  }
  throw BackendError("rule backend has no route " + std::string(route));
}

nlohmann::json OfflineTransport::post(std::string_view route, const nlohmann::json&, int) {
  throw BackendError("network access is disabled in replay mode (route " + std::string(route) + ")");
}

}  // namespace asmalign
