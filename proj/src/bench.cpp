#include "asmalign/bench.hpp"

#include "asmalign/error.hpp"
#include "asmalign/parallel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <numeric>
#include <set>
#include <sstream>

namespace asmalign {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string joined_questions(const BenchItem& item) {
  std::string out;
  for (const auto& q : item.questions) {
    if (!out.empty()) out.push_back('\n');
    out += q;
  }
  return out;
}

std::array<int, kJudgeDims> parse_scores(std::string_view side) {
  std::array<int, kJudgeDims> out{};
  std::size_t n = 0;
  std::string token;
  const auto flush = [&] {
    if (token.empty()) return;
    if (n == kJudgeDims) throw ParseError("more than five scores on one side of the verdict");
    const int v = std::stoi(token);
    if (v < 1 || v > 10) throw ParseError(fmt::format("score {} outside 1..10", v));
    out[n++] = v;
    token.clear();
  };
  for (char c : side) {
    if (std::isdigit(static_cast<unsigned char>(c))) {
      token.push_back(c);
    } else if (c == ' ' || c == ',' || c == '\t') {
      flush();
    } else {
      throw ParseError(fmt::format("unexpected '{}' in verdict scores", c));
    }
  }
  flush();
  if (n != kJudgeDims) throw ParseError(fmt::format("expected five scores, found {}", n));
  return out;
}

JudgeVerdict average(std::string item_id, const std::vector<std::array<int, kJudgeDims>>& trials,
                     std::string rationale) {
  JudgeVerdict v;
  v.item_id = std::move(item_id);
  v.rationale = std::move(rationale);
  for (std::size_t d = 0; d < kJudgeDims; ++d) {
    double s = 0.0;
    for (const auto& t : trials) s += t[d];
    v.dims[d] = s / static_cast<double>(trials.size());
  }
  return v;
}

ordered_json item_to_json(const BenchItem& item) {
  ordered_json j;
  j["id"] = item.id;
  j["function_id"] = item.function_id;
  j["category"] = std::string(to_string(item.category));
  j["questions"] = item.questions;
  j["ground_truth_description"] = item.ground_truth_description;
  if (!item.code.empty()) j["code"] = item.code;
  return j;
}

BenchItem item_from_json(const ordered_json& j) {
  BenchItem item;
  item.id = j.at("id").get<std::string>();
  item.function_id = j.at("function_id").get<std::string>();
  item.category = parse_bench_category(j.at("category").get<std::string>());
  item.questions = j.at("questions").get<std::vector<std::string>>();
  item.ground_truth_description = j.value("ground_truth_description", std::string{});
  item.code = j.value("code", std::vector<std::string>{});
  if (item.questions.empty()) throw SchemaError("bench item " + item.id + " has no question");
  return item;
}

}  // namespace

std::string_view to_string(BenchCategory category) {
  switch (category) {
    case BenchCategory::conversation: return "conversation";
    case BenchCategory::detail_description: return "detail_description";
    case BenchCategory::complex_reasoning: return "complex_reasoning";
  }
  return "conversation";
}

BenchCategory parse_bench_category(std::string_view text) {
  for (auto c : kBenchCategories) {
    if (to_string(c) == text || category_label(c) == text) return c;
  }
  throw ValidationError("unknown bench category '" + std::string(text) + "'");
}

std::string_view category_label(BenchCategory category) {
  switch (category) {
    case BenchCategory::conversation: return "Conversation";
    case BenchCategory::detail_description: return "Detail description";
    case BenchCategory::complex_reasoning: return "Complex reasoning";
  }
  return "Conversation";
}

std::vector<std::string> pack_warnings(const BenchPack& pack) {
  std::map<std::string, std::size_t> per_snippet;
  for (const auto& item : pack.items) ++per_snippet[item.function_id];
  std::vector<std::string> out;
  for (const auto& [fn, n] : per_snippet) {
    if (n != kQuestionsPerSnippet) {
      out.push_back(fmt::format("snippet {} has {} questions, expected {}", fn, n, kQuestionsPerSnippet));
    }
  }
  return out;
}

std::string render_bench_pack(const BenchPack& pack) {
  JsonlDocument doc;
  doc.header["schema"] = "bench-pack/v1";
  doc.header["name"] = pack.name;
  for (const auto& item : pack.items) doc.records.push_back(item_to_json(item));
  return render_jsonl(doc);
}

BenchPack parse_bench_pack(std::string_view text) {
  const auto doc = parse_jsonl(text);
  require_schema(doc.header, "bench-pack", 1);
  BenchPack pack;
  pack.name = doc.header.value("name", std::string{});
  std::set<std::string> ids;
  for (const auto& r : doc.records) {
    try {
      pack.items.push_back(item_from_json(r));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("malformed bench item: ") + e.what());
    } catch (const ValidationError& e) {
      throw SchemaError(e.what());
    }
    if (!ids.insert(pack.items.back().id).second) throw IntegrityError("duplicate bench item " + pack.items.back().id);
  }
  return pack;
}

void save_bench_pack(const BenchPack& pack, const std::filesystem::path& path) {
  write_text_file(path, render_bench_pack(pack));
}

BenchPack load_bench_pack(const std::filesystem::path& path) { return parse_bench_pack(read_text_file(path)); }

std::string render_answers(const AnswerSet& answers, std::string_view model) {
  JsonlDocument doc;
  doc.header["schema"] = "answers/v1";
  doc.header["model"] = std::string(model);
  for (const auto& [id, answer] : answers) doc.records.push_back({{"item_id", id}, {"answer", answer}});
  return render_jsonl(doc);
}

AnswerSet parse_answers(std::string_view text) {
  const auto doc = parse_jsonl(text);
  require_schema(doc.header, "answers", 1);
  AnswerSet out;
  try {
    for (const auto& r : doc.records) {
      const auto id = r.at("item_id").get<std::string>();
      if (!out.emplace(id, r.at("answer").get<std::string>()).second) throw IntegrityError("duplicate answer for " + id);
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed answers file: ") + e.what());
  }
  return out;
}

std::vector<ChatTurn> reference_prompt(const BenchItem& item) {
  return {{ChatRole::system,
           "You are an expert in reverse engineering. Answer questions about an assembly function using only "
           "the description of that function provided by the user."},
          {ChatRole::user, fmt::format("Function description:\n{}\n\nQuestion:\n{}", item.ground_truth_description,
                                       joined_questions(item))}};
}

std::vector<ChatTurn> judge_prompt(const BenchItem& item, std::string_view reference, std::string_view candidate) {
  std::string rubric =
      "Rate each answer on helpfulness, relevance, accuracy, detail and comprehensiveness, each an integer from "
      "1 to 10. On the first line write only the five scores of Assistant 1, a '/', and the five scores of "
      "Assistant 2, in that dimension order, for example \"8 7 9 6 7 / 6 6 7 5 6\". Then explain your rating "
      "without letting the order of the answers bias you.";
  return {{ChatRole::system, "You are a strict reviewer of answers about assembly code."},
          {ChatRole::user, fmt::format("[Question]\n{}\n\n[Assistant 1]\n{}\n[End of Assistant 1]\n\n[Assistant 2]\n{}\n"
                                       "[End of Assistant 2]\n\n{}",
                                       joined_questions(item), trim(reference), trim(candidate), rubric)}};
}

std::pair<std::array<int, kJudgeDims>, std::array<int, kJudgeDims>> parse_verdict_line(std::string_view text) {
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    const auto slash = line.find('/');
    if (slash == std::string::npos) continue;
    const std::string_view l = line;
    return {parse_scores(trim(l.substr(0, slash))), parse_scores(trim(l.substr(slash + 1)))};
  }
  throw ParseError("no verdict line of the form 'a b c d e / f g h i j'");
}

std::string build_reference(ChatBackend& client, const BenchItem& item, int max_attempts) {
  if (trim(item.ground_truth_description).empty()) {
    throw ValidationError("bench item " + item.id + " has no ground-truth description");
  }
  const auto request = reference_prompt(item);
  const auto c = with_retries(max_attempts, [&](int attempt) { return client.complete(request, attempt); });
  return std::string(trim(c.content));
}

VerdictPair judge(ChatBackend& client, const BenchItem& item, std::string_view candidate, std::string_view reference,
                  const JudgeOptions& options) {
  if (trim(candidate).empty() || trim(reference).empty()) {
    throw ValidationError("bench item " + item.id + " needs non-empty reference and candidate answers");
  }
  if (options.trials < 1 || options.parse_attempts < 1) throw ValidationError("judge needs at least one trial");
  const auto request = judge_prompt(item, reference, candidate);
  std::vector<std::array<int, kJudgeDims>> ref_scores, cand_scores;
  std::string rationale;
  for (int t = 0; t < options.trials; ++t) {
    for (int a = 0;; ++a) {
      const int variant = t * options.parse_attempts + a;
      const auto c = with_retries(options.max_attempts, [&](int) { return client.complete(request, variant); });
      try {
        auto [r, k] = parse_verdict_line(c.content);
        ref_scores.push_back(r);
        cand_scores.push_back(k);
        if (t == 0) {
          const auto nl = c.content.find('\n');
          rationale = nl == std::string::npos ? "" : std::string(trim(std::string_view(c.content).substr(nl + 1)));
        }
        break;
      } catch (const ParseError& e) {
        if (a + 1 >= options.parse_attempts) {
          throw ParseError(fmt::format("unparseable verdict for {} after {} attempts: {}", item.id, a + 1, e.what()));
        }
      }
    }
  }
  return {average(item.id, ref_scores, rationale), average(item.id, cand_scores, rationale)};
}

double relative_score(const JudgeVerdict& candidate, const JudgeVerdict& reference) {
  const double c = std::accumulate(candidate.dims.begin(), candidate.dims.end(), 0.0);
  const double r = std::accumulate(reference.dims.begin(), reference.dims.end(), 0.0);
  if (!(r > 0.0)) throw ValidationError("reference verdict has a zero mean");
  // Equal dimension counts cancel, so the ratio of sums is the ratio of means.
  return 100.0 * (c / r);
}

BenchReport aggregate(std::vector<ScoredItem> items, std::string label) {
  if (items.empty()) throw ValidationError("no scored bench items to aggregate");
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.item_id < b.item_id; });
  BenchReport report;
  report.label = std::move(label);
  std::map<BenchCategory, double> sums;
  double total = 0.0;
  for (const auto& it : items) {
    sums[it.category] += it.score;
    ++report.categories[it.category].items;
    total += it.score;
  }
  for (auto& [cat, cs] : report.categories) cs.score = sums[cat] / static_cast<double>(cs.items);
  report.all = {total / static_cast<double>(items.size()), items.size()};
  return report;
}

ordered_json bench_report_to_json(const BenchReport& report) {
  ordered_json j;
  j["schema"] = "bench-report/v1";
  j["label"] = report.label;
  j["formula"] = std::string(kScoreFormula);
  ordered_json cats = ordered_json::object();
  for (auto c : kBenchCategories) {
    const auto it = report.categories.find(c);
    if (it == report.categories.end()) continue;
    cats[std::string(category_label(c))] = {{"score", it->second.score}, {"items", it->second.items}};
  }
  j["categories"] = std::move(cats);
  j["All"] = {{"score", report.all.score}, {"items", report.all.items}};
  j["quarantined"] = report.quarantined;
  return j;
}

BenchReport bench_report_from_json(const ordered_json& j) {
  require_schema(j, "bench-report", 1);
  for (const char* field : {"label", "categories", "All"}) {
    if (!j.contains(field)) throw SchemaError(fmt::format("bench report missing field '{}'", field));
  }
  BenchReport r;
  try {
    r.label = j["label"].get<std::string>();
    for (const auto& [name, v] : j["categories"].items()) {
      r.categories[parse_bench_category(name)] = {v.at("score").get<double>(), v.at("items").get<std::size_t>()};
    }
    r.all = {j["All"].at("score").get<double>(), j["All"].at("items").get<std::size_t>()};
    r.quarantined = j.value("quarantined", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed bench report: ") + e.what());
  }
  return r;
}

std::string render_bench_table(const std::vector<BenchReport>& reports) {
  std::size_t name_w = std::string_view("Models").size();
  for (const auto& r : reports) name_w = std::max(name_w, r.label.size());
  std::string out = fmt::format("{:<{}}", "Models", name_w);
  for (auto c : kBenchCategories) out += fmt::format(" | {}", category_label(c));
  out += " | All\n";
  for (const auto& r : reports) {
    out += fmt::format("{:<{}}", r.label, name_w);
    for (auto c : kBenchCategories) {
      const auto w = category_label(c).size();
      const auto it = r.categories.find(c);
      out += it == r.categories.end() ? fmt::format(" | {:>{}}", "-", w) : fmt::format(" | {:>{}.2f}", it->second.score, w);
    }
    out += fmt::format(" | {:>.2f}\n", r.all.score);
  }
  return out;
}

BenchRun run_bench(ChatBackend& arbiter, const BenchPack& pack, const AnswerSet& answers,
                   const BenchRunOptions& options) {
  struct Slot {
    std::optional<std::string> reference;
    std::optional<VerdictPair> verdicts;
  };
  const auto& items = pack.items;
  std::vector<Slot> slots(items.size());
  parallel_for(items.size(), options.max_in_flight, [&](std::size_t i) {
    const auto answer = answers.find(items[i].id);
    if (answer == answers.end()) return;
    slots[i].reference = build_reference(arbiter, items[i], options.judge.max_attempts);
    try {
      slots[i].verdicts = judge(arbiter, items[i], answer->second, *slots[i].reference, options.judge);
    } catch (const ParseError&) {
    } catch (const ValidationError&) {
    }
  });

  BenchRun run;
  std::vector<std::string> quarantined;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (slots[i].reference) run.references[items[i].id] = *slots[i].reference;
    if (!slots[i].verdicts) {
      quarantined.push_back(items[i].id);
      continue;
    }
    const auto& v = *slots[i].verdicts;
    run.scored.push_back({items[i].id, items[i].category, relative_score(v.candidate, v.reference)});
    run.verdicts[items[i].id] = v;
  }
  run.report = aggregate(run.scored, options.label);
  std::sort(quarantined.begin(), quarantined.end());
  run.report.quarantined = std::move(quarantined);
  return run;
}

}  // namespace asmalign
