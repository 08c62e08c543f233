#include "asmalign/ingest.hpp"

#include "asmalign/error.hpp"
#include "asmalign/jsonl.hpp"
#include "asmalign/rng.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>

namespace asmalign {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::optional<std::uint64_t> parse_address(std::string_view s, ListingFormat format) {
  if (s.empty()) return std::nullopt;
  int base = 10;
  if (format == ListingFormat::addressed) {
    base = 16;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) s.remove_prefix(2);
  }
  std::uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value, base);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

struct PendingHeader {
  std::optional<std::string> project, name, source, id;
  std::optional<OptLevel> opt;
  std::size_t line = 0;
};

PendingHeader parse_header(std::string_view body, std::size_t line_no) {
  PendingHeader h;
  h.line = line_no;
  std::size_t pos = 0;
  while (pos < body.size()) {
    while (pos < body.size() && std::isspace(static_cast<unsigned char>(body[pos]))) ++pos;
    if (pos >= body.size()) break;
    std::size_t end = pos;
    while (end < body.size() && !std::isspace(static_cast<unsigned char>(body[end]))) ++end;
    const std::string_view field = body.substr(pos, end - pos);
    pos = end;
    const auto eq = field.find('=');
    if (eq == std::string_view::npos || eq == 0 || eq + 1 == field.size()) {
      throw ParseError(line_no, "malformed header field '" + std::string(field) + "'");
    }
    const std::string_view key = field.substr(0, eq);
    const std::string value(field.substr(eq + 1));
    if (key == "project") {
      h.project = value;
    } else if (key == "name") {
      h.name = value;
    } else if (key == "source") {
      h.source = value;
    } else if (key == "id") {
      h.id = value;
    } else if (key == "opt") {
      try {
        h.opt = parse_opt_level(value);
      } catch (const Error& e) {
        throw ParseError(line_no, e.what());
      }
    } else {
      throw ParseError(line_no, "unknown header key '" + std::string(key) + "'");
    }
  }
  return h;
}

}  // namespace

std::string_view to_string(OptLevel level) {
  switch (level) {
    case OptLevel::O0: return "O0";
    case OptLevel::O1: return "O1";
    case OptLevel::O2: return "O2";
    case OptLevel::O3: return "O3";
  }
  return "O0";
}

OptLevel parse_opt_level(std::string_view text) {
  if (text == "O0") return OptLevel::O0;
  if (text == "O1") return OptLevel::O1;
  if (text == "O2") return OptLevel::O2;
  if (text == "O3") return OptLevel::O3;
  throw ValidationError("unknown optimization level '" + std::string(text) + "'");
}

ListingFormat parse_listing_format(std::string_view text) {
  if (text == "indexed") return ListingFormat::indexed;
  if (text == "addressed") return ListingFormat::addressed;
  throw ValidationError("unknown listing format '" + std::string(text) + "'");
}

std::vector<AsmFunction> parse_listing(std::string_view text, ListingFormat format,
                                       const ListingDefaults& defaults) {
  std::vector<AsmFunction> out;
  PendingHeader header;
  bool have_header = false;
  std::vector<AsmInstruction> body;

  auto flush = [&]() {
    if (body.empty()) {
      if (have_header) throw ParseError(header.line, "function header without instructions");
      return;
    }
    const std::size_t ordinal = out.size();
    AsmFunction fn;
    fn.project = header.project.value_or(defaults.project);
    fn.function_name = header.name;
    fn.opt_level = header.opt.value_or(defaults.opt_level);
    const std::string stem = header.name.value_or("f" + std::to_string(ordinal));
    fn.source_key = header.source.value_or(fn.project + "/" + stem);
    fn.id = header.id.value_or(fn.project + "/" + stem + "/" + std::string(to_string(fn.opt_level)));
    fn.instructions = std::move(body);
    out.push_back(std::move(fn));
    body.clear();
    header = PendingHeader{};
    have_header = false;
  };

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;

    if (line.empty()) {
      if (!body.empty()) flush();
      continue;
    }
    if (line[0] == '#' || line == "...") continue;
    if (line.rfind("FUNC ", 0) == 0 || line == "FUNC") {
      flush();
      header = parse_header(line.substr(4), line_no);
      have_header = true;
      continue;
    }
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) {
      throw ParseError(line_no, "expected '<address>: <instruction>' or a FUNC header");
    }
    const auto address = parse_address(trim(line.substr(0, colon)), format);
    if (!address) {
      throw ParseError(line_no, "malformed address '" + std::string(trim(line.substr(0, colon))) + "'");
    }
    const std::string_view instr = trim(line.substr(colon + 1));
    if (instr.empty()) throw ParseError(line_no, "empty instruction text");
    AsmInstruction ins;
    ins.index = body.size();
    ins.text = std::string(instr);
    ins.raw_address = *address;
    body.push_back(std::move(ins));
  }
  flush();
  return out;
}

AsmFunction renumber_addresses(AsmFunction fn) {
  for (std::size_t i = 1; i < fn.instructions.size(); ++i) {
    const auto& prev = fn.instructions[i - 1].raw_address;
    const auto& cur = fn.instructions[i].raw_address;
    if (prev && cur && *cur <= *prev) {
      throw IntegrityError("function " + fn.id + ": non-increasing addresses at instructions " +
                           std::to_string(i - 1) + " (" + std::to_string(*prev) + ") and " +
                           std::to_string(i) + " (" + std::to_string(*cur) + ")");
    }
  }
  for (std::size_t i = 0; i < fn.instructions.size(); ++i) {
    fn.instructions[i].index = i;
    fn.instructions[i].raw_address.reset();
  }
  return fn;
}

std::vector<AsmFunction> ingest_listing(std::string_view text, ListingFormat format,
                                        const ListingDefaults& defaults) {
  auto functions = parse_listing(text, format, defaults);
  for (auto& fn : functions) fn = renumber_addresses(std::move(fn));
  return functions;
}

std::string render_instructions(const AsmFunction& fn) {
  std::string out;
  for (const auto& ins : fn.instructions) {
    if (!out.empty()) out.push_back('\n');
    out += std::to_string(ins.index);
    out += ": ";
    out += ins.text;
  }
  return out;
}

std::string render_listing(const std::vector<AsmFunction>& functions) {
  std::string out;
  for (const auto& fn : functions) {
    if (!out.empty()) out.push_back('\n');
    out += "FUNC project=" + fn.project;
    if (fn.function_name) out += " name=" + *fn.function_name;
    out += " opt=" + std::string(to_string(fn.opt_level));
    out += " source=" + fn.source_key;
    out += " id=" + fn.id + "\n";
    out += render_instructions(fn);
    out.push_back('\n');
  }
  return out;
}

Corpus::Corpus(std::vector<AsmFunction> functions) : functions_(std::move(functions)) {
  for (std::size_t i = 0; i < functions_.size(); ++i) {
    const auto& fn = functions_[i];
    if (!by_id_.emplace(fn.id, i).second) throw IntegrityError("duplicate function id " + fn.id);
    for (std::size_t k = 0; k < fn.instructions.size(); ++k) {
      const auto& ins = fn.instructions[k];
      if (ins.index != k) {
        throw IntegrityError("function " + fn.id + ": instruction " + std::to_string(k) +
                             " has index " + std::to_string(ins.index));
      }
      if (ins.text.empty() || ins.text.find('\n') != std::string::npos) {
        throw IntegrityError("function " + fn.id + ": instruction " + std::to_string(k) +
                             " text is empty or multi-line");
      }
    }
    ++manifest_.projects[fn.project].count;
  }
  manifest_.total = functions_.size();
  for (auto& [name, share] : manifest_.projects) {
    share.proportion = static_cast<double>(share.count) / static_cast<double>(manifest_.total);
  }
}

const AsmFunction* Corpus::find(std::string_view id) const {
  const auto it = by_id_.find(std::string(id));
  return it == by_id_.end() ? nullptr : &functions_[it->second];
}

const AsmFunction& Corpus::at(std::string_view id) const {
  const auto* fn = find(id);
  if (!fn) throw IntegrityError("unknown function id " + std::string(id));
  return *fn;
}

Corpus filter_min_length(const Corpus& corpus, std::size_t min_len) {
  if (min_len < 1) throw ValidationError("min_len must be >= 1");
  std::vector<AsmFunction> kept;
  for (const auto& fn : corpus.functions()) {
    if (fn.instructions.size() >= min_len) kept.push_back(fn);
  }
  return Corpus(std::move(kept));
}

Corpus balance_sample(const Corpus& corpus, std::size_t per_project_cap, std::uint64_t seed) {
  if (per_project_cap < 1) throw ValidationError("per_project_cap must be >= 1");
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < corpus.functions().size(); ++i) {
    members[corpus.functions()[i].project].push_back(i);
  }
  Rng rng(seed);
  std::set<std::size_t> chosen;
  for (const auto& [project, idx] : members) {
    if (idx.size() <= per_project_cap) {
      chosen.insert(idx.begin(), idx.end());
      continue;
    }
    for (std::size_t pick : rng.sample_without_replacement(idx.size(), per_project_cap)) {
      chosen.insert(idx[pick]);
    }
  }
  std::vector<AsmFunction> kept;
  kept.reserve(chosen.size());
  for (std::size_t i : chosen) kept.push_back(corpus.functions()[i]);
  return Corpus(std::move(kept));
}

namespace {

ordered_json function_to_json(const AsmFunction& fn) {
  ordered_json j;
  j["id"] = fn.id;
  j["project"] = fn.project;
  j["function_name"] = fn.function_name ? ordered_json(*fn.function_name) : ordered_json(nullptr);
  j["opt_level"] = std::string(to_string(fn.opt_level));
  j["arch"] = fn.arch;
  j["source_key"] = fn.source_key;
  ordered_json ins = ordered_json::array();
  for (const auto& i : fn.instructions) {
    ordered_json e;
    e["index"] = i.index;
    e["text"] = i.text;
    ins.push_back(std::move(e));
  }
  j["instructions"] = std::move(ins);
  return j;
}

AsmFunction function_from_json(const ordered_json& j) {
  try {
    AsmFunction fn;
    fn.id = j.at("id").get<std::string>();
    fn.project = j.at("project").get<std::string>();
    const auto& name = j.at("function_name");
    if (!name.is_null()) fn.function_name = name.get<std::string>();
    fn.opt_level = parse_opt_level(j.at("opt_level").get<std::string>());
    fn.arch = j.at("arch").get<std::string>();
    if (fn.arch != kArchX86_64) throw SchemaError("unsupported arch " + fn.arch);
    fn.source_key = j.at("source_key").get<std::string>();
    for (const auto& e : j.at("instructions")) {
      AsmInstruction ins;
      ins.index = e.at("index").get<std::size_t>();
      ins.text = e.at("text").get<std::string>();
      fn.instructions.push_back(std::move(ins));
    }
    return fn;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed corpus record: ") + e.what());
  }
}

}  // namespace

std::string render_corpus(const Corpus& corpus) {
  JsonlDocument doc;
  doc.header["schema"] = "corpus/v1";
  doc.header["count"] = corpus.size();
  for (const auto& fn : corpus.functions()) doc.records.push_back(function_to_json(fn));
  return render_jsonl(doc);
}

Corpus parse_corpus(std::string_view text) {
  const auto doc = parse_jsonl(text);
  require_schema(doc.header, "corpus", 1);
  if (!doc.header.contains("count") || doc.header["count"].get<std::size_t>() != doc.records.size()) {
    throw SchemaError("corpus header count does not match record count");
  }
  std::vector<AsmFunction> functions;
  functions.reserve(doc.records.size());
  for (const auto& r : doc.records) functions.push_back(function_from_json(r));
  return Corpus(std::move(functions));
}

void export_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  write_text_file(path, render_corpus(corpus));
}

Corpus import_corpus(const std::filesystem::path& path) { return parse_corpus(read_text_file(path)); }

}  // namespace asmalign
