#include "asmalign/bcsd.hpp"

#include "asmalign/error.hpp"
#include "asmalign/hashing.hpp"
#include "asmalign/parallel.hpp"
#include "asmalign/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>

namespace asmalign {
namespace {

std::vector<std::string> feature_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || c == '_') {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

void add_feature(Embedding& v, std::string_view feature, double weight) {
  const std::uint64_t h = fnv1a64(feature);
  const double sign = ((h >> 40) & 1U) ? -1.0 : 1.0;
  v[h % v.size()] += sign * weight;
}

double norm(const Embedding& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Scales to unit length; false when the vector is zero or not finite.
bool normalize(Embedding& v) {
  const double n = norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) return false;
  for (double& x : v) x /= n;
  return true;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Removes every line of the template that the completion repeats verbatim.
std::string strip_echo(std::string text, std::string_view prompt_template) {
  std::string t(prompt_template);
  t.replace(t.find("{asm}"), 5, "\n");
  std::istringstream lines(t);
  for (std::string line; std::getline(lines, line);) {
    const auto part = trim(line);
    if (part.empty()) continue;
    for (auto pos = text.find(part); pos != std::string::npos; pos = text.find(part, pos)) text.erase(pos, part.size());
  }
  return text;
}

ordered_json size_map(const std::map<std::size_t, double>& m) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

ordered_json count_map(const std::map<std::size_t, std::size_t>& m) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

template <typename T>
std::map<std::size_t, T> parse_size_map(const ordered_json& j, std::string_view field) {
  if (!j.is_object()) throw SchemaError(fmt::format("bcsd report field '{}' must be an object", field));
  std::map<std::size_t, T> out;
  for (const auto& [k, v] : j.items()) out[std::stoul(k)] = v.template get<T>();
  return out;
}

ordered_json row_to_json(const MetricRow& row) {
  ordered_json j;
  j["recall_at_1"] = size_map(row.recall_at_1);
  j["mrr"] = size_map(row.mrr);
  j["pools"] = count_map(row.pools);
  return j;
}

MetricRow row_from_json(const ordered_json& j) {
  for (const char* field : {"recall_at_1", "mrr", "pools"}) {
    if (!j.contains(field)) throw SchemaError(fmt::format("bcsd report missing field '{}'", field));
  }
  MetricRow row;
  row.recall_at_1 = parse_size_map<double>(j["recall_at_1"], "recall_at_1");
  row.mrr = parse_size_map<double>(j["mrr"], "mrr");
  row.pools = parse_size_map<std::size_t>(j["pools"], "pools");
  return row;
}

}  // namespace

LocalHashEmbedder::LocalHashEmbedder(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw ValidationError("embedding dimension must be positive");
}

Embedding LocalHashEmbedder::embed_one(std::string_view text) const {
  Embedding v(dim_, 0.0);
  const auto words = feature_words(text);
  for (std::size_t i = 0; i < words.size(); ++i) {
    add_feature(v, "u:" + words[i], 1.0);
    if (i + 1 < words.size()) add_feature(v, "b:" + words[i] + " " + words[i + 1], 0.5);
  }
  if (!normalize(v)) {
    std::fill(v.begin(), v.end(), 0.0);
    v[0] = 1.0;
  }
  return v;
}

std::vector<Embedding> LocalHashEmbedder::embed(const std::vector<std::string>& texts) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_one(t));
  return out;
}

RemoteEmbedder::RemoteEmbedder(std::shared_ptr<JsonTransport> transport, std::string model, std::size_t batch_size,
                               int max_attempts)
    : transport_(std::move(transport)), model_(std::move(model)), batch_size_(std::max<std::size_t>(batch_size, 1)),
      max_attempts_(max_attempts) {}

std::vector<Embedding> RemoteEmbedder::embed(const std::vector<std::string>& texts) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (std::size_t begin = 0; begin < texts.size(); begin += batch_size_) {
    const std::size_t end = std::min(texts.size(), begin + batch_size_);
    nlohmann::json body;
    body["model"] = model_;
    body["input"] = std::vector<std::string>(texts.begin() + static_cast<std::ptrdiff_t>(begin),
                                             texts.begin() + static_cast<std::ptrdiff_t>(end));
    const auto response = with_retries(max_attempts_, [&](int attempt) {
      const auto r = transport_->post("/embeddings", body, attempt);
      if (!r.contains("data") || !r["data"].is_array() || r["data"].size() != end - begin) {
        throw BackendError("malformed embedding response");
      }
      return r;
    });
    for (const auto& item : response["data"]) {
      Embedding v;
      try {
        v = item.at("embedding").get<Embedding>();
      } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("malformed embedding response: ") + e.what());
      }
      if (dim_ == 0) dim_ = v.size();
      if (v.size() != dim_) throw BackendError(fmt::format("embedding of size {} where {} expected", v.size(), dim_));
      if (!normalize(v)) throw BackendError("zero or non-finite embedding");
      out.push_back(std::move(v));
    }
  }
  return out;
}

std::vector<Embedding> embed_texts(EmbeddingBackend& backend, const std::vector<std::string>& texts) {
  auto out = backend.embed(texts);
  if (out.size() != texts.size()) {
    throw BackendError(fmt::format("{} embeddings for {} texts", out.size(), texts.size()));
  }
  for (const auto& v : out) {
    if (std::abs(norm(v) - 1.0) > 1e-9) throw BackendError("embedding is not unit length");
  }
  return out;
}

double cosine(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) throw ShapeError(fmt::format("cosine of sizes {} and {}", a.size(), b.size()));
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  const double n = norm(a) * norm(b);
  return n > 0.0 ? dot / n : 0.0;
}

std::size_t count_tokens(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::size_t n = 0;
  for (std::string tok; in >> tok;) ++n;
  return n;
}

std::string truncate_description(std::string_view text, std::size_t l) {
  if (l == 0) throw ValidationError("truncation length must be at least 1");
  std::istringstream in{std::string(text)};
  std::string out;
  std::size_t n = 0;
  for (std::string tok; n < l && in >> tok; ++n) {
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

const std::string kDescribeTemplate =
    "Summarize what the following x86-64 assembly function does in one or two sentences. "
    "Name its purpose, inputs and effects.\n<code>\n{asm}\n</code>";

std::string template_id(std::string_view prompt_template) { return sha256_hex(prompt_template).substr(0, 16); }

void check_description_corpus(const DescriptionCorpus& corpus) {
  std::set<std::string> seen;
  for (const auto& r : corpus.records) {
    if (r.template_id != corpus.records.front().template_id) {
      throw ValidationError(fmt::format("description of {} used template {} but {} used {}", r.function_id,
                                        r.template_id, corpus.records.front().function_id,
                                        corpus.records.front().template_id));
    }
    if (!seen.insert(r.function_id).second) throw ValidationError("duplicate description for " + r.function_id);
  }
}

DescriptionCorpus describe_corpus(ChatBackend& client, const Corpus& corpus, const std::string& prompt_template,
                                  const DescribeOptions& options) {
  const auto slot = prompt_template.find("{asm}");
  if (slot == std::string::npos || prompt_template.find("{asm}", slot + 1) != std::string::npos) {
    throw ValidationError("description template needs exactly one {asm} slot");
  }
  if (options.truncation == 0) throw ValidationError("truncation length must be at least 1");
  const std::string tid = template_id(prompt_template);
  const auto& fns = corpus.functions();

  struct Slot {
    std::optional<DescriptionRecord> record;
    double cost = 0.0;
  };
  std::vector<Slot> slots(fns.size());
  parallel_for(fns.size(), options.max_in_flight, [&](std::size_t i) {
    std::string prompt = prompt_template;
    prompt.replace(slot, 5, render_instructions(fns[i]));
    const std::vector<ChatTurn> request{{ChatRole::user, prompt}};
    ChatCompletion completion;
    try {
      completion = with_retries(options.max_attempts, [&](int attempt) { return client.complete(request, attempt); });
    } catch (const BackendError&) {
      return;
    }
    slots[i].cost = completion.cost_usd;
    const std::string cleaned = strip_echo(completion.content, prompt_template);
    const std::size_t raw_len = count_tokens(cleaned);
    if (raw_len == 0) return;
    std::string text = truncate_description(cleaned, options.truncation);
    const std::size_t len = count_tokens(text);
    slots[i].record = DescriptionRecord{fns[i].id, std::move(text), len, raw_len, tid};
  });

  DescriptionCorpus out;
  out.generator = client.model_name();
  for (std::size_t i = 0; i < fns.size(); ++i) {
    out.cost_usd += slots[i].cost;
    if (slots[i].record) {
      out.records.push_back(std::move(*slots[i].record));
    } else {
      out.quarantined.push_back(fns[i].id);
    }
  }
  return out;
}

DescriptionCorpus descriptions_from_map(const std::map<std::string, std::string>& by_function, std::string generator,
                                        std::string_view source, std::size_t truncation) {
  DescriptionCorpus out;
  out.generator = std::move(generator);
  const std::string tid = template_id(source);
  for (const auto& [id, text] : by_function) {
    std::string t = truncate_description(text, truncation);
    const std::size_t len = count_tokens(t);
    out.records.push_back({id, std::move(t), len, count_tokens(text), tid});
  }
  return out;
}

std::string verbatim_code(const AsmFunction& fn) {
  std::string out;
  for (const auto& ins : fn.instructions) {
    if (!out.empty()) out.push_back('\n');
    out += ins.text;
  }
  return out;
}

std::string render_descriptions(const DescriptionCorpus& corpus) {
  check_description_corpus(corpus);
  JsonlDocument doc;
  doc.header["schema"] = "descriptions/v1";
  doc.header["generator"] = corpus.generator;
  doc.header["template_id"] = corpus.records.empty() ? "" : corpus.records.front().template_id;
  doc.header["cost_usd"] = corpus.cost_usd;
  doc.header["quarantined"] = corpus.quarantined;
  for (const auto& r : corpus.records) {
    ordered_json j;
    j["function_id"] = r.function_id;
    j["description"] = r.description;
    j["truncated_len"] = r.truncated_len;
    j["raw_len"] = r.raw_len;
    j["template_id"] = r.template_id;
    doc.records.push_back(std::move(j));
  }
  return render_jsonl(doc);
}

DescriptionCorpus parse_descriptions(std::string_view text) {
  const auto doc = parse_jsonl(text);
  require_schema(doc.header, "descriptions", 1);
  DescriptionCorpus out;
  try {
    out.generator = doc.header.at("generator").get<std::string>();
    out.cost_usd = doc.header.value("cost_usd", 0.0);
    out.quarantined = doc.header.value("quarantined", std::vector<std::string>{});
    for (const auto& r : doc.records) {
      out.records.push_back({r.at("function_id").get<std::string>(), r.at("description").get<std::string>(),
                             r.at("truncated_len").get<std::size_t>(), r.value("raw_len", std::size_t{0}),
                             r.at("template_id").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed descriptions file: ") + e.what());
  }
  check_description_corpus(out);
  if (!out.records.empty() && doc.header.value("template_id", std::string{}) != out.records.front().template_id) {
    throw ValidationError("description records do not match the header template");
  }
  return out;
}

void export_descriptions(const DescriptionCorpus& corpus, const std::filesystem::path& path) {
  write_text_file(path, render_descriptions(corpus));
}

DescriptionCorpus import_descriptions(const std::filesystem::path& path) {
  return parse_descriptions(read_text_file(path));
}

Pairing parse_pairing(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw ValidationError("pairing must look like O0:O3");
  return {parse_opt_level(text.substr(0, colon)), parse_opt_level(text.substr(colon + 1))};
}

std::string to_string(const Pairing& pairing) {
  return fmt::format("{}:{}", to_string(pairing.query), to_string(pairing.candidates));
}

std::vector<RetrievalPool> build_pools(const Corpus& corpus, const PoolConfig& config,
                                       const std::vector<std::string>& eligible) {
  std::vector<std::size_t> sizes = config.sizes;
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  if (sizes.empty() || sizes.front() == 0) throw ValidationError("pool sizes must be positive");
  const std::size_t max_size = sizes.back();
  const std::set<std::string> allowed(eligible.begin(), eligible.end());

  struct Group {
    std::vector<const AsmFunction*> queries;
    std::vector<const AsmFunction*> candidates;
  };
  std::map<std::string, Group> groups;
  for (const auto& fn : corpus.functions()) {
    if (!allowed.empty() && !allowed.count(fn.id)) continue;
    const std::string key = config.cross_project ? "*" : fn.project;
    if (fn.opt_level == config.pairing.query) groups[key].queries.push_back(&fn);
    if (fn.opt_level == config.pairing.candidates) groups[key].candidates.push_back(&fn);
  }

  std::vector<RetrievalPool> pools;
  for (const auto& [project, group] : groups) {
    std::unordered_map<std::string, std::size_t> by_source;
    for (std::size_t i = 0; i < group.candidates.size(); ++i) {
      if (!by_source.emplace(group.candidates[i]->source_key, i).second) {
        throw IntegrityError(fmt::format("source {} has two functions at {}", group.candidates[i]->source_key,
                                         to_string(config.pairing.candidates)));
      }
    }
    std::vector<std::pair<const AsmFunction*, std::size_t>> queries;  // query, ground-truth candidate index
    for (const auto* q : group.queries) {
      const auto it = by_source.find(q->source_key);
      if (it != by_source.end()) queries.emplace_back(q, it->second);
    }
    if (queries.empty()) continue;
    if (max_size > group.candidates.size()) {
      throw ValidationError(fmt::format("pool size {} exceeds the {} candidates available in project {}", max_size,
                                        group.candidates.size(), project));
    }
    if (config.n_queries != 0 && config.n_queries < queries.size()) {
      Rng rng(derive_seed(config.seed, fnv1a64("queries:" + project)));
      auto picked = rng.sample_without_replacement(queries.size(), config.n_queries);
      std::sort(picked.begin(), picked.end());
      std::vector<std::pair<const AsmFunction*, std::size_t>> kept;
      for (auto i : picked) kept.push_back(queries[i]);
      queries = std::move(kept);
    }

    std::vector<std::vector<std::string>> draws;
    for (const auto& [q, gt] : queries) {
      Rng rng(derive_seed(config.seed, fnv1a64("pool:" + q->id)));
      const auto picks = rng.sample_without_replacement(group.candidates.size() - 1, max_size - 1);
      std::vector<std::string> distractors;
      for (auto p : picks) distractors.push_back(group.candidates[p < gt ? p : p + 1]->id);
      draws.push_back(std::move(distractors));
    }
    for (auto size : sizes) {
      for (std::size_t i = 0; i < queries.size(); ++i) {
        RetrievalPool pool;
        pool.project = project;
        pool.pool_id = i;
        pool.query = queries[i].first->id;
        pool.ground_truth = group.candidates[queries[i].second]->id;
        pool.candidates.push_back(pool.ground_truth);
        pool.candidates.insert(pool.candidates.end(), draws[i].begin(),
                               draws[i].begin() + static_cast<std::ptrdiff_t>(size - 1));
        pools.push_back(std::move(pool));
      }
    }
  }
  if (pools.empty()) {
    throw ValidationError(fmt::format("no query at {} has a partner at {}", to_string(config.pairing.query),
                                      to_string(config.pairing.candidates)));
  }
  return pools;
}

std::size_t rank(const Embedding& query, const std::vector<Embedding>& candidates,
                 const std::vector<std::string>& candidate_ids, std::string_view ground_truth) {
  if (candidates.size() != candidate_ids.size()) throw ShapeError("candidate vectors and ids differ in length");
  const auto gt = std::find(candidate_ids.begin(), candidate_ids.end(), ground_truth);
  if (gt == candidate_ids.end()) throw ValidationError("ground truth " + std::string(ground_truth) + " not in pool");
  const auto g = static_cast<std::size_t>(gt - candidate_ids.begin());
  const double s_gt = cosine(query, candidates[g]);
  std::size_t r = 1;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    if (j == g) continue;
    const double s = cosine(query, candidates[j]);
    if (s > s_gt || (s == s_gt && candidate_ids[j] < candidate_ids[g])) ++r;
  }
  return r;
}

double recall_at_1(const std::vector<std::size_t>& ranks) {
  if (ranks.empty()) throw ValidationError("recall@1 of an empty rank list");
  std::size_t hits = 0;
  for (auto r : ranks) {
    if (r == 0) throw ValidationError("ranks are 1-based");
    hits += r == 1;
  }
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double mrr(const std::vector<std::size_t>& ranks) {
  if (ranks.empty()) throw ValidationError("MRR of an empty rank list");
  double sum = 0.0;
  for (auto r : ranks) {
    if (r == 0) throw ValidationError("ranks are 1-based");
    sum += 1.0 / static_cast<double>(r);
  }
  return sum / static_cast<double>(ranks.size());
}

BcsdReport run_bcsd(const Corpus& corpus, const DescriptionCorpus& descriptions, EmbeddingBackend& embedder,
                    const BcsdConfig& config) {
  check_description_corpus(descriptions);
  if (descriptions.records.empty()) throw ValidationError("no descriptions to evaluate");
  std::map<std::string, const DescriptionRecord*> by_id;
  std::vector<std::string> eligible;
  for (const auto& r : descriptions.records) {
    corpus.at(r.function_id);
    by_id[r.function_id] = &r;
    eligible.push_back(r.function_id);
  }
  const auto pools = build_pools(corpus, config.pools, eligible);

  std::set<std::string> needed;
  for (const auto& p : pools) {
    needed.insert(p.query);
    needed.insert(p.candidates.begin(), p.candidates.end());
  }
  const std::vector<std::string> ids(needed.begin(), needed.end());
  std::vector<std::string> texts;
  for (const auto& id : ids) texts.push_back(by_id.at(id)->description);
  const auto vectors = embed_texts(embedder, texts);
  std::unordered_map<std::string, const Embedding*> vec;
  for (std::size_t i = 0; i < ids.size(); ++i) vec[ids[i]] = &vectors[i];

  std::vector<std::size_t> ranks(pools.size());
  parallel_for(pools.size(), config.max_in_flight, [&](std::size_t i) {
    const auto& p = pools[i];
    std::vector<Embedding> cands;
    cands.reserve(p.size());
    for (const auto& c : p.candidates) cands.push_back(*vec.at(c));
    ranks[i] = rank(*vec.at(p.query), cands, p.candidates, p.ground_truth);
  });

  std::map<std::size_t, std::vector<std::size_t>> all;
  std::map<std::string, std::map<std::size_t, std::vector<std::size_t>>> by_project;
  for (std::size_t i = 0; i < pools.size(); ++i) {
    all[pools[i].size()].push_back(ranks[i]);
    by_project[pools[i].project][pools[i].size()].push_back(ranks[i]);
  }
  const auto fill = [](MetricRow& row, const std::map<std::size_t, std::vector<std::size_t>>& groups) {
    for (const auto& [size, rs] : groups) {
      row.recall_at_1[size] = recall_at_1(rs);
      row.mrr[size] = mrr(rs);
      row.pools[size] = rs.size();
    }
  };

  BcsdReport report;
  report.label = config.label;
  for (const auto& [size, rs] : all) report.sizes.push_back(size);
  fill(report.overall, all);
  for (const auto& [project, groups] : by_project) fill(report.per_project[project], groups);
  double total = 0.0;
  for (const auto& r : descriptions.records) total += static_cast<double>(r.raw_len);
  report.avg_len = total / static_cast<double>(descriptions.records.size());
  return report;
}

ordered_json bcsd_report_to_json(const BcsdReport& report) {
  ordered_json j;
  j["schema"] = "bcsd-report/v1";
  j["label"] = report.label;
  j["sizes"] = report.sizes;
  j["recall_at_1"] = size_map(report.overall.recall_at_1);
  j["mrr"] = size_map(report.overall.mrr);
  j["pools"] = count_map(report.overall.pools);
  j["avg_len"] = report.avg_len;
  ordered_json per = ordered_json::object();
  for (const auto& [project, row] : report.per_project) per[project] = row_to_json(row);
  j["per_project"] = std::move(per);
  return j;
}

BcsdReport bcsd_report_from_json(const ordered_json& j) {
  require_schema(j, "bcsd-report", 1);
  for (const char* field : {"label", "sizes", "avg_len", "per_project"}) {
    if (!j.contains(field)) throw SchemaError(fmt::format("bcsd report missing field '{}'", field));
  }
  BcsdReport r;
  try {
    r.label = j["label"].get<std::string>();
    r.sizes = j["sizes"].get<std::vector<std::size_t>>();
    r.overall = row_from_json(j);
    r.avg_len = j["avg_len"].get<double>();
    for (const auto& [project, row] : j["per_project"].items()) r.per_project[project] = row_from_json(row);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed bcsd report: ") + e.what());
  }
  return r;
}

std::string render_bcsd_table(const BcsdReport& report) {
  if (report.sizes.empty()) throw ValidationError("bcsd report has no pool sizes");
  const std::size_t largest = report.sizes.back();
  std::size_t name_w = std::string_view("Project").size();
  for (const auto& [p, row] : report.per_project) name_w = std::max(name_w, p.size());

  std::string out = fmt::format("{:<{}}", "Project", name_w);
  for (auto s : report.sizes) out += fmt::format("  {:>8}", fmt::format("R@1({})", s));
  out += fmt::format("  {:>10}\n", fmt::format("MRR({})", largest));
  const auto line = [&](std::string_view name, const MetricRow& row) {
    out += fmt::format("{:<{}}", name, name_w);
    for (auto s : report.sizes) {
      const auto it = row.recall_at_1.find(s);
      out += it == row.recall_at_1.end() ? fmt::format("  {:>8}", "-") : fmt::format("  {:>8.3f}", it->second);
    }
    const auto it = row.mrr.find(largest);
    out += it == row.mrr.end() ? fmt::format("  {:>10}\n", "-") : fmt::format("  {:>10.3f}\n", it->second);
  };
  for (const auto& [p, row] : report.per_project) line(p, row);
  line("All", report.overall);
  out += fmt::format("avg description length: {:.2f} tokens\n", report.avg_len);
  return out;
}

}  // namespace asmalign
