#pragma once

#include "asmalign/backend.hpp"
#include "asmalign/ingest.hpp"
#include "asmalign/jsonl.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace asmalign {

using Embedding = std::vector<double>;

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  // One unit vector per text, in order.
  virtual std::vector<Embedding> embed(const std::vector<std::string>& texts) = 0;
  virtual std::size_t dim() const = 0;
  virtual std::string name() const = 0;
};

// Signed feature hashing of lowercased word unigrams and bigrams. Needs no
// network. Text without features maps to the first basis vector.
class LocalHashEmbedder final : public EmbeddingBackend {
 public:
  explicit LocalHashEmbedder(std::size_t dim = 1024);

  std::vector<Embedding> embed(const std::vector<std::string>& texts) override;
  std::size_t dim() const override { return dim_; }
  std::string name() const override { return "local_hash"; }

  Embedding embed_one(std::string_view text) const;

 private:
  std::size_t dim_;
};

// POST /embeddings {"model","input":[texts]} -> {"data":[{"embedding":[...]}]}.
// Returned vectors are renormalized; a zero or ragged response is a BackendError.
class RemoteEmbedder final : public EmbeddingBackend {
 public:
  RemoteEmbedder(std::shared_ptr<JsonTransport> transport, std::string model, std::size_t batch_size = 64,
                 int max_attempts = 3);

  std::vector<Embedding> embed(const std::vector<std::string>& texts) override;
  std::size_t dim() const override { return dim_; }
  std::string name() const override { return model_; }

 private:
  std::shared_ptr<JsonTransport> transport_;
  std::string model_;
  std::size_t batch_size_;
  int max_attempts_;
  std::size_t dim_ = 0;
};

// Embeds and checks every vector has unit norm (1e-9). Throws BackendError otherwise.
std::vector<Embedding> embed_texts(EmbeddingBackend& backend, const std::vector<std::string>& texts);

double cosine(const Embedding& a, const Embedding& b);

// First min(l, n) whitespace tokens joined by single spaces. l must be >= 1.
std::string truncate_description(std::string_view text, std::size_t l = 64);
std::size_t count_tokens(std::string_view text);

inline constexpr std::size_t kDefaultTruncation = 64;

// The single description prompt used for every function in a retrieval corpus.
extern const std::string kDescribeTemplate;

struct DescriptionRecord {
  std::string function_id;
  std::string description;
  std::size_t truncated_len = 0;
  // Whitespace tokens before truncation; feeds the average-length column.
  std::size_t raw_len = 0;
  // Short hash of the prompt template. All records of a corpus must agree.
  std::string template_id;

  bool operator==(const DescriptionRecord&) const = default;
};

std::string template_id(std::string_view prompt_template);

struct DescriptionCorpus {
  std::string generator;  // model or source that produced the descriptions
  std::vector<DescriptionRecord> records;
  std::vector<std::string> quarantined;  // function ids without a description
  double cost_usd = 0.0;

  bool operator==(const DescriptionCorpus&) const = default;
};

// Throws ValidationError when records disagree on template_id or repeat a function.
void check_description_corpus(const DescriptionCorpus& corpus);

struct DescribeOptions {
  std::size_t truncation = kDefaultTruncation;
  std::size_t max_in_flight = 4;
  int max_attempts = 3;
};

/// Asks the chat backend for one description per function with a single
/// template containing "{asm}". Records are stored truncated, and any echo
/// of the template text is stripped so the prompt never leaks into the
/// retrieval corpus. Functions whose calls keep failing are quarantined.
DescriptionCorpus describe_corpus(ChatBackend& client, const Corpus& corpus,
                                  const std::string& prompt_template = kDescribeTemplate,
                                  const DescribeOptions& options = {});

// Descriptions from any other source (a trained model, verbatim code, ...),
// truncated and stamped with `source` as the template id.
DescriptionCorpus descriptions_from_map(const std::map<std::string, std::string>& by_function,
                                        std::string generator, std::string_view source,
                                        std::size_t truncation = kDefaultTruncation);

// Listing text without indices, one instruction after another.
std::string verbatim_code(const AsmFunction& fn);

std::string render_descriptions(const DescriptionCorpus& corpus);
DescriptionCorpus parse_descriptions(std::string_view text);
void export_descriptions(const DescriptionCorpus& corpus, const std::filesystem::path& path);
DescriptionCorpus import_descriptions(const std::filesystem::path& path);

struct RetrievalPool {
  std::string project;  // query's project; "*" in cross-project mode
  std::size_t pool_id = 0;
  std::string query;
  std::vector<std::string> candidates;
  std::string ground_truth;

  std::size_t size() const { return candidates.size(); }
};

struct Pairing {
  OptLevel query = OptLevel::O0;
  OptLevel candidates = OptLevel::O3;
};

// "O0:O3"
Pairing parse_pairing(std::string_view text);
std::string to_string(const Pairing& pairing);

struct PoolConfig {
  std::vector<std::size_t> sizes{32, 50, 100, 200, 300, 500};
  Pairing pairing;
  // Queries per project (all projects together in cross-project mode); 0 takes every eligible query.
  std::size_t n_queries = 0;
  std::uint64_t seed = 0;
  bool cross_project = false;
};

/// Builds pools ordered by (project, size, pool id). Each query gets one
/// seeded draw of distractors and pools of every size take a prefix of it,
/// so a larger pool always contains the smaller ones. Only functions present
/// in `eligible` (when non-empty) take part. Throws ValidationError when a
/// size exceeds the available candidates.
std::vector<RetrievalPool> build_pools(const Corpus& corpus, const PoolConfig& config,
                                       const std::vector<std::string>& eligible = {});

// 1-based position of the ground truth after sorting by descending cosine,
// ties broken by ascending id. Throws ValidationError if it is absent.
std::size_t rank(const Embedding& query, const std::vector<Embedding>& candidates,
                 const std::vector<std::string>& candidate_ids, std::string_view ground_truth);

double recall_at_1(const std::vector<std::size_t>& ranks);
double mrr(const std::vector<std::size_t>& ranks);

struct MetricRow {
  std::map<std::size_t, double> recall_at_1;
  std::map<std::size_t, double> mrr;
  std::map<std::size_t, std::size_t> pools;
};

struct BcsdReport {
  std::string label;
  std::vector<std::size_t> sizes;
  MetricRow overall;
  std::map<std::string, MetricRow> per_project;
  double avg_len = 0.0;
};

struct BcsdConfig {
  PoolConfig pools;
  std::string label = "run";
  std::size_t max_in_flight = 4;
};

// Pools over the described functions, embedding, ranking and metrics.
BcsdReport run_bcsd(const Corpus& corpus, const DescriptionCorpus& descriptions, EmbeddingBackend& embedder,
                    const BcsdConfig& config);

ordered_json bcsd_report_to_json(const BcsdReport& report);
BcsdReport bcsd_report_from_json(const ordered_json& j);
// Per-project rows with recall@1 per size and MRR at the largest size.
std::string render_bcsd_table(const BcsdReport& report);

}  // namespace asmalign
