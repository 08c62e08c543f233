#pragma once

#include "asmalign/backend.hpp"
#include "asmalign/jsonl.hpp"

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace asmalign {

enum class BenchCategory { conversation, detail_description, complex_reasoning };

inline constexpr std::array<BenchCategory, 3> kBenchCategories = {
    BenchCategory::conversation, BenchCategory::detail_description, BenchCategory::complex_reasoning};

std::string_view to_string(BenchCategory category);
BenchCategory parse_bench_category(std::string_view text);
// Column label: "Conversation", "Detail description", "Complex reasoning".
std::string_view category_label(BenchCategory category);

struct BenchItem {
  std::string id;
  std::string function_id;
  BenchCategory category = BenchCategory::conversation;
  std::vector<std::string> questions;
  std::string ground_truth_description;
  // Instruction texts of the snippet, when the pack ships them.
  std::vector<std::string> code;

  bool operator==(const BenchItem&) const = default;
};

struct BenchPack {
  std::string name;
  std::vector<BenchItem> items;

  bool operator==(const BenchPack&) const = default;
};

inline constexpr std::size_t kQuestionsPerSnippet = 3;

// Snippets whose item count differs from kQuestionsPerSnippet, one message each.
std::vector<std::string> pack_warnings(const BenchPack& pack);

std::string render_bench_pack(const BenchPack& pack);
// Throws SchemaError on a malformed pack and IntegrityError on duplicate ids.
BenchPack parse_bench_pack(std::string_view text);
void save_bench_pack(const BenchPack& pack, const std::filesystem::path& path);
BenchPack load_bench_pack(const std::filesystem::path& path);

// item id -> candidate answer ("answers/v1").
using AnswerSet = std::map<std::string, std::string>;
std::string render_answers(const AnswerSet& answers, std::string_view model);
AnswerSet parse_answers(std::string_view text);

inline constexpr std::size_t kJudgeDims = 5;
inline constexpr std::array<std::string_view, kJudgeDims> kJudgeDimNames = {
    "helpfulness", "relevance", "accuracy", "detail", "comprehensiveness"};

struct JudgeVerdict {
  std::string item_id;
  // Averages over trials; every single trial score is an integer in [1, 10].
  std::array<double, kJudgeDims> dims{};
  std::string rationale;

  bool operator==(const JudgeVerdict&) const = default;
};

struct VerdictPair {
  JudgeVerdict reference;
  JudgeVerdict candidate;
};

inline constexpr std::string_view kJudgeTemplateVersion = "judge/v1";

std::vector<ChatTurn> reference_prompt(const BenchItem& item);
std::vector<ChatTurn> judge_prompt(const BenchItem& item, std::string_view reference, std::string_view candidate);

// Reads "a b c d e / f g h i j" from the first line holding a '/'; the
// reference's scores come first. Throws ParseError when absent or out of range.
std::pair<std::array<int, kJudgeDims>, std::array<int, kJudgeDims>> parse_verdict_line(std::string_view text);

// Reference answer from the ground-truth description and the question only.
// Throws ValidationError when the description is missing.
std::string build_reference(ChatBackend& client, const BenchItem& item, int max_attempts = 3);

struct JudgeOptions {
  int trials = 3;
  // Completions requested per trial before the verdict counts as unparseable.
  int parse_attempts = 3;
  int max_attempts = 3;
};

// Averages `trials` independent verdicts. Throws ValidationError for empty
// answers and ParseError when a trial never yields a parseable verdict.
VerdictPair judge(ChatBackend& client, const BenchItem& item, std::string_view candidate,
                  std::string_view reference, const JudgeOptions& options = {});

// 100 * mean(candidate dims) / mean(reference dims).
double relative_score(const JudgeVerdict& candidate, const JudgeVerdict& reference);

inline constexpr std::string_view kScoreFormula = "100 * mean(candidate dims) / mean(reference dims)";

struct ScoredItem {
  std::string item_id;
  BenchCategory category = BenchCategory::conversation;
  double score = 0.0;
};

struct CategoryScore {
  double score = 0.0;
  std::size_t items = 0;
};

struct BenchReport {
  std::string label;
  std::map<BenchCategory, CategoryScore> categories;
  CategoryScore all;
  std::vector<std::string> quarantined;
};

// Item-weighted means per category and over all items. Throws ValidationError when empty.
BenchReport aggregate(std::vector<ScoredItem> items, std::string label = "run");

ordered_json bench_report_to_json(const BenchReport& report);
BenchReport bench_report_from_json(const ordered_json& j);
// One row per report under "Conversation  Detail description  Complex reasoning  All".
std::string render_bench_table(const std::vector<BenchReport>& reports);

struct BenchRunOptions {
  JudgeOptions judge;
  std::size_t max_in_flight = 4;
  std::string label = "run";
};

struct BenchRun {
  BenchReport report;
  std::vector<ScoredItem> scored;
  std::map<std::string, VerdictPair> verdicts;
  std::map<std::string, std::string> references;
};

/// References, judging and aggregation over a pack. Items without a
/// candidate answer, or whose verdict never parses, are quarantined.
BenchRun run_bench(ChatBackend& arbiter, const BenchPack& pack, const AnswerSet& answers,
                   const BenchRunOptions& options = {});

}  // namespace asmalign
