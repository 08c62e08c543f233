#pragma once

#include "asmalign/backend.hpp"
#include "asmalign/ingest.hpp"
#include "asmalign/rng.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace asmalign {

enum class TaskType { simp, detail, conv, reason };

inline constexpr std::array<TaskType, 4> kAllTasks = {TaskType::simp, TaskType::detail, TaskType::conv,
                                                      TaskType::reason};

std::string_view to_string(TaskType task);
TaskType parse_task_type(std::string_view text);
// Parses a comma separated task list such as "simp,detail".
std::vector<TaskType> parse_task_list(std::string_view text);

// Pre-training (D1) data holds simp only; fine-tuning (D2) data the rest.
bool is_pretrain_task(TaskType task);

struct TaskTemplates {
  std::string system_message;
  std::vector<std::string> user_prompts;
  // Exemplar blocks prepended to the system message. Empty by default.
  std::vector<std::string> few_shot;
};

class TemplateBank {
 public:
  // The shipped prompt banks: 11 simp prompts, 16 detail prompts, and the
  // shared conversation/reasoning prompt with {asm} and {description} slots.
  static TemplateBank defaults();

  const TaskTemplates& at(TaskType task) const;
  void set(TaskType task, TaskTemplates templates);

  // System message with any few-shot blocks prepended.
  std::string system_message(TaskType task) const;

 private:
  std::map<TaskType, TaskTemplates> banks_;
};

struct TemplateChoice {
  std::size_t index = 0;
  std::string prompt;
};

// Draws a user prompt uniformly at random. Throws ValidationError for an empty bank.
TemplateChoice select_template(const TemplateBank& bank, TaskType task, Rng& rng);

/// Builds the [system, user] request for one generation call.
///
/// A prompt containing "{asm}" is filled in place ("{description}" likewise);
/// otherwise the listing is appended as "<code>...</code>" followed by the
/// description sentence when one is given. simp takes no description, the
/// other tasks require one.
std::vector<ChatTurn> build_prompt(TaskType task, std::string_view user_prompt, std::string_view system,
                                   const AsmFunction& code, const std::optional<std::string>& description);

struct Round {
  std::string question;
  std::string answer;

  bool operator==(const Round&) const = default;
};

// Extracts "User:" / "AI:" rounds. Continuation lines are folded into the
// current utterance with single spaces so every answer is one line.
std::vector<Round> parse_conversation(std::string_view raw);
std::string render_conversation(const std::vector<Round>& rounds);

struct Provenance {
  std::string backend_model;
  std::size_t template_index = 0;
  double cost_usd = 0.0;

  bool operator==(const Provenance&) const = default;
};

struct InstructionSample {
  std::string id;
  std::string function_id;
  TaskType task = TaskType::simp;
  std::vector<ChatTurn> turns;
  Provenance provenance;

  bool operator==(const InstructionSample&) const = default;

  // (question, answer) pairs in order.
  std::vector<Round> rounds() const;
};

std::string sample_id(std::string_view function_id, TaskType task);

// Throws ValidationError when the sample breaks a structural rule
// (role alternation, conv round minimum, single-line simp answer, ...).
void validate_sample(const InstructionSample& sample, std::size_t min_conv_rounds = 3);

struct RejectedSample {
  std::string function_id;
  TaskType task = TaskType::simp;
  std::string reason;
  std::string raw;
  double cost_usd = 0.0;
};

using GenerationResult = std::variant<InstructionSample, RejectedSample>;

struct GenerationOptions {
  int max_attempts = 3;
  std::size_t min_conv_rounds = 3;
};

/// One generation call: template draw, prompt, completion, parse, validate.
/// Backend failures surviving the retry budget propagate as BackendError;
/// malformed completions come back as RejectedSample.
GenerationResult generate_sample(ChatBackend& client, const AsmFunction& fn, TaskType task,
                                 const TemplateBank& bank, Rng& rng,
                                 const std::optional<std::string>& description = std::nullopt,
                                 const GenerationOptions& options = {});

struct Dataset {
  std::string name;
  std::vector<InstructionSample> samples;

  std::map<TaskType, std::size_t> task_counts() const;
  bool operator==(const Dataset&) const = default;
};

Dataset assemble_d1(const Corpus& corpus, std::vector<InstructionSample> samples);
Dataset assemble_d2(const Corpus& corpus, std::vector<InstructionSample> samples);

std::string render_dataset(const Dataset& dataset);
Dataset parse_dataset(std::string_view text);
void export_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset import_dataset(const std::filesystem::path& path);

std::string render_rejections(const std::vector<RejectedSample>& rejected);

enum class CostCategory { simp, reason, conv, detail, bcsd };

std::string_view to_string(CostCategory category);
CostCategory parse_cost_category(std::string_view text);
CostCategory cost_category(TaskType task);

struct CostEntry {
  CostCategory category = CostCategory::simp;
  double usd = 0.0;
};

struct CostLedger {
  std::vector<CostEntry> entries;

  void add(CostCategory category, double usd);
};

struct CostLine {
  CostCategory category = CostCategory::simp;
  double usd = 0.0;
  double percent = 0.0;
};

struct CostReport {
  double total = 0.0;
  std::vector<CostLine> lines;  // categories present in the ledger, fixed order
};

CostReport cost_report(const CostLedger& ledger);
std::string render_cost_table(const CostReport& report);

nlohmann::ordered_json ledger_to_json(const CostLedger& ledger);
CostLedger ledger_from_json(const nlohmann::json& j);

struct GenerationConfig {
  std::vector<TaskType> tasks{kAllTasks.begin(), kAllTasks.end()};
  std::uint64_t seed = 0;
  std::size_t max_in_flight = 4;
  GenerationOptions options;
};

struct GenerationRun {
  Dataset d1;
  Dataset d2;
  std::vector<RejectedSample> rejected;
  CostLedger ledger;
};

/// Generates D1/D2 for a whole corpus. simp runs first; its accepted answer is
/// the description fed to detail/conv/reason for the same function. Template
/// draws are seeded per (function, task), so results do not depend on request
/// scheduling.
GenerationRun run_generation(ChatBackend& client, const Corpus& corpus, const TemplateBank& bank,
                             const GenerationConfig& config);

}  // namespace asmalign
