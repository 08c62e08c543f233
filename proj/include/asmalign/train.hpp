#pragma once

#include "asmalign/datagen.hpp"
#include "asmalign/jsonl.hpp"
#include "asmalign/model.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace asmalign {

struct TrainConfig {
  Stage stage = Stage::pretrain;
  double lr = 2e-3;
  std::size_t steps = 100;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  // Rescales the gradient to this global L2 norm when exceeded; 0 disables.
  double clip_norm = 0.0;

  // lr 2e-3 for pre-training, 2e-5 for fine-tuning.
  static TrainConfig defaults(Stage stage);
};

struct TrainResult {
  // Batch loss before each update.
  std::vector<double> loss_curve;
};

// Samples are turned into sequences with the code of their function taken
// from `corpus`. Throws ValidationError on an empty dataset, a stage/task
// mismatch (stage 1 takes simp only, stage 2 everything else) or a
// config stage that disagrees with the function called.
TrainResult train_stage1(Model& model, const Corpus& corpus, const Dataset& d1, const TrainConfig& cfg);
TrainResult train_stage2(Model& model, const Corpus& corpus, const Dataset& d2, const TrainConfig& cfg);

// Base language-model pass standing in for a pretrained decoder. Code slots
// hold the mean token embedding of each instruction's text (no encoder, no
// projector), so the decoder learns to read listings before any alignment.
// Only decoder parameters change; cfg.stage is ignored.
TrainResult train_base_decoder(Model& model, const Corpus& corpus, const std::vector<Dataset>& datasets,
                               const TrainConfig& cfg);

// Mean decoder embedding of the tokens of " <instruction text>", one row per
// instruction, truncated like the encoder.
Matrix text_rows(const Model& model, const AsmFunction& fn);

std::vector<Sequence> dataset_sequences(const Model& model, const Corpus& corpus, const Dataset& dataset);

// Copy of the dataset without samples of `task`.
Dataset without_task(const Dataset& dataset, TaskType task);

// Greedy decoding, one independent context per question; answers come back
// in question order.
std::vector<std::string> interactive_answer(const Model& model, const AsmFunction& fn,
                                            const std::vector<std::string>& questions,
                                            std::size_t max_new_tokens = 48);

// Every text the model should be able to emit or read: questions and answers.
std::vector<std::string> dataset_texts(const Dataset& dataset);

// Vocabulary over the datasets' texts and " <instruction>" for every
// instruction of the corpus (the base pass reads those).
Vocab training_vocab(const Corpus& corpus, const std::vector<Dataset>& datasets);

ordered_json checkpoint_to_json(const Model& model);
Model checkpoint_from_json(const ordered_json& j);
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace asmalign
