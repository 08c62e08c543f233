#pragma once

#include "asmalign/bcsd.hpp"
#include "asmalign/toy.hpp"
#include "asmalign/train.hpp"

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace asmalign {

enum class ToyVariant { full, no_pretrain, no_encoder };

std::string_view to_string(ToyVariant variant);
ToyVariant parse_toy_variant(std::string_view text);

// Settings fixed after the toy runs were measured; see README.
struct ToyExperimentConfig {
  std::size_t n_sources = 64;
  std::size_t d_enc = 64;
  std::size_t d_model = 32;
  std::size_t batch_size = 8;
  std::size_t base_steps = 1000;
  double base_lr = 0.6;
  std::size_t stage1_steps = 600;
  double stage1_lr = 0.15;
  std::size_t stage2_steps = 100;
  double stage2_lr = 0.1;
  double clip_norm = 5.0;
  std::size_t pool_size = 8;
};

struct ToyExperimentResult {
  double recall_at_1 = 0.0;
  double mrr = 0.0;
  // Generated descriptions equal to the ground-truth rendering.
  std::size_t exact = 0;
  std::size_t functions = 0;
  BcsdReport report;
  DescriptionCorpus descriptions;
};

/// Toy corpus -> base decoder pass -> stage 1 (skipped for no_pretrain) ->
/// stage 2 -> descriptions from interactive_answer -> run_bcsd with O0
/// queries against O3 candidates under the local hash embedder.
/// no_encoder zeroes the code features throughout.
ToyExperimentResult run_toy_experiment(std::uint64_t seed, ToyVariant variant,
                                       const ToyExperimentConfig& config = {});

}  // namespace asmalign
