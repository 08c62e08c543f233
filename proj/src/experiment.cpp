#include "asmalign/experiment.hpp"

#include "asmalign/error.hpp"

namespace asmalign {

std::string_view to_string(ToyVariant variant) {
  switch (variant) {
    case ToyVariant::full: return "full";
    case ToyVariant::no_pretrain: return "no-pretrain";
    case ToyVariant::no_encoder: return "no-encoder";
  }
  return "full";
}

ToyVariant parse_toy_variant(std::string_view text) {
  for (auto v : {ToyVariant::full, ToyVariant::no_pretrain, ToyVariant::no_encoder}) {
    if (to_string(v) == text) return v;
  }
  throw ValidationError("unknown toy variant '" + std::string(text) + "'");
}

ToyExperimentResult run_toy_experiment(std::uint64_t seed, ToyVariant variant, const ToyExperimentConfig& config) {
  const auto toy = make_toy_corpus(config.n_sources, seed);
  const auto d1 = toy_d1(toy);
  const auto d2 = toy_d2(toy);

  ModelConfig mc;
  mc.d_enc = config.d_enc;
  mc.d_model = config.d_model;
  mc.seed = seed;
  mc.no_encoder = variant == ToyVariant::no_encoder;
  Model model = init_model(mc, training_vocab(toy.corpus, {d1, d2}));

  TrainConfig base;
  base.steps = config.base_steps;
  base.lr = config.base_lr;
  base.batch_size = config.batch_size;
  base.clip_norm = config.clip_norm;
  base.seed = seed;
  train_base_decoder(model, toy.corpus, {d1, d2}, base);

  if (variant != ToyVariant::no_pretrain) {
    TrainConfig c1 = base;
    c1.stage = Stage::pretrain;
    c1.steps = config.stage1_steps;
    c1.lr = config.stage1_lr;
    train_stage1(model, toy.corpus, d1, c1);
  }

  TrainConfig c2 = base;
  c2.stage = Stage::finetune;
  c2.steps = config.stage2_steps;
  c2.lr = config.stage2_lr;
  train_stage2(model, toy.corpus, d2, c2);

  ToyExperimentResult result;
  std::map<std::string, std::string> generated;
  for (const auto& fn : toy.corpus.functions()) {
    auto answer = interactive_answer(model, fn, {std::string(kToyQuestion)}).front();
    result.exact += answer == toy.descriptions.at(fn.source_key);
    generated[fn.id] = std::move(answer);
  }
  result.functions = generated.size();
  result.descriptions = descriptions_from_map(generated, "toy-" + std::string(to_string(variant)), kToyQuestion);

  BcsdConfig bc;
  bc.label = std::string(to_string(variant));
  bc.pools.sizes = {config.pool_size};
  bc.pools.pairing = {OptLevel::O0, OptLevel::O3};
  bc.pools.seed = seed;
  LocalHashEmbedder embedder;
  result.report = run_bcsd(toy.corpus, result.descriptions, embedder, bc);
  result.recall_at_1 = result.report.overall.recall_at_1.at(config.pool_size);
  result.mrr = result.report.overall.mrr.at(config.pool_size);
  return result;
}

}  // namespace asmalign
