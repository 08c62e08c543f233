#include "asmalign/train.hpp"

#include "asmalign/error.hpp"
#include "asmalign/jsonl.hpp"
#include "asmalign/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <unordered_map>

namespace asmalign {

namespace {

void add_inplace_row(Matrix& dst, std::size_t dst_row, const Matrix& src, std::size_t src_row, double scale) {
  for (std::size_t c = 0; c < dst.cols; ++c) dst(dst_row, c) += scale * src(src_row, c);
}

}  // namespace

TrainConfig TrainConfig::defaults(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  c.lr = stage == Stage::pretrain ? 2e-3 : 2e-5;
  return c;
}

std::vector<Sequence> dataset_sequences(const Model& model, const Corpus& corpus, const Dataset& dataset) {
  std::unordered_map<std::string, Matrix> features;
  std::vector<Sequence> out;
  out.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) {
    auto it = features.find(s.function_id);
    if (it == features.end()) {
      it = features.emplace(s.function_id, code_features(model, corpus.at(s.function_id))).first;
    }
    std::vector<std::pair<std::string, std::string>> rounds;
    for (auto& r : s.rounds()) rounds.emplace_back(std::move(r.question), std::move(r.answer));
    out.push_back(make_sequence(model, it->second, rounds));
  }
  return out;
}

namespace {

TrainResult run_sgd(Model& model, const std::vector<Sequence>& sequences, const TrainConfig& cfg, Stage grad_stage,
                    const std::function<bool(ParamGroup)>& update) {
  if (cfg.batch_size == 0) throw ValidationError("batch size must be positive");
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(sequences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t cursor = 0;

  TrainResult result;
  result.loss_curve.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<Sequence> picked;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      picked.push_back(sequences[order[cursor++]]);
    }
    auto grads = backward(model, make_batch(std::move(picked)), grad_stage);
    result.loss_curve.push_back(grads.loss);

    double scale = cfg.lr;
    if (cfg.clip_norm > 0) {
      double sq = 0.0;
      for (const auto& [name, g] : grads.params) {
        for (double x : g.data) sq += x * x;
      }
      const double norm = std::sqrt(sq);
      if (norm > cfg.clip_norm) scale *= cfg.clip_norm / norm;
    }
    for_each_param(model, [&](const std::string& name, ParamGroup group, Matrix& p) {
      if (!update(group)) return;
      add_inplace(p, grads.params.at(name), -scale);
    });
  }
  return result;
}

TrainResult train(Model& model, const Corpus& corpus, const Dataset& data, const TrainConfig& cfg) {
  if (data.samples.empty()) throw ValidationError("training dataset " + data.name + " is empty");
  return run_sgd(model, dataset_sequences(model, corpus, data), cfg, cfg.stage,
                 [&](ParamGroup g) { return is_trainable(g, cfg.stage); });
}

}  // namespace

Matrix text_rows(const Model& model, const AsmFunction& fn) {
  if (fn.instructions.empty()) throw ValidationError("cannot encode empty function " + fn.id);
  const std::size_t m = std::min(fn.instructions.size(), model.config.max_instructions);
  const auto& emb = model.decoder.emb;
  Matrix rows(m, emb.cols);
  for (std::size_t r = 0; r < m; ++r) {
    const auto ids = model.vocab.encode(" " + fn.instructions[r].text);
    for (int id : ids) add_inplace_row(rows, r, emb, static_cast<std::size_t>(id), 1.0 / static_cast<double>(ids.size()));
  }
  return rows;
}

TrainResult train_base_decoder(Model& model, const Corpus& corpus, const std::vector<Dataset>& datasets,
                               const TrainConfig& cfg) {
  // The projector is bypassed: code slots receive the text rows directly.
  Model reader = model;
  reader.projector = Projector{false, Matrix::identity(model.config.d_model), {}, {}};
  std::unordered_map<std::string, Matrix> rows;
  std::vector<Sequence> sequences;
  for (const auto& d : datasets) {
    for (const auto& s : d.samples) {
      auto it = rows.find(s.function_id);
      if (it == rows.end()) it = rows.emplace(s.function_id, text_rows(model, corpus.at(s.function_id))).first;
      std::vector<std::pair<std::string, std::string>> rounds;
      for (auto& r : s.rounds()) rounds.emplace_back(std::move(r.question), std::move(r.answer));
      sequences.push_back(make_sequence(reader, it->second, rounds));
    }
  }
  if (sequences.empty()) throw ValidationError("base decoder training needs at least one sample");
  auto result = run_sgd(reader, sequences, cfg, Stage::finetune, [](ParamGroup g) { return g == ParamGroup::decoder; });
  model.decoder = std::move(reader.decoder);
  return result;
}

TrainResult train_stage1(Model& model, const Corpus& corpus, const Dataset& d1, const TrainConfig& cfg) {
  if (cfg.stage != Stage::pretrain) throw ValidationError("stage 1 needs a pretrain config");
  for (const auto& s : d1.samples) {
    if (!is_pretrain_task(s.task)) throw ValidationError("stage 1 data holds a " + std::string(to_string(s.task)) + " sample");
  }
  return train(model, corpus, d1, cfg);
}

TrainResult train_stage2(Model& model, const Corpus& corpus, const Dataset& d2, const TrainConfig& cfg) {
  if (cfg.stage != Stage::finetune) throw ValidationError("stage 2 needs a finetune config");
  for (const auto& s : d2.samples) {
    if (is_pretrain_task(s.task)) throw ValidationError("stage 2 data holds a simp sample");
  }
  return train(model, corpus, d2, cfg);
}

Dataset without_task(const Dataset& dataset, TaskType task) {
  Dataset out{dataset.name, {}};
  std::copy_if(dataset.samples.begin(), dataset.samples.end(), std::back_inserter(out.samples),
               [&](const InstructionSample& s) { return s.task != task; });
  return out;
}

std::vector<std::string> dataset_texts(const Dataset& dataset) {
  std::vector<std::string> texts;
  for (const auto& s : dataset.samples) {
    for (const auto& r : s.rounds()) {
      texts.push_back("USER: " + r.question + " ASSISTANT:");
      texts.push_back(" " + r.answer);
    }
  }
  return texts;
}

Vocab training_vocab(const Corpus& corpus, const std::vector<Dataset>& datasets) {
  std::vector<std::string> texts;
  for (const auto& d : datasets) {
    auto t = dataset_texts(d);
    texts.insert(texts.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
  }
  for (const auto& fn : corpus.functions()) {
    for (const auto& ins : fn.instructions) texts.push_back(" " + ins.text);
  }
  return Vocab::build(texts);
}

std::vector<std::string> interactive_answer(const Model& model, const AsmFunction& fn,
                                            const std::vector<std::string>& questions, std::size_t max_new_tokens) {
  std::vector<std::string> answers;
  if (questions.empty()) return answers;
  const Matrix code = code_features(model, fn);
  const std::size_t limit = model.config.max_len;
  for (const auto& q : questions) {
    Sequence seq = make_sequence(model, code, {});
    const auto prompt = model.vocab.encode("USER: " + q + " ASSISTANT:");
    seq.ids.insert(seq.ids.end(), prompt.begin(), prompt.end());
    if (seq.ids.size() > limit) throw ValidationError("question does not fit in max_len");

    std::vector<int> generated;
    while (generated.size() < max_new_tokens && seq.ids.size() < limit) {
      const Matrix logits = decoder_logits(model.decoder, sequence_inputs(model, seq));
      const double* last = logits.row(logits.rows - 1);
      int best = Vocab::id(Special::eos);
      for (std::size_t v = kSpecialCount; v < logits.cols; ++v) {
        if (last[v] > last[best]) best = static_cast<int>(v);
      }
      if (best == Vocab::id(Special::eos)) break;
      generated.push_back(best);
      seq.ids.push_back(best);
    }
    std::string text = model.vocab.decode(generated);
    const auto b = text.find_first_not_of(' ');
    answers.push_back(b == std::string::npos ? std::string() : text.substr(b));
  }
  return answers;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr int kCheckpointMajor = 1;

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["d_enc"] = c.d_enc;
  j["d_model"] = c.d_model;
  j["d_ff"] = c.d_ff;
  j["layers"] = c.layers;
  j["max_len"] = c.max_len;
  j["max_instructions"] = c.max_instructions;
  j["encoder_buckets"] = c.encoder_buckets;
  j["two_tap"] = c.two_tap;
  j["projector_mlp"] = c.projector_mlp;
  j["projector_hidden"] = c.projector_hidden;
  j["no_encoder"] = c.no_encoder;
  j["seed"] = c.seed;
  return j;
}

ModelConfig config_from_json(const ordered_json& j) {
  ModelConfig c;
  c.d_enc = j.at("d_enc").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.max_instructions = j.at("max_instructions").get<std::size_t>();
  c.encoder_buckets = j.at("encoder_buckets").get<std::size_t>();
  c.two_tap = j.at("two_tap").get<bool>();
  c.projector_mlp = j.at("projector_mlp").get<bool>();
  c.projector_hidden = j.at("projector_hidden").get<std::size_t>();
  c.no_encoder = j.at("no_encoder").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

ordered_json checkpoint_to_json(const Model& model) {
  nlohmann::ordered_json j;
  j["schema"] = "checkpoint/v" + std::to_string(kCheckpointMajor);
  j["config"] = config_to_json(model.config);
  j["vocab"] = model.vocab.tokens();
  nlohmann::ordered_json params;
  for_each_param(model, [&](const std::string& name, ParamGroup, const Matrix& m) {
    params[name] = {{"shape", {m.rows, m.cols}}, {"data", m.data}};
  });
  j["params"] = std::move(params);
  return j;
}

Model checkpoint_from_json(const ordered_json& j) {
  require_schema(j, "checkpoint", kCheckpointMajor);
  try {
    Model m = init_model(config_from_json(j.at("config")),
                         Vocab::from_tokens(j.at("vocab").get<std::vector<std::string>>()));
    const auto& params = j.at("params");
    std::size_t seen = 0;
    for_each_param(m, [&](const std::string& name, ParamGroup, Matrix& p) {
      const auto& entry = params.at(name);
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != p.rows || shape[1] != p.cols) {
        throw SchemaError("checkpoint parameter " + name + " has the wrong shape");
      }
      p.data = entry.at("data").get<std::vector<double>>();
      if (p.data.size() != p.rows * p.cols) throw SchemaError("checkpoint parameter " + name + " has the wrong size");
      ++seen;
    });
    if (seen != params.size()) throw SchemaError("checkpoint carries unknown parameters");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  write_text_file(path, checkpoint_to_json(model).dump() + "\n");
}

Model load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_json(ordered_json::parse(read_text_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("checkpoint " + path.string() + " is not JSON: " + e.what());
  }
}

}  // namespace asmalign
