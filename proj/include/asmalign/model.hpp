#pragma once

#include "asmalign/ingest.hpp"
#include "asmalign/matrix.hpp"
#include "asmalign/vocab.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace asmalign {

struct ModelConfig {
  std::size_t d_enc = 16;
  std::size_t d_model = 32;
  std::size_t d_ff = 64;
  std::size_t layers = 1;
  std::size_t max_len = 256;
  std::size_t max_instructions = 64;
  std::size_t encoder_buckets = 4096;
  // Encoder output is [pre-final, post-final] instead of post-final only.
  bool two_tap = false;
  bool projector_mlp = false;
  std::size_t projector_hidden = 32;
  // Ablation: code features are replaced by zeros.
  bool no_encoder = false;
  std::uint64_t seed = 0;

  bool operator==(const ModelConfig&) const = default;
};

// Frozen stand-in for a pretrained assembly encoder. Each instruction is split
// into slot-tagged sub-tokens ("m:mov", "o0:rbp", ...; identifiers are also
// split at underscores), hashed into a bucket
// table and mean-pooled; a fixed residual tanh layer follows.
class EncoderStub {
 public:
  EncoderStub() = default;
  EncoderStub(std::size_t d_enc, std::size_t buckets, std::size_t max_instructions, bool two_tap,
              std::uint64_t seed);

  // m x output_dim(), m = min(#instructions, max_instructions); the tail is
  // dropped on overflow. Throws ValidationError for an empty function.
  Matrix encode(const AsmFunction& fn) const;
  std::size_t output_dim() const noexcept { return two_tap_ ? 2 * table.cols : table.cols; }

  static std::vector<std::string> sub_tokens(std::string_view instruction);

  Matrix table;
  Matrix final_layer;

  std::size_t max_instructions() const noexcept { return max_instructions_; }
  bool two_tap() const noexcept { return two_tap_; }

 private:
  std::size_t max_instructions_ = 64;
  bool two_tap_ = false;
};

// Linear map E_c * W, or tanh(E_c * W + b1) * w2 in MLP mode.
struct Projector {
  bool mlp = false;
  Matrix w;
  Matrix b1;
  Matrix w2;

  std::size_t output_dim() const noexcept { return mlp ? w2.cols : w.cols; }
};

// Throws ShapeError when the feature width does not match the projector input.
Matrix project(const Matrix& code, const Projector& projector);

struct DecoderBlock {
  Matrix wq, wk, wv, wo;
  Matrix w1, b1, w2, b2;
};

// Single-head causal attention blocks with residual connections and a tanh
// MLP; no normalization layers, so every operation is smooth.
struct Decoder {
  Matrix emb;  // vocab x d_model
  Matrix pos;  // max_len x d_model
  std::vector<DecoderBlock> blocks;
  Matrix out;       // d_model x vocab
  Matrix out_bias;  // 1 x vocab

  std::size_t d_model() const noexcept { return emb.cols; }
  std::size_t vocab_size() const noexcept { return emb.rows; }
};

struct Model {
  ModelConfig config;
  Vocab vocab;
  EncoderStub encoder;
  Projector projector;
  Decoder decoder;
};

Model init_model(const ModelConfig& config, Vocab vocab);

enum class ParamGroup { encoder, projector, decoder };

// Visits parameters as ("enc.table", ...), ("proj.w", ...), ("dec.block0.wq", ...).
void for_each_param(Model& model, const std::function<void(const std::string&, ParamGroup, Matrix&)>& fn);
void for_each_param(const Model& model,
                    const std::function<void(const std::string&, ParamGroup, const Matrix&)>& fn);
Matrix& param(Model& model, const std::string& name);

// Raw little-endian bytes of every parameter in a group, in visiting order.
std::string serialize_params(const Model& model, ParamGroup group);

// Code features for one function (zeros under the no_encoder ablation).
Matrix code_features(const Model& model, const AsmFunction& fn);

// Decoder embedding rows for the given ids; empty ids give a 0 x d_model matrix.
Matrix embed_instruction(const std::vector<int>& ids, const Decoder& decoder);
// Rows of `code` followed by rows of `question`; ShapeError on width mismatch.
Matrix concat_embeddings(const Matrix& code, const Matrix& question);

// Logits for every row of the input embedding matrix (positions added inside).
Matrix decoder_logits(const Decoder& decoder, const Matrix& input);

// A token sequence whose inst_code slots take the rows of `code` in order.
// mask[t] == 1 marks ids[t] as a training target predicted from position t-1.
struct Sequence {
  std::vector<int> ids;
  Matrix code;
  std::vector<std::uint8_t> mask;
};

struct Batch {
  std::vector<Sequence> sequences;
  std::size_t seq_len = 0;
};

// Pads every sequence to the longest one with pad ids and zero mask.
Batch make_batch(std::vector<Sequence> sequences);

// Builds bos <asm> USER: q ASSISTANT: a eos ... with the placeholder expanded
// to the code region. Only answer tokens and their eos are masked in. The tail
// beyond max_len is cut.
Sequence make_sequence(const Model& model, const Matrix& code, const std::vector<std::pair<std::string, std::string>>& rounds);

// Input rows for a sequence: token embeddings, with projected code rows in the
// inst_code slots.
Matrix sequence_inputs(const Model& model, const Sequence& seq);

double softmax_cross_entropy(const double* logits, std::size_t n, int target);
std::size_t masked_count(const Batch& batch);

// Mean over masked tokens of -log p(target). Throws ValidationError on an all-zero mask.
double forward_loss(const Model& model, const Batch& batch);

enum class Stage { pretrain, finetune };

struct Gradients {
  double loss = 0.0;
  // Only trainable parameters for the stage: proj.* when pretraining,
  // proj.* and dec.* when finetuning.
  std::map<std::string, Matrix> params;
};

Gradients backward(const Model& model, const Batch& batch, Stage stage);

bool is_trainable(ParamGroup group, Stage stage);

}  // namespace asmalign
