#include "asmalign/model.hpp"

#include "asmalign/error.hpp"
#include "asmalign/hashing.hpp"
#include "asmalign/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

namespace asmalign {

namespace {

constexpr std::uint64_t kEncoderStream = 0x656e63;
constexpr std::uint64_t kProjectorStream = 0x70726f6a;
constexpr std::uint64_t kDecoderStream = 0x646563;

void add_row(double* dst, const double* src, std::size_t n, double scale = 1.0) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += scale * src[i];
}

void add_bias(Matrix& m, const Matrix& bias) {
  for (std::size_t r = 0; r < m.rows; ++r) add_row(m.row(r), bias.data.data(), m.cols);
}

void add_colsum(Matrix& bias_grad, const Matrix& m) {
  for (std::size_t r = 0; r < m.rows; ++r) add_row(bias_grad.data.data(), m.row(r), m.cols);
}

Matrix zeros_like(const Matrix& m) { return Matrix(m.rows, m.cols); }

Projector zeros_like(const Projector& p) {
  return Projector{p.mlp, zeros_like(p.w), zeros_like(p.b1), zeros_like(p.w2)};
}

Decoder zeros_like(const Decoder& d) {
  Decoder z;
  z.emb = zeros_like(d.emb);
  z.pos = zeros_like(d.pos);
  for (const auto& b : d.blocks) {
    z.blocks.push_back({zeros_like(b.wq), zeros_like(b.wk), zeros_like(b.wv), zeros_like(b.wo), zeros_like(b.w1),
                        zeros_like(b.b1), zeros_like(b.w2), zeros_like(b.b2)});
  }
  z.out = zeros_like(d.out);
  z.out_bias = zeros_like(d.out_bias);
  return z;
}

template <typename P, typename Fn>
void visit_projector(P& p, Fn&& fn) {
  fn("proj.w", p.w);
  if (p.mlp) {
    fn("proj.b1", p.b1);
    fn("proj.w2", p.w2);
  }
}

template <typename D, typename Fn>
void visit_decoder(D& d, Fn&& fn) {
  fn("dec.emb", d.emb);
  fn("dec.pos", d.pos);
  for (std::size_t i = 0; i < d.blocks.size(); ++i) {
    auto& b = d.blocks[i];
    const std::string p = "dec.block" + std::to_string(i) + ".";
    fn(p + "wq", b.wq);
    fn(p + "wk", b.wk);
    fn(p + "wv", b.wv);
    fn(p + "wo", b.wo);
    fn(p + "w1", b.w1);
    fn(p + "b1", b.b1);
    fn(p + "w2", b.w2);
    fn(p + "b2", b.b2);
  }
  fn("dec.out", d.out);
  fn("dec.out_bias", d.out_bias);
}

Matrix projector_forward(const Projector& p, const Matrix& e, Matrix* hidden) {
  if (e.cols != p.w.rows) {
    throw ShapeError("projector expects width " + std::to_string(p.w.rows) + ", got " + std::to_string(e.cols));
  }
  if (!p.mlp) return matmul(e, p.w);
  Matrix h = matmul(e, p.w);
  add_bias(h, p.b1);
  for (auto& x : h.data) x = std::tanh(x);
  Matrix out = matmul(h, p.w2);
  if (hidden) *hidden = std::move(h);
  return out;
}

struct BlockCache {
  Matrix x, q, k, v, a, o, h1, g;
};

Matrix block_forward(const DecoderBlock& b, const Matrix& x, BlockCache& c) {
  const std::size_t t_len = x.rows;
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols));
  c.x = x;
  c.q = matmul(x, b.wq);
  c.k = matmul(x, b.wk);
  c.v = matmul(x, b.wv);
  c.a = Matrix(t_len, t_len);
  for (std::size_t i = 0; i < t_len; ++i) {
    double* ai = c.a.row(i);
    double mx = -INFINITY;
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols; ++k) s += c.q(i, k) * c.k(j, k);
      ai[j] = s * scale;
      mx = std::max(mx, ai[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      ai[j] = std::exp(ai[j] - mx);
      z += ai[j];
    }
    for (std::size_t j = 0; j <= i; ++j) ai[j] /= z;
  }
  c.o = matmul(c.a, c.v);
  c.h1 = x;
  add_matmul(c.h1, c.o, b.wo);
  c.g = matmul(c.h1, b.w1);
  add_bias(c.g, b.b1);
  for (auto& v : c.g.data) v = std::tanh(v);
  Matrix out = c.h1;
  add_matmul(out, c.g, b.w2);
  add_bias(out, b.b2);
  return out;
}

// Returns d(loss)/d(block input). Parameter gradients go to `gb` when non-null.
Matrix block_backward(const DecoderBlock& b, const BlockCache& c, const Matrix& dout, DecoderBlock* gb) {
  const std::size_t t_len = c.x.rows;
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.x.cols));
  if (gb) {
    add_matmul_tn(gb->w2, c.g, dout);
    add_colsum(gb->b2, dout);
  }
  Matrix dz = matmul_nt(dout, b.w2);
  for (std::size_t i = 0; i < dz.data.size(); ++i) dz.data[i] *= 1.0 - c.g.data[i] * c.g.data[i];
  if (gb) {
    add_matmul_tn(gb->w1, c.h1, dz);
    add_colsum(gb->b1, dz);
  }
  Matrix dh1 = dout;
  add_matmul_nt(dh1, dz, b.w1);

  if (gb) add_matmul_tn(gb->wo, c.o, dh1);
  const Matrix d_o = matmul_nt(dh1, b.wo);
  const Matrix da = matmul_nt(d_o, c.v);
  const Matrix dv = matmul_tn(c.a, d_o);
  Matrix ds(t_len, t_len);
  for (std::size_t i = 0; i < t_len; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j <= i; ++j) dot += da(i, j) * c.a(i, j);
    for (std::size_t j = 0; j <= i; ++j) ds(i, j) = c.a(i, j) * (da(i, j) - dot) * scale;
  }
  const Matrix dq = matmul(ds, c.k);
  const Matrix dk = matmul_tn(ds, c.q);
  if (gb) {
    add_matmul_tn(gb->wq, c.x, dq);
    add_matmul_tn(gb->wk, c.x, dk);
    add_matmul_tn(gb->wv, c.x, dv);
  }
  Matrix dx = std::move(dh1);
  add_matmul_nt(dx, dq, b.wq);
  add_matmul_nt(dx, dk, b.wk);
  add_matmul_nt(dx, dv, b.wv);
  return dx;
}

Matrix run_blocks(const Decoder& d, Matrix x, std::vector<BlockCache>& caches) {
  caches.resize(d.blocks.size());
  for (std::size_t i = 0; i < d.blocks.size(); ++i) x = block_forward(d.blocks[i], x, caches[i]);
  return x;
}

void check_ids(const std::vector<int>& ids, std::size_t vocab_size) {
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw ValidationError("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(vocab_size));
    }
  }
}

// Sum of -log p over masked targets of one sequence. With gradient sinks set,
// accumulates weight * d(sum)/d(params).
double sequence_pass(const Model& model, const Sequence& seq, double weight, Projector* gp, Decoder* gd) {
  const auto& dec = model.decoder;
  const std::size_t d = dec.d_model();
  std::size_t last = 0;
  for (std::size_t t = 0; t < seq.mask.size(); ++t) {
    if (seq.mask[t]) last = t;
  }
  if (last == 0) return 0.0;
  if (seq.mask.size() != seq.ids.size()) throw ShapeError("mask length differs from sequence length");
  const std::size_t t_len = last;  // inputs 0..last-1 predict 1..last
  if (t_len > dec.pos.rows) throw ShapeError("sequence longer than max_len");

  Matrix proj_hidden;
  const Matrix code_proj = projector_forward(model.projector, seq.code, gp && gp->mlp ? &proj_hidden : nullptr);
  Matrix x(t_len, d);
  std::vector<std::size_t> code_slot(t_len, SIZE_MAX);
  std::size_t k = 0;
  for (std::size_t t = 0; t < t_len; ++t) {
    const int id = seq.ids[t];
    if (id == Vocab::id(Special::inst_code)) {
      if (k >= code_proj.rows) throw ShapeError("more code slots than code rows");
      std::copy(code_proj.row(k), code_proj.row(k) + d, x.row(t));
      code_slot[t] = k++;
    } else {
      std::copy(dec.emb.row(static_cast<std::size_t>(id)), dec.emb.row(static_cast<std::size_t>(id)) + d, x.row(t));
    }
    add_row(x.row(t), dec.pos.row(t), d);
  }

  std::vector<BlockCache> caches;
  const Matrix h = run_blocks(dec, std::move(x), caches);

  const std::size_t vocab = dec.vocab_size();
  double total = 0.0;
  std::vector<double> logits(vocab), dy(vocab);
  Matrix dh(t_len, d);
  for (std::size_t t = 1; t <= last; ++t) {
    if (!seq.mask[t]) continue;
    const double* hr = h.row(t - 1);
    for (std::size_t v = 0; v < vocab; ++v) logits[v] = dec.out_bias.data[v];
    for (std::size_t i = 0; i < d; ++i) add_row(logits.data(), dec.out.row(i), vocab, hr[i]);
    total += softmax_cross_entropy(logits.data(), vocab, seq.ids[t]);
    if (!gp && !gd) continue;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) z += (dy[v] = std::exp(logits[v] - mx));
    for (std::size_t v = 0; v < vocab; ++v) dy[v] = weight * dy[v] / z;
    dy[static_cast<std::size_t>(seq.ids[t])] -= weight;
    double* dhr = dh.row(t - 1);
    for (std::size_t i = 0; i < d; ++i) {
      const double* ur = dec.out.row(i);
      double s = 0.0;
      for (std::size_t v = 0; v < vocab; ++v) s += ur[v] * dy[v];
      dhr[i] += s;
      if (gd) add_row(gd->out.row(i), dy.data(), vocab, hr[i]);
    }
    if (gd) add_row(gd->out_bias.data.data(), dy.data(), vocab);
  }
  if (!gp && !gd) return total;

  Matrix dx = std::move(dh);
  for (std::size_t i = dec.blocks.size(); i-- > 0;) {
    dx = block_backward(dec.blocks[i], caches[i], dx, gd ? &gd->blocks[i] : nullptr);
  }

  Matrix dcode(code_proj.rows, d);
  for (std::size_t t = 0; t < t_len; ++t) {
    if (gd) add_row(gd->pos.row(t), dx.row(t), d);
    if (code_slot[t] != SIZE_MAX) {
      add_row(dcode.row(code_slot[t]), dx.row(t), d);
    } else if (gd) {
      add_row(gd->emb.row(static_cast<std::size_t>(seq.ids[t])), dx.row(t), d);
    }
  }
  if (gp) {
    const auto& p = model.projector;
    if (!p.mlp) {
      add_matmul_tn(gp->w, seq.code, dcode);
    } else {
      add_matmul_tn(gp->w2, proj_hidden, dcode);
      Matrix dz = matmul_nt(dcode, p.w2);
      for (std::size_t i = 0; i < dz.data.size(); ++i) dz.data[i] *= 1.0 - proj_hidden.data[i] * proj_hidden.data[i];
      add_matmul_tn(gp->w, seq.code, dz);
      add_colsum(gp->b1, dz);
    }
  }
  return total;
}

}  // namespace

// ---------------------------------------------------------------------------
// Encoder

EncoderStub::EncoderStub(std::size_t d_enc, std::size_t buckets, std::size_t max_instructions, bool two_tap,
                         std::uint64_t seed)
    : max_instructions_(max_instructions), two_tap_(two_tap) {
  if (d_enc == 0 || buckets == 0 || max_instructions == 0) {
    throw ValidationError("encoder dimensions must be positive");
  }
  Rng rng(derive_seed(seed, kEncoderStream));
  table = Matrix::random_normal(buckets, d_enc, 1.0, rng);
  final_layer = Matrix::random_normal(d_enc, d_enc, 1.0 / std::sqrt(static_cast<double>(d_enc)), rng);
}

std::vector<std::string> EncoderStub::sub_tokens(std::string_view instruction) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < instruction.size() && std::isspace(static_cast<unsigned char>(instruction[i]))) ++i;
  std::size_t j = i;
  while (j < instruction.size() && !std::isspace(static_cast<unsigned char>(instruction[j]))) ++j;
  if (j == i) return out;
  out.push_back("m:" + std::string(instruction.substr(i, j - i)));
  std::size_t slot = 0;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back("o" + std::to_string(slot) + ":" + word);
    word.clear();
  };
  for (std::size_t p = j; p < instruction.size(); ++p) {
    const auto c = static_cast<unsigned char>(instruction[p]);
    if (std::isalnum(c) || c == '.' || c == '@' || c == '$' || c == '?') {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      if (c == ',') ++slot;
    }
  }
  flush();
  return out;
}

Matrix EncoderStub::encode(const AsmFunction& fn) const {
  if (fn.instructions.empty()) throw ValidationError("cannot encode empty function " + fn.id);
  const std::size_t m = std::min(fn.instructions.size(), max_instructions_);
  const std::size_t d = table.cols;
  Matrix pooled(m, d);
  for (std::size_t r = 0; r < m; ++r) {
    auto toks = sub_tokens(fn.instructions[r].text);
    if (toks.empty()) toks.push_back("raw:" + fn.instructions[r].text);
    for (const auto& tok : toks) add_row(pooled.row(r), table.row(fnv1a64(tok) % table.rows), d);
    for (std::size_t c = 0; c < d; ++c) pooled(r, c) /= static_cast<double>(toks.size());
  }
  Matrix post = matmul(pooled, final_layer);
  for (std::size_t i = 0; i < post.data.size(); ++i) post.data[i] = std::tanh(post.data[i]) + pooled.data[i];
  return two_tap_ ? hconcat(pooled, post) : post;
}

// ---------------------------------------------------------------------------
// Model construction and parameter access

Model init_model(const ModelConfig& config, Vocab vocab) {
  if (config.d_model == 0 || config.d_ff == 0 || config.layers == 0 || config.max_len < 2) {
    throw ValidationError("model dimensions must be positive");
  }
  Model m;
  m.config = config;
  m.vocab = std::move(vocab);
  m.encoder = EncoderStub(config.d_enc, config.encoder_buckets, config.max_instructions, config.two_tap, config.seed);

  const std::size_t d_in = m.encoder.output_dim();
  const std::size_t d = config.d_model;
  auto inv_sqrt = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };

  Rng prng(derive_seed(config.seed, kProjectorStream));
  m.projector.mlp = config.projector_mlp;
  if (config.projector_mlp) {
    m.projector.w = Matrix::random_normal(d_in, config.projector_hidden, inv_sqrt(d_in), prng);
    m.projector.b1 = Matrix(1, config.projector_hidden);
    m.projector.w2 = Matrix::random_normal(config.projector_hidden, d, inv_sqrt(config.projector_hidden), prng);
  } else {
    m.projector.w = Matrix::random_normal(d_in, d, inv_sqrt(d_in), prng);
  }

  Rng drng(derive_seed(config.seed, kDecoderStream));
  const std::size_t v = m.vocab.size();
  auto& dec = m.decoder;
  dec.emb = Matrix::random_normal(v, d, 1.0, drng);
  dec.pos = Matrix::random_normal(config.max_len, d, 0.5, drng);
  for (std::size_t i = 0; i < config.layers; ++i) {
    DecoderBlock b;
    b.wq = Matrix::random_normal(d, d, inv_sqrt(d), drng);
    b.wk = Matrix::random_normal(d, d, inv_sqrt(d), drng);
    b.wv = Matrix::random_normal(d, d, inv_sqrt(d), drng);
    b.wo = Matrix::random_normal(d, d, inv_sqrt(d), drng);
    b.w1 = Matrix::random_normal(d, config.d_ff, inv_sqrt(d), drng);
    b.b1 = Matrix(1, config.d_ff);
    b.w2 = Matrix::random_normal(config.d_ff, d, inv_sqrt(config.d_ff), drng);
    b.b2 = Matrix(1, d);
    dec.blocks.push_back(std::move(b));
  }
  dec.out = Matrix::random_normal(d, v, inv_sqrt(d), drng);
  dec.out_bias = Matrix(1, v);
  return m;
}

void for_each_param(Model& model, const std::function<void(const std::string&, ParamGroup, Matrix&)>& fn) {
  fn("enc.table", ParamGroup::encoder, model.encoder.table);
  fn("enc.final", ParamGroup::encoder, model.encoder.final_layer);
  visit_projector(model.projector, [&](const std::string& n, Matrix& m) { fn(n, ParamGroup::projector, m); });
  visit_decoder(model.decoder, [&](const std::string& n, Matrix& m) { fn(n, ParamGroup::decoder, m); });
}

void for_each_param(const Model& model,
                    const std::function<void(const std::string&, ParamGroup, const Matrix&)>& fn) {
  fn("enc.table", ParamGroup::encoder, model.encoder.table);
  fn("enc.final", ParamGroup::encoder, model.encoder.final_layer);
  visit_projector(model.projector,
                  [&](const std::string& n, const Matrix& m) { fn(n, ParamGroup::projector, m); });
  visit_decoder(model.decoder, [&](const std::string& n, const Matrix& m) { fn(n, ParamGroup::decoder, m); });
}

Matrix& param(Model& model, const std::string& name) {
  Matrix* found = nullptr;
  for_each_param(model, [&](const std::string& n, ParamGroup, Matrix& m) {
    if (n == name) found = &m;
  });
  if (!found) throw ValidationError("no parameter named " + name);
  return *found;
}

std::string serialize_params(const Model& model, ParamGroup group) {
  std::string bytes;
  for_each_param(model, [&](const std::string& name, ParamGroup g, const Matrix& m) {
    if (g != group) return;
    bytes += name;
    bytes.push_back('\0');
    const auto* p = reinterpret_cast<const char*>(m.data.data());
    bytes.append(p, m.data.size() * sizeof(double));
  });
  return bytes;
}

bool is_trainable(ParamGroup group, Stage stage) {
  switch (group) {
    case ParamGroup::encoder: return false;
    case ParamGroup::projector: return true;
    case ParamGroup::decoder: return stage == Stage::finetune;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Forward pieces

Matrix project(const Matrix& code, const Projector& projector) { return projector_forward(projector, code, nullptr); }

Matrix code_features(const Model& model, const AsmFunction& fn) {
  Matrix e = model.encoder.encode(fn);
  if (model.config.no_encoder) e.set_zero();
  return e;
}

Matrix embed_instruction(const std::vector<int>& ids, const Decoder& decoder) {
  check_ids(ids, decoder.vocab_size());
  Matrix out(ids.size(), decoder.d_model());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* src = decoder.emb.row(static_cast<std::size_t>(ids[i]));
    std::copy(src, src + out.cols, out.row(i));
  }
  return out;
}

Matrix concat_embeddings(const Matrix& code, const Matrix& question) {
  if (code.cols != question.cols) {
    throw ShapeError("embedding widths differ: " + std::to_string(code.cols) + " vs " + std::to_string(question.cols));
  }
  Matrix out(code.rows + question.rows, code.cols);
  std::copy(code.data.begin(), code.data.end(), out.data.begin());
  std::copy(question.data.begin(), question.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(code.data.size()));
  return out;
}

Matrix decoder_logits(const Decoder& decoder, const Matrix& input) {
  if (input.cols != decoder.d_model()) throw ShapeError("decoder input width mismatch");
  if (input.rows > decoder.pos.rows) throw ShapeError("input longer than max_len");
  Matrix x = input;
  for (std::size_t t = 0; t < x.rows; ++t) add_row(x.row(t), decoder.pos.row(t), x.cols);
  std::vector<BlockCache> caches;
  const Matrix h = run_blocks(decoder, std::move(x), caches);
  Matrix logits = matmul(h, decoder.out);
  add_bias(logits, decoder.out_bias);
  return logits;
}

Matrix sequence_inputs(const Model& model, const Sequence& seq) {
  check_ids(seq.ids, model.decoder.vocab_size());
  const Matrix code_proj = project(seq.code, model.projector);
  const std::size_t d = model.decoder.d_model();
  Matrix x(seq.ids.size(), d);
  std::size_t k = 0;
  for (std::size_t t = 0; t < seq.ids.size(); ++t) {
    const double* src;
    if (seq.ids[t] == Vocab::id(Special::inst_code)) {
      if (k >= code_proj.rows) throw ShapeError("more code slots than code rows");
      src = code_proj.row(k++);
    } else {
      src = model.decoder.emb.row(static_cast<std::size_t>(seq.ids[t]));
    }
    std::copy(src, src + d, x.row(t));
  }
  return x;
}

Batch make_batch(std::vector<Sequence> sequences) {
  Batch b;
  for (const auto& s : sequences) b.seq_len = std::max(b.seq_len, s.ids.size());
  for (auto& s : sequences) {
    s.ids.resize(b.seq_len, Vocab::id(Special::pad));
    s.mask.resize(b.seq_len, 0);
  }
  b.sequences = std::move(sequences);
  return b;
}

Sequence make_sequence(const Model& model, const Matrix& code,
                       const std::vector<std::pair<std::string, std::string>>& rounds) {
  Sequence s;
  s.code = code;
  const auto& vocab = model.vocab;
  s.ids = substitute_placeholder({Vocab::id(Special::bos), Vocab::id(Special::inst_placeholder)}, code.rows);
  s.mask.assign(s.ids.size(), 0);
  for (const auto& [q, a] : rounds) {
    const auto prompt = vocab.encode("USER: " + q + " ASSISTANT:");
    s.ids.insert(s.ids.end(), prompt.begin(), prompt.end());
    s.mask.insert(s.mask.end(), prompt.size(), 0);
    auto answer = vocab.encode(" " + a);
    answer.push_back(Vocab::id(Special::eos));
    s.ids.insert(s.ids.end(), answer.begin(), answer.end());
    s.mask.insert(s.mask.end(), answer.size(), 1);
  }
  const std::size_t limit = model.config.max_len;
  if (s.ids.size() > limit) {
    s.ids.resize(limit);
    s.mask.resize(limit);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Loss and gradients

double softmax_cross_entropy(const double* logits, std::size_t n, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= n) throw ValidationError("target outside logits");
  double mx = logits[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(logits[i] - mx);
  return std::log(z) + mx - logits[target];
}

std::size_t masked_count(const Batch& batch) {
  std::size_t n = 0;
  for (const auto& s : batch.sequences) n += static_cast<std::size_t>(std::count(s.mask.begin(), s.mask.end(), 1));
  return n;
}

namespace {

void validate_batch(const Model& model, const Batch& batch) {
  for (const auto& s : batch.sequences) {
    if (s.mask.size() != s.ids.size()) throw ShapeError("mask length differs from sequence length");
    if (!s.mask.empty() && s.mask[0]) throw ValidationError("position 0 cannot be a target");
    check_ids(s.ids, model.decoder.vocab_size());
    for (std::size_t t = 0; t < s.ids.size(); ++t) {
      if (s.mask[t] && s.ids[t] == Vocab::id(Special::inst_placeholder)) {
        throw ValidationError("placeholder cannot be a training target");
      }
    }
  }
  if (masked_count(batch) == 0) throw ValidationError("batch has no masked tokens");
}

}  // namespace

double forward_loss(const Model& model, const Batch& batch) {
  validate_batch(model, batch);
  double total = 0.0;
  for (const auto& s : batch.sequences) total += sequence_pass(model, s, 0.0, nullptr, nullptr);
  return total / static_cast<double>(masked_count(batch));
}

Gradients backward(const Model& model, const Batch& batch, Stage stage) {
  validate_batch(model, batch);
  const double n = static_cast<double>(masked_count(batch));
  Projector gp = zeros_like(model.projector);
  Decoder gd;
  const bool train_decoder = is_trainable(ParamGroup::decoder, stage);
  if (train_decoder) gd = zeros_like(model.decoder);
  Gradients g;
  for (const auto& s : batch.sequences) {
    g.loss += sequence_pass(model, s, 1.0 / n, &gp, train_decoder ? &gd : nullptr);
  }
  g.loss /= n;
  visit_projector(gp, [&](const std::string& name, Matrix& m) { g.params.emplace(name, std::move(m)); });
  if (train_decoder) visit_decoder(gd, [&](const std::string& name, Matrix& m) { g.params.emplace(name, std::move(m)); });
  return g;
}

}  // namespace asmalign
