#include "doctest.h"

#include "asmalign/error.hpp"
#include "asmalign/rng.hpp"
#include "asmalign/toy.hpp"
#include "asmalign/train.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>

using namespace asmalign;
namespace fs = std::filesystem;

namespace {

AsmFunction make_fn(const std::vector<std::string>& body, std::string id = "p/f/O0") {
  AsmFunction fn;
  fn.id = std::move(id);
  fn.project = "p";
  fn.source_key = "p/f";
  for (std::size_t i = 0; i < body.size(); ++i) fn.instructions.push_back({i, body[i], {}});
  return fn;
}

Vocab small_vocab() {
  return Vocab::build({"USER: what does it do? ASSISTANT:", " it pushes rbp", " calls parse buf", "describe"});
}

ModelConfig tiny_config(std::uint64_t seed) {
  ModelConfig c;
  c.d_enc = 6;
  c.d_model = 8;
  c.d_ff = 10;
  c.max_len = 96;
  c.encoder_buckets = 64;
  c.seed = seed;
  return c;
}

std::vector<std::string> random_words(Rng& rng, std::size_t n) {
  static const char* words[] = {"it", "pushes", "rbp", "calls", "parse", "buf", "what", "does", "do", "x"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(words[rng.uniform_index(10)]);
  return out;
}

std::string join(const std::vector<std::string>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? " " : "") + w[i];
  return s;
}

Sequence random_sequence(const Model& model, Rng& rng, std::size_t max_rounds = 2) {
  const char* ops[] = {"push rbp", "mov rbp, rsp", "call parse_buf", "retn", "xor eax, eax"};
  std::vector<std::string> body;
  for (std::uint64_t i = 0, n = 1 + rng.uniform_index(4); i < n; ++i) body.emplace_back(ops[rng.uniform_index(5)]);
  std::vector<std::pair<std::string, std::string>> rounds;
  for (std::uint64_t r = 0, n = 1 + rng.uniform_index(max_rounds); r < n; ++r) {
    rounds.emplace_back(join(random_words(rng, 1 + rng.uniform_index(3))), join(random_words(rng, 1 + rng.uniform_index(3))));
  }
  return make_sequence(model, code_features(model, make_fn(body)), rounds);
}

// Plain re-derivation of the loss straight from the parameters, sharing no
// code with the library forward pass.
double oracle_loss(const Model& m, const Batch& batch) {
  const auto& dec = m.decoder;
  const std::size_t d = dec.d_model(), v = dec.vocab_size();
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : batch.sequences) {
    // projected code rows
    std::vector<std::vector<double>> code(s.code.rows, std::vector<double>(d, 0.0));
    for (std::size_t r = 0; r < s.code.rows; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t k = 0; k < s.code.cols; ++k) code[r][c] += s.code(r, k) * m.projector.w(k, c);
      }
    }
    const std::size_t n = s.ids.size();
    std::vector<std::vector<double>> x(n, std::vector<double>(d));
    std::size_t slot = 0;
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t c = 0; c < d; ++c) {
        const double e = s.ids[t] == Vocab::id(Special::inst_code) ? code[slot][c]
                                                                    : dec.emb(static_cast<std::size_t>(s.ids[t]), c);
        x[t][c] = e + dec.pos(t, c);
      }
      if (s.ids[t] == Vocab::id(Special::inst_code)) ++slot;
    }
    for (const auto& b : dec.blocks) {
      auto lin = [&](const std::vector<double>& in, const Matrix& w) {
        std::vector<double> out(w.cols, 0.0);
        for (std::size_t j = 0; j < w.cols; ++j) {
          for (std::size_t i = 0; i < in.size(); ++i) out[j] += in[i] * w(i, j);
        }
        return out;
      };
      std::vector<std::vector<double>> next(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto q = lin(x[i], b.wq);
        std::vector<double> w(i + 1);
        double mx = -1e300;
        for (std::size_t j = 0; j <= i; ++j) {
          const auto k = lin(x[j], b.wk);
          double dot = 0;
          for (std::size_t c = 0; c < d; ++c) dot += q[c] * k[c];
          w[j] = dot / std::sqrt(static_cast<double>(d));
          mx = std::max(mx, w[j]);
        }
        double z = 0;
        for (auto& a : w) z += (a = std::exp(a - mx));
        std::vector<double> o(d, 0.0);
        for (std::size_t j = 0; j <= i; ++j) {
          const auto val = lin(x[j], b.wv);
          for (std::size_t c = 0; c < d; ++c) o[c] += w[j] / z * val[c];
        }
        auto h1 = lin(o, b.wo);
        for (std::size_t c = 0; c < d; ++c) h1[c] += x[i][c];
        auto g = lin(h1, b.w1);
        for (std::size_t c = 0; c < g.size(); ++c) g[c] = std::tanh(g[c] + b.b1.data[c]);
        auto h2 = lin(g, b.w2);
        for (std::size_t c = 0; c < d; ++c) h2[c] += h1[c] + b.b2.data[c];
        next[i] = h2;
      }
      x = next;
    }
    for (std::size_t t = 1; t < n; ++t) {
      if (!s.mask[t]) continue;
      std::vector<double> logits(v);
      double mx = -1e300;
      for (std::size_t k = 0; k < v; ++k) {
        logits[k] = dec.out_bias.data[k];
        for (std::size_t c = 0; c < d; ++c) logits[k] += x[t - 1][c] * dec.out(c, k);
        mx = std::max(mx, logits[k]);
      }
      double z = 0;
      for (double l : logits) z += std::exp(l - mx);
      total += std::log(z) + mx - logits[static_cast<std::size_t>(s.ids[t])];
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace

TEST_CASE("split_pieces concatenates back to the input") {
  CHECK(split_pieces("push rbp, 8") == std::vector<std::string>{"push", " rbp", ",", " 8"});
  CHECK(split_pieces("a  b\n") == std::vector<std::string>{"a", " ", " b", "\n"});
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    std::string s;
    for (std::uint64_t k = 0, n = rng.uniform_index(30); k < n; ++k) s.push_back(static_cast<char>(32 + rng.uniform_index(95)));
    std::string joined;
    for (const auto& p : split_pieces(s)) joined += p;
    CHECK(joined == s);
  }
}

TEST_CASE("tokenizer round trip and special wrapping") {
  const auto vocab = small_vocab();
  CHECK(vocab.size() > kSpecialCount);
  const auto ids = tokenize_instruction_text("push rbp", vocab);
  CHECK(ids.front() == Vocab::id(Special::bos));
  CHECK(ids.back() == Vocab::id(Special::eos));
  CHECK(vocab.decode(ids) == "push rbp");
  CHECK(tokenize_instruction_text("", vocab) == std::vector<int>{Vocab::id(Special::bos), Vocab::id(Special::eos)});

  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    std::string s;
    for (std::uint64_t k = 0, n = rng.uniform_index(40); k < n; ++k) {
      const auto r = rng.uniform_index(97);
      s.push_back(r == 95 ? '\n' : r == 96 ? '\t' : static_cast<char>(32 + r));
    }
    if (s.find(kPlaceholderGlyph) != std::string::npos) continue;
    CHECK(vocab.decode(tokenize_instruction_text(s, vocab)) == s);
  }

  // characters outside the vocabulary become the replacement glyph
  const auto unk = vocab.encode("caf\xC3\xA9");
  CHECK(unk.back() == Vocab::id(Special::unk));
  CHECK(vocab.decode(unk) == std::string("caf") + std::string(kReplacementChar));
  CHECK_THROWS_AS(vocab.decode({static_cast<int>(vocab.size())}), ValidationError);
}

TEST_CASE("placeholder substitution") {
  const auto vocab = small_vocab();
  const auto ids = tokenize_instruction_text("<asm> what does it do?", vocab);
  CHECK(std::count(ids.begin(), ids.end(), Vocab::id(Special::inst_placeholder)) == 1);
  const auto sub = substitute_placeholder(ids, 3);
  CHECK(std::count(sub.begin(), sub.end(), Vocab::id(Special::inst_start)) == 1);
  CHECK(std::count(sub.begin(), sub.end(), Vocab::id(Special::inst_end)) == 1);
  CHECK(std::count(sub.begin(), sub.end(), Vocab::id(Special::inst_code)) == 3);
  CHECK(std::count(sub.begin(), sub.end(), Vocab::id(Special::inst_placeholder)) == 0);
  CHECK(sub.size() == ids.size() + 4);
  CHECK_THROWS_AS(substitute_placeholder(tokenize_instruction_text("no code", vocab), 2), ValidationError);
  CHECK_THROWS_AS(substitute_placeholder(tokenize_instruction_text("<asm><asm>", vocab), 2), ValidationError);
}

TEST_CASE("vocab from stored tokens") {
  const auto vocab = small_vocab();
  CHECK(Vocab::from_tokens(vocab.tokens()) == vocab);
  auto broken = vocab.tokens();
  std::swap(broken[0], broken[1]);
  CHECK_THROWS_AS(Vocab::from_tokens(broken), SchemaError);
  auto dup = vocab.tokens();
  dup.push_back(dup.back());
  CHECK_THROWS_AS(Vocab::from_tokens(dup), SchemaError);
}

TEST_CASE("encoder stub") {
  const EncoderStub enc(16, 512, 4, false, 1);
  const auto fn = make_fn({"push rbp", "mov rbp, rsp", "pop rbp"});
  const auto a = enc.encode(fn);
  CHECK(a.rows == 3);
  CHECK(a.cols == 16);
  CHECK(a == enc.encode(fn));
  CHECK(a != enc.encode(make_fn({"push rbp", "mov rbp, rsp", "push rbp"})));
  CHECK(a != enc.encode(make_fn({"push rbp", "mov rsp, rbp", "pop rbp"})));
  CHECK(enc.encode(make_fn({"a", "b", "c", "d", "e", "f"})).rows == 4);
  CHECK_THROWS_AS(enc.encode(make_fn({})), ValidationError);
  CHECK(EncoderStub(16, 512, 4, true, 1).encode(fn).cols == 32);
  CHECK(EncoderStub::sub_tokens("mov [rbp-8], rdi") ==
        std::vector<std::string>{"m:mov", "o0:rbp", "o0:8", "o1:rdi"});
  CHECK(EncoderStub::sub_tokens("call parse_buf") == std::vector<std::string>{"m:call", "o0:parse", "o0:buf"});
}

TEST_CASE("project") {
  Rng rng(3);
  const Matrix e = Matrix::random_normal(4, 5, 1.0, rng);
  CHECK(project(e, Projector{false, Matrix::identity(5), {}, {}}) == e);
  const Matrix z = project(e, Projector{false, Matrix(5, 7), {}, {}});
  CHECK(z.rows == 4);
  CHECK(z.cols == 7);
  CHECK(std::all_of(z.data.begin(), z.data.end(), [](double x) { return x == 0.0; }));
  CHECK_THROWS_AS(project(e, Projector{false, Matrix(6, 7), {}, {}}), ShapeError);

  // 2x3 by 3x2 against a hand expansion
  Matrix a(2, 3), w(3, 2);
  a.data = {1, 2, 3, 4, 5, 6};
  w.data = {7, 8, 9, 10, 11, 12};
  const Matrix p = project(a, Projector{false, w, {}, {}});
  CHECK(p.data == std::vector<double>{1 * 7 + 2 * 9 + 3 * 11, 1 * 8 + 2 * 10 + 3 * 12, 4 * 7 + 5 * 9 + 6 * 11,
                                      4 * 8 + 5 * 10 + 6 * 12});

  // linear mode: project(ax + by) == a project(x) + b project(y)
  const Matrix w2 = Matrix::random_normal(5, 3, 1.0, rng);
  const Matrix x = Matrix::random_normal(2, 5, 1.0, rng), y = Matrix::random_normal(2, 5, 1.0, rng);
  Matrix comb = x;
  for (std::size_t i = 0; i < comb.data.size(); ++i) comb.data[i] = 2 * x.data[i] - 3 * y.data[i];
  const Matrix lhs = project(comb, Projector{false, w2, {}, {}});
  const Matrix px = project(x, Projector{false, w2, {}, {}}), py = project(y, Projector{false, w2, {}, {}});
  for (std::size_t i = 0; i < lhs.data.size(); ++i) CHECK(lhs.data[i] == doctest::Approx(2 * px.data[i] - 3 * py.data[i]));
}

TEST_CASE("embed_instruction and concat_embeddings") {
  const Model m = init_model(tiny_config(1), small_vocab());
  const auto rows = embed_instruction({9, 12, 9}, m.decoder);
  CHECK(rows.rows == 3);
  CHECK(std::equal(rows.row(0), rows.row(0) + 8, m.decoder.emb.row(9)));
  CHECK(std::equal(rows.row(1), rows.row(1) + 8, m.decoder.emb.row(12)));
  const auto perm = embed_instruction({12, 9, 9}, m.decoder);
  CHECK(std::equal(perm.row(0), perm.row(0) + 8, rows.row(1)));
  CHECK(embed_instruction({}, m.decoder).rows == 0);
  CHECK_THROWS_AS(embed_instruction({static_cast<int>(m.vocab.size())}, m.decoder), ValidationError);

  const Matrix code(3, 8, 1.0), q(5, 8, 2.0);
  const auto t = concat_embeddings(code, q);
  CHECK(t.rows == 8);
  CHECK(t(2, 0) == 1.0);
  CHECK(t(3, 0) == 2.0);
  CHECK(concat_embeddings(code, Matrix(0, 8)) == code);
  CHECK_THROWS_AS(concat_embeddings(Matrix(3, 8), Matrix(5, 16)), ShapeError);

  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto mrows = 1 + rng.uniform_index(6), qrows = rng.uniform_index(6);
    CHECK(concat_embeddings(Matrix(mrows, 4), Matrix(qrows, 4)).rows == mrows + qrows);
  }
}

TEST_CASE("softmax cross entropy analytics") {
  const std::vector<double> uniform(16, 0.0);
  CHECK(std::abs(softmax_cross_entropy(uniform.data(), 16, 5) - std::log(16.0)) < 1e-12);
  std::vector<double> peaked(16, 0.0);
  peaked[3] = 30.0;
  CHECK(softmax_cross_entropy(peaked.data(), 16, 3) < 1e-9);

  // model with zero output projection has uniform logits
  Model m = init_model(tiny_config(2), small_vocab());
  m.decoder.out.set_zero();
  m.decoder.out_bias.set_zero();
  Rng rng(1);
  std::vector<Sequence> seqs;
  for (int i = 0; i < 3; ++i) seqs.push_back(random_sequence(m, rng));
  CHECK(std::abs(forward_loss(m, make_batch(seqs)) - std::log(static_cast<double>(m.vocab.size()))) < 1e-9);
}

TEST_CASE("forward_loss matches an independent recomputation") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Model m = init_model(tiny_config(seed), small_vocab());
    Rng rng(seed + 100);
    std::vector<Sequence> seqs;
    while (masked_count(make_batch(seqs)) < 7) seqs.push_back(random_sequence(m, rng, 1));
    Batch batch = make_batch(seqs);
    // keep exactly seven targets
    std::size_t kept = 0;
    for (auto& s : batch.sequences) {
      for (auto& bit : s.mask) {
        if (bit && ++kept > 7) bit = 0;
      }
    }
    REQUIRE(masked_count(batch) == 7);
    CHECK(std::abs(forward_loss(m, batch) - oracle_loss(m, batch)) < 1e-12);
  }
}

TEST_CASE("forward_loss rejects batches without targets") {
  const Model m = init_model(tiny_config(1), small_vocab());
  Rng rng(1);
  auto s = random_sequence(m, rng);
  std::fill(s.mask.begin(), s.mask.end(), 0);
  CHECK_THROWS_AS(forward_loss(m, make_batch({s})), ValidationError);
  CHECK_THROWS_AS(backward(m, make_batch({s}), Stage::finetune), ValidationError);
}

TEST_CASE("masked token count law") {
  const Model m = init_model(tiny_config(3), small_vocab());
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Sequence> seqs;
    std::size_t expected = 0;
    for (std::uint64_t b = 0, n = 1 + rng.uniform_index(4); b < n; ++b) {
      std::vector<std::pair<std::string, std::string>> rounds;
      for (std::uint64_t r = 0, k = 1 + rng.uniform_index(3); r < k; ++r) {
        rounds.emplace_back(join(random_words(rng, 2)), join(random_words(rng, 1 + rng.uniform_index(4))));
        expected += m.vocab.encode(" " + rounds.back().second).size() + 1;
      }
      seqs.push_back(make_sequence(m, code_features(m, make_fn({"push rbp", "retn"})), rounds));
    }
    const auto batch = make_batch(seqs);
    CHECK(masked_count(batch) == expected);
    for (const auto& s : batch.sequences) {
      CHECK(s.ids.size() == batch.seq_len);
      for (std::size_t t = 0; t < s.ids.size(); ++t) {
        if (s.mask[t]) CHECK(s.ids[t] >= kSpecialCount - 6);
        if (s.ids[t] == Vocab::id(Special::inst_code) || s.ids[t] == Vocab::id(Special::pad)) CHECK(s.mask[t] == 0);
      }
    }
  }
}

TEST_CASE("decoder is causal and its softmax rows are normalized") {
  const Model m = init_model(tiny_config(5), small_vocab());
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(12);
    const Matrix x = Matrix::random_normal(n, 8, 1.0, rng);
    const Matrix base = decoder_logits(m.decoder, x);
    for (std::size_t r = 0; r < n; ++r) {
      const double* row = base.row(r);
      double mx = *std::max_element(row, row + base.cols), z = 0;
      for (std::size_t c = 0; c < base.cols; ++c) z += std::exp(row[c] - mx);
      double sum = 0;
      for (std::size_t c = 0; c < base.cols; ++c) sum += std::exp(row[c] - mx) / z;
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
    const std::size_t j = 1 + rng.uniform_index(n - 1);
    Matrix y = x;
    for (std::size_t c = 0; c < 8; ++c) y(j, c) += rng.normal();
    const Matrix pert = decoder_logits(m.decoder, y);
    for (std::size_t i = 0; i < j; ++i) {
      CHECK(std::equal(base.row(i), base.row(i) + base.cols, pert.row(i)));
    }
    CHECK(!std::equal(base.row(j), base.row(j) + base.cols, pert.row(j)));
  }
}

TEST_CASE("gradients match central finite differences") {
  Rng pick(2024);
  int checked = 0;
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    ModelConfig cfg = tiny_config(trial);
    cfg.layers = 1 + trial % 2;
    cfg.projector_mlp = trial % 3 == 1;
    cfg.projector_hidden = 5;
    cfg.two_tap = trial % 4 == 2;
    Model m = init_model(cfg, small_vocab());
    Rng rng(trial + 7);
    std::vector<Sequence> seqs;
    for (std::uint64_t i = 0, n = 1 + rng.uniform_index(2); i < n; ++i) seqs.push_back(random_sequence(m, rng));
    const Batch batch = make_batch(seqs);
    const Stage stage = trial % 5 == 0 ? Stage::pretrain : Stage::finetune;
    const auto grads = backward(m, batch, stage);
    CHECK(std::abs(grads.loss - forward_loss(m, batch)) < 1e-12);

    std::vector<std::string> names;
    for (const auto& [name, g] : grads.params) names.push_back(name);
    const auto& name = names[pick.uniform_index(names.size())];
    Matrix& p = param(m, name);
    const auto& g = grads.params.at(name);
    // favour entries that actually receive gradient
    std::size_t idx = pick.uniform_index(p.data.size());
    for (int tries = 0; tries < 20 && g.data[idx] == 0.0; ++tries) idx = pick.uniform_index(p.data.size());

    const double h = 1e-5, saved = p.data[idx];
    p.data[idx] = saved + h;
    const double up = forward_loss(m, batch);
    p.data[idx] = saved - h;
    const double down = forward_loss(m, batch);
    p.data[idx] = saved;
    const double numeric = (up - down) / (2 * h);
    const double analytic = g.data[idx];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    const double rel = std::abs(numeric - analytic) / denom;
    worst = std::max(worst, rel);
    CHECK_MESSAGE(rel <= 1e-4, name << "[" << idx << "] analytic " << analytic << " numeric " << numeric);
    ++checked;
  }
  CHECK(checked == 100);
  MESSAGE("worst relative error " << worst);
}

TEST_CASE("pretraining stage exposes only projector gradients") {
  const Model m = init_model(tiny_config(9), small_vocab());
  Rng rng(9);
  const auto batch = make_batch({random_sequence(m, rng)});
  const auto pre = backward(m, batch, Stage::pretrain);
  for (const auto& [name, g] : pre.params) CHECK(name.rfind("proj.", 0) == 0);
  CHECK(pre.params.count("proj.w") == 1);
  const auto fine = backward(m, batch, Stage::finetune);
  CHECK(fine.params.count("dec.emb") == 1);
  CHECK(fine.params.count("enc.table") == 0);
}

TEST_CASE("training stages") {
  const auto toy = make_toy_corpus(8, 1);
  const auto d1 = toy_d1(toy), d2 = toy_d2(toy);
  auto texts = dataset_texts(d1);
  const auto t2 = dataset_texts(d2);
  texts.insert(texts.end(), t2.begin(), t2.end());
  ModelConfig cfg = tiny_config(4);
  cfg.d_enc = 16;
  cfg.d_model = 16;
  const Model fresh = init_model(cfg, Vocab::build(texts));

  auto c1 = TrainConfig::defaults(Stage::pretrain);
  c1.steps = 10;
  c1.lr = 0.0;
  Model m = fresh;
  train_stage1(m, toy.corpus, d1, c1);
  CHECK(checkpoint_to_json(m) == checkpoint_to_json(fresh));

  auto c2 = TrainConfig::defaults(Stage::finetune);
  c2.steps = 10;
  c2.lr = 0.0;
  train_stage2(m, toy.corpus, d2, c2);
  CHECK(checkpoint_to_json(m) == checkpoint_to_json(fresh));

  c1.lr = 0.1;
  Model a = fresh, b = fresh;
  train_stage1(a, toy.corpus, d1, c1);
  train_stage1(b, toy.corpus, d1, c1);
  CHECK(a.projector.w == b.projector.w);
  CHECK(a.projector.w != fresh.projector.w);
  CHECK(serialize_params(a, ParamGroup::encoder) == serialize_params(fresh, ParamGroup::encoder));
  CHECK(serialize_params(a, ParamGroup::decoder) == serialize_params(fresh, ParamGroup::decoder));

  c2.lr = 0.1;
  train_stage2(a, toy.corpus, d2, c2);
  train_stage2(b, toy.corpus, d2, c2);
  CHECK(checkpoint_to_json(a) == checkpoint_to_json(b));
  CHECK(serialize_params(a, ParamGroup::encoder) == serialize_params(fresh, ParamGroup::encoder));
  CHECK(serialize_params(a, ParamGroup::decoder) != serialize_params(fresh, ParamGroup::decoder));

  CHECK_THROWS_AS(train_stage1(m, toy.corpus, Dataset{"D1", {}}, c1), ValidationError);
  CHECK_THROWS_AS(train_stage2(m, toy.corpus, Dataset{"D2", {}}, c2), ValidationError);
  CHECK_THROWS_AS(train_stage1(m, toy.corpus, d2, c1), ValidationError);
  CHECK_THROWS_AS(train_stage2(m, toy.corpus, d1, c2), ValidationError);
  CHECK_THROWS_AS(train_stage1(m, toy.corpus, d1, c2), ValidationError);

  CHECK(without_task(d2, TaskType::conv).task_counts().count(TaskType::conv) == 0);
  CHECK(without_task(d2, TaskType::conv).samples.size() == d2.samples.size() - 16);
}

TEST_CASE("toy copy task: stage 1 halves the loss and decodes the rendering") {
  const auto toy = make_toy_corpus(64, 0);
  const auto d1 = toy_d1(toy), d2 = toy_d2(toy);
  auto texts = dataset_texts(d1);
  const auto t2 = dataset_texts(d2);
  texts.insert(texts.end(), t2.begin(), t2.end());
  for (const auto& fn : toy.corpus.functions()) {
    for (const auto& ins : fn.instructions) texts.push_back(" " + ins.text);
  }
  ModelConfig cfg;
  cfg.d_enc = 64;
  cfg.d_model = 32;
  cfg.seed = 0;
  Model m = init_model(cfg, Vocab::build(texts));

  TrainConfig base;
  base.steps = 1000;
  base.lr = 0.6;
  base.clip_norm = 5;
  base.seed = 0;
  train_base_decoder(m, toy.corpus, {d1, d2}, base);

  const std::string enc_before = serialize_params(m, ParamGroup::encoder);
  const std::string dec_before = serialize_params(m, ParamGroup::decoder);
  auto c1 = TrainConfig::defaults(Stage::pretrain);
  c1.steps = 300;
  c1.lr = 0.15;
  c1.clip_norm = 5;
  c1.seed = 0;
  const auto curve = train_stage1(m, toy.corpus, d1, c1).loss_curve;
  CHECK(serialize_params(m, ParamGroup::encoder) == enc_before);
  CHECK(serialize_params(m, ParamGroup::decoder) == dec_before);
  auto mean = [](auto b, auto e) { return std::accumulate(b, e, 0.0) / static_cast<double>(std::distance(b, e)); };
  const double first = mean(curve.begin(), curve.begin() + 10), last = mean(curve.end() - 10, curve.end());
  MESSAGE("copy task loss " << first << " -> " << last);
  CHECK(last < 0.5 * first);

  c1.steps = 300;
  train_stage1(m, toy.corpus, d1, c1);
  std::size_t exact = 0;
  for (const auto& fn : toy.corpus.functions()) {
    const auto answers = interactive_answer(m, fn, {std::string(kToyQuestion), std::string(kToyQuestion)});
    REQUIRE(answers.size() == 2);
    CHECK(answers[0] == answers[1]);
    if (answers[0] == toy.descriptions.at(fn.source_key)) ++exact;
  }
  MESSAGE("exact renderings " << exact << "/" << toy.corpus.size());
  CHECK(exact == toy.corpus.size());
  CHECK(interactive_answer(m, toy.corpus.functions()[0], {}).empty());

  const auto dir = fs::temp_directory_path() / "asmalign_test_ckpt";
  fs::create_directories(dir);
  save_checkpoint(m, dir / "model.ckpt");
  const Model loaded = load_checkpoint(dir / "model.ckpt");
  CHECK(serialize_params(loaded, ParamGroup::projector) == serialize_params(m, ParamGroup::projector));
  CHECK(serialize_params(loaded, ParamGroup::decoder) == serialize_params(m, ParamGroup::decoder));
  CHECK(loaded.config == m.config);
  CHECK(interactive_answer(loaded, toy.corpus.functions()[1], {"describe"}) ==
        interactive_answer(m, toy.corpus.functions()[1], {"describe"}));
  auto j = checkpoint_to_json(m);
  j["schema"] = "checkpoint/v2";
  CHECK_THROWS_AS(checkpoint_from_json(j), SchemaError);
  fs::remove_all(dir);
}
