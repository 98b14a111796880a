// Built against the 64-bit twin of the library.
#include <cmath>
#include <string>

#include "doctest.h"
#include "helpers.hpp"
#include "semfed/fkd.hpp"
#include "semfed/grad_check.hpp"
#include "semfed/layers.hpp"
#include "semfed/promptrec.hpp"
#include "semfed/seqrec.hpp"

using namespace semfed;
using testing::random_matrix;

namespace {

constexpr double kTolerance = 1e-4;

void randomize(const ParamList& params, Rng& rng, Real scale = Real(0.5)) {
  for (ParamTensor* p : params) {
    for (auto& v : p->value.data()) v += rng.uniform_real(-scale, scale);
  }
}

// sum(y .* W) with a fixed random W, so every output entry gets a distinct
// upstream gradient.
Var weighted_sum(Tape& tape, Var y) {
  Rng rng(derive_seed(99, "weights", y.rows() * 1000 + y.cols()));
  return sum(mul(y, tape.constant(random_matrix(y.rows(), y.cols(), rng))));
}

double check(const LossBuilder& f, const ParamList& params) {
  const GradCheckResult r = grad_check_detailed(f, params, 1e-3);
  INFO("param " << r.param_index << " entry " << r.entry_index << " analytic " << r.analytic
                << " numeric " << r.numeric);
  CHECK(r.max_error < kTolerance);
  return r.max_error;
}

// Values bounded away from zero, for piecewise-linear functions.
Matrix off_kink(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m = random_matrix(rows, cols, rng, Real(0.2), Real(1.5));
  for (std::size_t i = 0; i < m.size(); i += 2) m[i] = -m[i];
  return m;
}

}  // namespace

TEST_CASE("quadratic is exact under central differences") {
  ParamTensor x(Matrix(1, 1, Real(3)));
  const double err = grad_check([&](Tape& t) { Var v = t.param(x); return mul(v, v); }, {&x});
  CHECK(err < 1e-6);
}

TEST_CASE("gradient of a softmax row sum vanishes") {
  Rng rng(1);
  ParamTensor x(random_matrix(1, 5, rng, -3, 3));
  const double err =
      grad_check([&](Tape& t) { return sum(softmax_rows(t.param(x))); }, {&x});
  CHECK(err < 1e-5);
}

TEST_CASE("elementwise and structural operations") {
  Rng rng(2);
  ParamTensor a(random_matrix(3, 4, rng)), b(random_matrix(3, 4, rng));
  ParamTensor row(random_matrix(1, 4, rng)), c(random_matrix(4, 5, rng));
  ParamTensor d(random_matrix(5, 4, rng));
  const ParamList ps = {&a, &b, &row, &c, &d};
  SUBCASE("add sub mul scale") {
    check([&](Tape& t) {
      Var x = t.param(a), y = t.param(b);
      return weighted_sum(t, scale(add(mul(x, y), sub(x, y)), Real(1.5)));
    }, ps);
  }
  SUBCASE("add_row") {
    check([&](Tape& t) { return weighted_sum(t, add_row(t.param(a), t.param(row))); }, ps);
  }
  SUBCASE("matmul and matmul_bt") {
    check([&](Tape& t) {
      return add(weighted_sum(t, matmul(t.param(a), t.param(c))),
                 weighted_sum(t, matmul_bt(t.param(a), t.param(d))));
    }, ps);
  }
  SUBCASE("slices concat reshape mean") {
    check([&](Tape& t) {
      Var x = t.param(a), y = t.param(b);
      const Var rows[] = {slice_rows(x, 1, 2), y};
      const Var cols[] = {slice_cols(x, 0, 3), mean_rows(y), t.param(row)};
      Var r = reshape(concat_rows(rows), 4, 5);
      return add(weighted_sum(t, r), weighted_sum(t, concat_cols(std::span(cols, 1))));
    }, ps);
  }
  SUBCASE("reductions") {
    check([&](Tape& t) {
      Var x = t.param(a), y = t.param(b);
      return add(add(sum(x), mse(x, y)), squared_norm(y));
    }, ps);
  }
  SUBCASE("log_sigmoid and clamp") {
    check([&](Tape& t) {
      return add(weighted_sum(t, log_sigmoid(scale(t.param(a), Real(4)))),
                 weighted_sum(t, clamp(t.param(b), Real(-5), Real(5))));
    }, ps);
  }
}

TEST_CASE("activations") {
  Rng rng(3);
  ParamTensor x(off_kink(3, 5, rng));
  for (Activation act : {Activation::kIdentity, Activation::kSigmoid, Activation::kTanh,
                         Activation::kGelu, Activation::kSilu, Activation::kRelu}) {
    INFO(activation_name(act));
    check([&](Tape& t) { return weighted_sum(t, activate(t.param(x), act)); }, {&x});
  }
}

TEST_CASE("softmax") {
  Rng rng(4);
  ParamTensor x(random_matrix(4, 4, rng, -2, 2));
  for (bool causal : {false, true}) {
    check([&](Tape& t) { return weighted_sum(t, softmax_rows(t.param(x), causal)); }, {&x});
  }
}

TEST_CASE("cross entropy") {
  Rng rng(5);
  ParamTensor x(random_matrix(3, 6, rng, -2, 2));
  const std::int64_t targets[] = {4, -1, 0};
  check([&](Tape& t) { return cross_entropy(t.param(x), targets); }, {&x});
}

TEST_CASE("dropout with a fixed mask") {
  Rng rng(6);
  ParamTensor x(random_matrix(3, 4, rng));
  check([&](Tape& t) {
    Rng mask(17);
    return weighted_sum(t, dropout(t.param(x), Real(0.4), mask));
  }, {&x});
}

TEST_CASE("linear embedding layer norm") {
  Rng rng(7);
  Linear lin(5, 3, rng);
  Embedding emb(6, 5, Real(0.5), rng);
  LayerNorm ln(5);
  ParamTensor x(random_matrix(4, 5, rng));
  ParamList ps = {&x};
  lin.collect(ps);
  emb.collect(ps);
  ln.collect(ps);
  randomize(ps, rng);
  const std::size_t idx[] = {0, 3, 3, 5};
  check([&](Tape& t) {
    Var h = add(t.param(x), emb.forward(t, idx));
    return weighted_sum(t, lin.forward(t, ln.forward(t, h)));
  }, ps);
}

TEST_CASE("multi-head self-attention") {
  for (std::size_t heads : {1, 2}) {
    for (bool causal : {true, false}) {
      Rng rng(8 + heads);
      MultiHeadSelfAttention attn(8, heads, causal, rng);
      ParamTensor x(random_matrix(5, 8, rng));
      ParamList ps = {&x};
      attn.collect(ps);
      randomize(ps, rng, Real(0.2));
      INFO("heads " << heads << " causal " << causal);
      check([&](Tape& t) { return weighted_sum(t, attn.forward(t, t.param(x), ForwardMode{})); },
            ps);
    }
  }
}

TEST_CASE("transformer block and perceptron") {
  Rng rng(10);
  TransformerBlock block(8, 2, 8, Activation::kGelu, rng);
  Mlp2 mlp(8, 6, 4, Activation::kSilu, rng);
  ParamTensor x(random_matrix(4, 8, rng));
  ParamList ps = {&x};
  block.collect(ps);
  mlp.collect(ps);
  randomize(ps, rng, Real(0.2));
  check([&](Tape& t) {
    return weighted_sum(t, mlp.forward(t, block.forward(t, t.param(x), ForwardMode{})));
  }, ps);
}

TEST_CASE("sequential model next-item loss") {
  SeqRecConfig cfg;
  cfg.d = 8;
  cfg.num_blocks = 2;
  cfg.num_heads = 2;
  cfg.max_len = 6;
  SeqRecModel model(6, cfg);
  const std::vector<std::vector<std::size_t>> seqs = {{0, 1, 2, 3}, {5, 4, 1}};
  check([&](Tape& t) { return pretrain_loss(t, model, seqs, ForwardMode{}); }, model.params());
}

TEST_CASE("full distillation objective on a toy model") {
  Rng rng(12);
  FkdModel model(8, 6, 8, 3);
  randomize(model.params(), rng, Real(0.1));
  std::vector<FkdExample> batch;
  for (std::size_t m : {3, 4}) {
    FkdExample ex;
    ex.id = random_matrix(m, 8, rng);
    ex.text = random_matrix(m, 6, rng);
    ex.user_minus_last = random_matrix(1, 8, rng);
    ex.cf_id = random_matrix(m, 8, rng);
    ex.cf_text = random_matrix(m, 6, rng);
    batch.push_back(ex);
  }
  FkdConfig cfg;
  check([&](Tape& t) { return total_loss(t, model, batch, cfg).total; }, model.params());
}

TEST_CASE("stage-2 token loss on a toy model") {
  TinyLmConfig lc;
  lc.hidden = 8;
  lc.num_blocks = 1;
  lc.num_heads = 2;
  lc.context = 16;
  PromptModel model(TinyLM(Vocabulary(default_instruction_words(), 4), lc), 5, 7, 2, true,
                    default_template(), 3);
  Rng rng(13);
  const Matrix user = random_matrix(1, 5, rng), item = random_matrix(1, 7, rng);
  ParamList ps = model.projector_params();
  for (ParamTensor* p : model.lm.params()) ps.push_back(p);
  check([&](Tape& t) { return ce_loss(t, model.lm, model.prompt(t, user, item, 2)); }, ps);
}
