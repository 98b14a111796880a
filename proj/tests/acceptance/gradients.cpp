// Built against the 64-bit twin of the library.
#include "gradients.hpp"

#include <functional>
#include <vector>

#include "semfed/fkd.hpp"
#include "semfed/grad_check.hpp"
#include "semfed/layers.hpp"
#include "semfed/promptrec.hpp"
#include "semfed/rng.hpp"
#include "semfed/seqrec.hpp"

using namespace semfed;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& x : m.data()) x = rng.uniform_real(-1, 1);
  return m;
}

void randomize(const ParamList& params, Rng& rng, Real scale) {
  for (ParamTensor* p : params) {
    for (auto& v : p->value.data()) v += rng.uniform_real(-scale, scale);
  }
}

Var weighted_sum(Tape& tape, Var y) {
  Rng rng(derive_seed(99, "weights", y.rows() * 1000 + y.cols()));
  return sum(mul(y, tape.constant(random_matrix(y.rows(), y.cols(), rng))));
}

struct Case {
  std::string name;
  std::function<double()> run;
};

}  // namespace

double acceptance_gradient_suite(std::string& worst) {
  std::vector<Case> cases;

  cases.push_back({"linear+embedding+layernorm", [] {
    Rng rng(7);
    Linear lin(5, 3, rng);
    Embedding emb(6, 5, Real(0.5), rng);
    LayerNorm ln(5);
    ParamTensor x(random_matrix(4, 5, rng));
    ParamList ps = {&x};
    lin.collect(ps);
    emb.collect(ps);
    ln.collect(ps);
    randomize(ps, rng, Real(0.5));
    const std::size_t idx[] = {0, 3, 3, 5};
    return grad_check([&](Tape& t) {
      return weighted_sum(t, lin.forward(t, ln.forward(t, add(t.param(x), emb.forward(t, idx)))));
    }, ps);
  }});

  for (Activation act : {Activation::kGelu, Activation::kSilu, Activation::kTanh,
                         Activation::kSigmoid, Activation::kRelu}) {
    cases.push_back({std::string("mlp2/") + activation_name(act), [act] {
      Rng rng(3);
      Mlp2 mlp(6, 8, 4, act, rng);
      ParamTensor x(random_matrix(3, 6, rng));
      ParamList ps = {&x};
      mlp.collect(ps);
      return grad_check([&](Tape& t) { return weighted_sum(t, mlp.forward(t, t.param(x))); }, ps);
    }});
  }

  for (std::size_t heads : {1, 2}) {
    cases.push_back({"attention/" + std::to_string(heads), [heads] {
      Rng rng(8 + heads);
      MultiHeadSelfAttention attn(8, heads, true, rng);
      ParamTensor x(random_matrix(5, 8, rng));
      ParamList ps = {&x};
      attn.collect(ps);
      randomize(ps, rng, Real(0.2));
      return grad_check(
          [&](Tape& t) { return weighted_sum(t, attn.forward(t, t.param(x), ForwardMode{})); }, ps);
    }});
  }

  cases.push_back({"transformer block", [] {
    Rng rng(10);
    TransformerBlock block(8, 2, 8, Activation::kGelu, rng);
    ParamTensor x(random_matrix(4, 8, rng));
    ParamList ps = {&x};
    block.collect(ps);
    randomize(ps, rng, Real(0.2));
    return grad_check(
        [&](Tape& t) { return weighted_sum(t, block.forward(t, t.param(x), ForwardMode{})); }, ps);
  }});

  cases.push_back({"seqrec next-item loss", [] {
    SeqRecConfig cfg;
    cfg.d = 8;
    cfg.num_blocks = 2;
    cfg.num_heads = 2;
    cfg.max_len = 6;
    SeqRecModel model(8, cfg);
    const std::vector<std::vector<std::size_t>> seqs = {{0, 1, 2, 3}, {7, 4, 1}};
    return grad_check([&](Tape& t) { return pretrain_loss(t, model, seqs, ForwardMode{}); },
                      model.params());
  }});

  cases.push_back({"distillation objective", [] {
    Rng rng(12);
    FkdModel model(8, 6, 8, 3);
    randomize(model.params(), rng, Real(0.1));
    std::vector<FkdExample> batch;
    for (std::size_t m : {3, 4}) {
      batch.push_back(FkdExample{random_matrix(m, 8, rng), random_matrix(m, 6, rng),
                                 random_matrix(1, 8, rng), random_matrix(m, 8, rng),
                                 random_matrix(m, 6, rng)});
    }
    const FkdConfig cfg;
    return grad_check([&](Tape& t) { return total_loss(t, model, batch, cfg).total; },
                      model.params());
  }});

  cases.push_back({"stage-2 token loss", [] {
    TinyLmConfig lc;
    lc.hidden = 8;
    lc.num_blocks = 1;
    lc.num_heads = 2;
    lc.context = 16;
    PromptModel model(TinyLM(Vocabulary(default_instruction_words(), 8), lc), 5, 7, 2, true,
                      default_template(), 3);
    Rng rng(13);
    const Matrix user = random_matrix(1, 5, rng), item = random_matrix(1, 7, rng);
    ParamList ps = model.projector_params();
    for (ParamTensor* p : model.lm.params()) ps.push_back(p);
    return grad_check([&](Tape& t) { return ce_loss(t, model.lm, model.prompt(t, user, item, 2)); },
                      ps);
  }});

  double max_error = 0;
  for (const Case& c : cases) {
    const double e = c.run();
    if (e >= max_error) {
      max_error = e;
      worst = c.name;
    }
  }
  return max_error;
}
