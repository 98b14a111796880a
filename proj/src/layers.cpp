#include "semfed/layers.hpp"

#include <cmath>

#include "semfed/error.hpp"
#include "semfed/rng.hpp"

namespace semfed {

Var apply_dropout(Var x, const ForwardMode& mode) {
  if (!mode.training()) return x;
  return dropout(x, mode.dropout, *mode.rng);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng) {
  const Real bound = Real(1) / std::sqrt(Real(in));
  Matrix w(in, out);
  for (auto& v : w.data()) v = rng.uniform_real(-bound, bound);
  weight = ParamTensor(std::move(w));
  bias = ParamTensor(Matrix(1, out));
}

Var Linear::forward(Tape& tape, Var x) {
  return add_row(matmul(x, tape.param(weight)), tape.param(bias));
}

void Linear::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Embedding::Embedding(std::size_t count, std::size_t dim, Real stddev, Rng& rng) {
  Matrix t(count, dim);
  for (auto& v : t.data()) v = static_cast<Real>(rng.normal(0.0, stddev));
  table = ParamTensor(std::move(t));
}

Var Embedding::forward(Tape& tape, std::span<const std::size_t> indices) {
  return gather_rows(tape.param(table), indices);
}

void Embedding::collect(ParamList& out) { out.push_back(&table); }

LayerNorm::LayerNorm(std::size_t dim)
    : gamma(Matrix(1, dim, Real(1))), beta(Matrix(1, dim)) {}

Var LayerNorm::forward(Tape& tape, Var x) {
  return layer_norm(x, tape.param(gamma), tape.param(beta));
}

void LayerNorm::collect(ParamList& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

Mlp2::Mlp2(std::size_t in, std::size_t hidden, std::size_t out, Activation act, Rng& rng)
    : first(in, hidden, rng), second(hidden, out, rng), activation(act) {}

void Mlp2::set_identity() {
  const std::size_t n = first.in_dim();
  if (first.out_dim() != n || second.in_dim() != n || second.out_dim() != n) {
    fail(ErrorCode::kDimension, "identity perceptron must be square");
  }
  first.weight.value = Matrix::identity(n);
  second.weight.value = Matrix::identity(n);
  first.bias.value.fill(Real(0));
  second.bias.value.fill(Real(0));
  activation = Activation::kIdentity;
}

Var Mlp2::forward(Tape& tape, Var x) {
  return second.forward(tape, activate(first.forward(tape, x), activation));
}

void Mlp2::collect(ParamList& out) {
  first.collect(out);
  second.collect(out);
}

MultiHeadSelfAttention::MultiHeadSelfAttention(std::size_t dim, std::size_t heads_,
                                               bool causal_, Rng& rng)
    : query(dim, dim, rng),
      key(dim, dim, rng),
      value(dim, dim, rng),
      output(dim, dim, rng),
      heads(heads_),
      causal(causal_) {
  if (heads == 0 || dim % heads != 0) {
    fail(ErrorCode::kConfig, "attention dim " + std::to_string(dim) +
                                 " not divisible by heads " + std::to_string(heads));
  }
}

Var MultiHeadSelfAttention::forward(Tape& tape, Var x, const ForwardMode& mode) {
  const std::size_t dim = query.out_dim();
  const std::size_t head_dim = dim / heads;
  const Real inv_sqrt = Real(1) / std::sqrt(Real(head_dim));
  Var q = query.forward(tape, x);
  Var k = key.forward(tape, x);
  Var v = value.forward(tape, x);
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : slice_cols(q, h * head_dim, head_dim);
    Var kh = heads == 1 ? k : slice_cols(k, h * head_dim, head_dim);
    Var vh = heads == 1 ? v : slice_cols(v, h * head_dim, head_dim);
    Var probs = softmax_rows(scale(matmul_bt(qh, kh), inv_sqrt), causal);
    probs = apply_dropout(probs, mode);
    outs.push_back(matmul(probs, vh));
  }
  Var merged = heads == 1 ? outs[0] : concat_cols(outs);
  return output.forward(tape, merged);
}

void MultiHeadSelfAttention::collect(ParamList& out) {
  query.collect(out);
  key.collect(out);
  value.collect(out);
  output.collect(out);
}

TransformerBlock::TransformerBlock(std::size_t dim, std::size_t heads, std::size_t ff_dim,
                                   Activation act, Rng& rng)
    : norm1(dim),
      norm2(dim),
      attention(dim, heads, true, rng),
      ff_in(dim, ff_dim, rng),
      ff_out(ff_dim, dim, rng),
      ff_activation(act) {}

Var TransformerBlock::forward(Tape& tape, Var x, const ForwardMode& mode) {
  Var h = add(x, apply_dropout(attention.forward(tape, norm1.forward(tape, x), mode), mode));
  Var f = ff_out.forward(tape, activate(ff_in.forward(tape, norm2.forward(tape, h)), ff_activation));
  return add(h, apply_dropout(f, mode));
}

void TransformerBlock::collect(ParamList& out) {
  norm1.collect(out);
  attention.collect(out);
  norm2.collect(out);
  ff_in.collect(out);
  ff_out.collect(out);
}

void zero_grads(const ParamList& params) {
  for (ParamTensor* p : params) p->zero_grad();
}

void set_trainable(const ParamList& params, bool trainable) {
  for (ParamTensor* p : params) p->trainable = trainable;
}

std::vector<Matrix> snapshot(const ParamList& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const ParamTensor* p : params) out.push_back(p->value);
  return out;
}

bool bit_equal(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!bit_equal(a[i], b[i])) return false;
  }
  return true;
}

}  // namespace semfed
