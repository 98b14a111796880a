#pragma once

#include <cstddef>
#include <vector>

#include "semfed/autodiff.hpp"
#include "semfed/matrix.hpp"

namespace semfed {

class Rng;

using ParamList = std::vector<ParamTensor*>;

// Dropout settings for one forward pass. A null rng means evaluation mode.
struct ForwardMode {
  Real dropout = 0;
  Rng* rng = nullptr;

  bool training() const { return rng != nullptr && dropout > 0; }
};

Var apply_dropout(Var x, const ForwardMode& mode);

// y = x W + b, with W stored in x out.
struct Linear {
  ParamTensor weight;
  ParamTensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  std::size_t in_dim() const { return weight.value.rows(); }
  std::size_t out_dim() const { return weight.value.cols(); }

  Var forward(Tape& tape, Var x);
  void collect(ParamList& out);
};

struct Embedding {
  ParamTensor table;

  Embedding() = default;
  Embedding(std::size_t count, std::size_t dim, Real stddev, Rng& rng);

  Var forward(Tape& tape, std::span<const std::size_t> indices);
  void collect(ParamList& out);
};

struct LayerNorm {
  ParamTensor gamma;
  ParamTensor beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);

  Var forward(Tape& tape, Var x);
  void collect(ParamList& out);
};

// Two-layer perceptron: Linear(in, hidden) -> activation -> Linear(hidden, out).
struct Mlp2 {
  Linear first;
  Linear second;
  Activation activation = Activation::kGelu;

  Mlp2() = default;
  Mlp2(std::size_t in, std::size_t hidden, std::size_t out, Activation act, Rng& rng);

  std::size_t in_dim() const { return first.in_dim(); }
  std::size_t out_dim() const { return second.out_dim(); }

  // Turns a square perceptron into the identity map (identity weights, zero
  // biases, identity activation).
  void set_identity();

  Var forward(Tape& tape, Var x);
  void collect(ParamList& out);
};

struct MultiHeadSelfAttention {
  Linear query, key, value, output;
  std::size_t heads = 1;
  bool causal = true;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(std::size_t dim, std::size_t heads, bool causal, Rng& rng);

  Var forward(Tape& tape, Var x, const ForwardMode& mode);
  void collect(ParamList& out);
};

// Pre-norm transformer block:
//   x += drop(attn(ln1(x)));  x += drop(ffn(ln2(x)))
struct TransformerBlock {
  LayerNorm norm1, norm2;
  MultiHeadSelfAttention attention;
  Linear ff_in, ff_out;
  Activation ff_activation = Activation::kGelu;

  TransformerBlock() = default;
  TransformerBlock(std::size_t dim, std::size_t heads, std::size_t ff_dim,
                   Activation ff_activation, Rng& rng);

  Var forward(Tape& tape, Var x, const ForwardMode& mode);
  void collect(ParamList& out);
};

void zero_grads(const ParamList& params);
void set_trainable(const ParamList& params, bool trainable);
// Flat copy of every parameter value, for bitwise before/after comparisons.
std::vector<Matrix> snapshot(const ParamList& params);
bool bit_equal(const std::vector<Matrix>& a, const std::vector<Matrix>& b);

}  // namespace semfed
