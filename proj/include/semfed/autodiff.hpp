#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "semfed/matrix.hpp"

namespace semfed {

class Rng;

// A parameter and its accumulated gradient. Frozen tensors (trainable ==
// false) never receive gradient and are skipped by the optimizer.
struct ParamTensor {
  Matrix value;
  Matrix grad;
  bool trainable = true;

  ParamTensor() = default;
  explicit ParamTensor(Matrix v, bool trainable_ = true);

  void zero_grad();
};

enum class Activation : std::uint8_t {
  kIdentity = 0,
  kSigmoid = 1,
  kTanh = 2,
  kGelu = 3,
  kSilu = 4,
  kRelu = 5,
};

const char* activation_name(Activation a);

class Tape;

// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Reverse-mode gradient recorder for the fixed operation set below. Nodes are
// appended in evaluation order, which is a topological order, so backward is
// a single reverse sweep.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix m);
  // Registers a parameter leaf, once per tape. Gradient is accumulated into
  // p.grad on backward iff p.trainable.
  Var param(ParamTensor& p);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  // Empty if no gradient reached the node.
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 for a 1x1 loss and sweeps backwards.
  void backward(Var loss);

  // Used by operation implementations.
  using BackwardFn = std::function<void(Tape&, std::uint32_t)>;
  Var push(Matrix value, bool requires_grad, BackwardFn backward);
  void accumulate(std::uint32_t id, const Matrix& g);
  const Matrix& node_grad(std::uint32_t id) const { return nodes_[id].grad; }
  const Matrix& node_value(std::uint32_t id) const { return nodes_[id].value; }
  bool node_requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    ParamTensor* param = nullptr;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const ParamTensor*, std::uint32_t> params_;
};

// ---- operations ----------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, Real s);
// a (n x c) + row (1 x c) broadcast over rows.
Var add_row(Var a, Var row);

Var matmul(Var a, Var b);
Var matmul_bt(Var a, Var b);  // a * b^T

// Embedding lookup: rows of `table` selected by `indices`.
Var gather_rows(Var table, std::span<const std::size_t> indices);

Var layer_norm(Var x, Var gamma, Var beta, Real eps = Real(1e-5));
// Row-wise softmax. With `causal`, entry (i, j) for j > i is masked out.
Var softmax_rows(Var x, bool causal = false);
Var activate(Var x, Activation kind);

Var mean_rows(Var x);  // (n x c) -> (1 x c)
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var reshape(Var x, std::size_t rows, std::size_t cols);

Var sum(Var x);           // -> 1x1
Var mse(Var a, Var b);    // mean squared difference -> 1x1
Var squared_norm(Var x);  // sum of squares -> 1x1
Var log_sigmoid(Var x);   // elementwise, numerically stable
Var clamp(Var x, Real lo, Real hi);
// Sum over rows of -log softmax(logits[r])[targets[r]]; rows whose target is
// negative are ignored. Returns 1x1.
Var cross_entropy(Var logits, std::span<const std::int64_t> targets);
// Inverted dropout; identity when p == 0.
Var dropout(Var x, Real p, Rng& rng);

// Scalar helpers on plain values, shared with test oracles.
Real apply_activation(Activation kind, Real x);

}  // namespace semfed
