#include "semfed/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "semfed/error.hpp"
#include "semfed/rng.hpp"

namespace semfed {

ParamTensor::ParamTensor(Matrix v, bool trainable_)
    : value(std::move(v)), grad(value.rows(), value.cols()), trainable(trainable_) {}

void ParamTensor::zero_grad() {
  if (!grad.same_shape(value)) {
    grad = Matrix(value.rows(), value.cols());
  } else {
    grad.fill(Real(0));
  }
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kTanh: return "tanh";
    case Activation::kGelu: return "gelu";
    case Activation::kSilu: return "silu";
    case Activation::kRelu: return "relu";
  }
  return "unknown";
}

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::constant(Matrix m) { return push(std::move(m), false, nullptr); }

Var Tape::param(ParamTensor& p) {
  auto it = params_.find(&p);
  if (it != params_.end()) return Var{this, it->second};
  Var v = push(p.value, p.trainable, nullptr);
  nodes_[v.id].param = &p;
  params_.emplace(&p, v.id);
  return v;
}

Var Tape::push(Matrix value, bool requires_grad, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::accumulate(std::uint32_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.grad.same_shape(n.value)) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  if (loss.tape != this) fail(ErrorCode::kState, "loss belongs to another tape");
  const Matrix& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    fail(ErrorCode::kDimension, "backward requires a 1x1 loss");
  }
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad = Matrix(1, 1, Real(1));
  for (std::int64_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param != nullptr) {
      if (!n.param->grad.same_shape(n.param->value)) n.param->zero_grad();
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, static_cast<std::uint32_t>(id));
    }
  }
}

namespace {

Tape& tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) fail(ErrorCode::kState, "operands on different tapes");
  return *a.tape;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    fail(ErrorCode::kDimension, std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

constexpr Real kGeluC = Real(0.7978845608028654);  // sqrt(2/pi)
constexpr Real kGeluA = Real(0.044715);

Real sigmoid(Real x) {
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

Real activation_derivative(Activation kind, Real x, Real y) {
  switch (kind) {
    case Activation::kIdentity: return Real(1);
    case Activation::kSigmoid: return y * (Real(1) - y);
    case Activation::kTanh: return Real(1) - y * y;
    case Activation::kGelu: {
      const Real t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
      return Real(0.5) * (Real(1) + t) +
             Real(0.5) * x * (Real(1) - t * t) * kGeluC * (Real(1) + Real(3) * kGeluA * x * x);
    }
    case Activation::kSilu: {
      const Real s = sigmoid(x);
      return s + x * s * (Real(1) - s);
    }
    case Activation::kRelu: return x > 0 ? Real(1) : Real(0);
  }
  return Real(0);
}

}  // namespace

Real apply_activation(Activation kind, Real x) {
  switch (kind) {
    case Activation::kIdentity: return x;
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kTanh: return std::tanh(x);
    case Activation::kGelu:
      return Real(0.5) * x * (Real(1) + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
    case Activation::kSilu: return x * sigmoid(x);
    case Activation::kRelu: return x > 0 ? x : Real(0);
  }
  return x;
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value();
  out += b.value();
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a = a.id, b = b.id](Tape& tp, std::uint32_t self) {
    const Matrix& g = tp.node_grad(self);
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a = a.id, b = b.id](Tape& tp, std::uint32_t self) {
    const Matrix& g = tp.node_grad(self);
    tp.accumulate(a, g);
    if (tp.node_requires_grad(b)) {
      Matrix neg = g;
      neg *= Real(-1);
      tp.accumulate(b, neg);
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a = a.id, b = b.id](Tape& tp, std::uint32_t self) {
    const Matrix& g = tp.node_grad(self);
    if (tp.node_requires_grad(a)) {
      Matrix ga = g;
      const Matrix& bv = tp.node_value(b);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= bv[i];
      tp.accumulate(a, ga);
    }
    if (tp.node_requires_grad(b)) {
      Matrix gb = g;
      const Matrix& av = tp.node_value(a);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= av[i];
      tp.accumulate(b, gb);
    }
  });
}

Var scale(Var a, Real s) {
  Tape& t = *a.tape;
  Matrix out = a.value();
  out *= s;
  return t.push(std::move(out), t.requires_grad(a), [a = a.id, s](Tape& tp, std::uint32_t self) {
    Matrix g = tp.node_grad(self);
    g *= s;
    tp.accumulate(a, g);
  });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    fail(ErrorCode::kDimension, "add_row: row must be 1x" + std::to_string(av.cols()));
  }
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto o = out.row(r);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] += rv[c];
  }
  const bool rg = t.requires_grad(a) || t.requires_grad(row);
  return t.push(std::move(out), rg, [a = a.id, row = row.id](Tape& tp, std::uint32_t self) {
    const Matrix& g = tp.node_grad(self);
    tp.accumulate(a, g);
    if (tp.node_requires_grad(row)) {
      Matrix gr(1, g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto gi = g.row(r);
        for (std::size_t c = 0; c < gi.size(); ++c) gr[c] += gi[c];
      }
      tp.accumulate(row, gr);
    }
  });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Matrix out = matmul(a.value(), b.value());
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a = a.id, b = b.id](Tape& tp, std::uint32_t self) {
    const Matrix& g = tp.node_grad(self);
    if (tp.node_requires_grad(a)) tp.accumulate(a, matmul_bt(g, tp.node_value(b)));
    if (tp.node_requires_grad(b)) tp.accumulate(b, matmul_at(tp.node_value(a), g));
  });
}

Var matmul_bt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Matrix out = matmul_bt(a.value(), b.value());
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a = a.id, b = b.id](Tape& tp, std::uint32_t self) {
    const Matrix& g = tp.node_grad(self);
    if (tp.node_requires_grad(a)) tp.accumulate(a, matmul(g, tp.node_value(b)));
    if (tp.node_requires_grad(b)) tp.accumulate(b, matmul_at(g, tp.node_value(a)));
  });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  Tape& t = *table.tape;
  const Matrix& tv = table.value();
  Matrix out(indices.size(), tv.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= tv.rows()) {
      fail(ErrorCode::kInput, "gather index " + std::to_string(indices[r]) + " out of range " +
                                  std::to_string(tv.rows()));
    }
    auto src = tv.row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return t.push(std::move(out), t.requires_grad(table),
                [table = table.id, idx = std::move(idx)](Tape& tp, std::uint32_t self) {
                  const Matrix& g = tp.node_grad(self);
                  const Matrix& tv = tp.node_value(table);
                  Matrix gt(tv.rows(), tv.cols());
                  for (std::size_t r = 0; r < idx.size(); ++r) {
                    auto dst = gt.row(idx[r]);
                    auto src = g.row(r);
                    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                  }
                  tp.accumulate(table, gt);
                });
}

Var layer_norm(Var x, Var gamma, Var beta, Real eps) {
  Tape& t = tape_of(x, gamma);
  const Matrix& xv = x.value();
  const std::size_t n = xv.rows(), c = xv.cols();
  if (gamma.value().rows() != 1 || gamma.value().cols() != c ||
      !gamma.value().same_shape(beta.value())) {
    fail(ErrorCode::kDimension, "layer_norm parameter shape");
  }
  Matrix xhat(n, c);
  std::vector<Real> inv_std(n);
  Matrix out(n, c);
  const Matrix& gv = gamma.value();
  const Matrix& bv = beta.value();
  for (std::size_t r = 0; r < n; ++r) {
    auto xi = xv.row(r);
    Real mean = 0;
    for (Real v : xi) mean += v;
    mean /= Real(c);
    Real var = 0;
    for (Real v : xi) var += (v - mean) * (v - mean);
    var /= Real(c);
    const Real is = Real(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      xhat(r, j) = (xi[j] - mean) * is;
      out(r, j) = xhat(r, j) * gv[j] + bv[j];
    }
  }
  const bool rg = t.requires_grad(x) || t.requires_grad(gamma) || t.requires_grad(beta);
  return t.push(std::move(out), rg,
                [x = x.id, gamma = gamma.id, beta = beta.id, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](Tape& tp, std::uint32_t self) {
                  const Matrix& g = tp.node_grad(self);
                  const std::size_t n = g.rows(), c = g.cols();
                  const Matrix& gv = tp.node_value(gamma);
                  if (tp.node_requires_grad(gamma) || tp.node_requires_grad(beta)) {
                    Matrix dg(1, c), db(1, c);
                    for (std::size_t r = 0; r < n; ++r) {
                      for (std::size_t j = 0; j < c; ++j) {
                        dg[j] += g(r, j) * xhat(r, j);
                        db[j] += g(r, j);
                      }
                    }
                    tp.accumulate(gamma, dg);
                    tp.accumulate(beta, db);
                  }
                  if (tp.node_requires_grad(x)) {
                    Matrix dx(n, c);
                    for (std::size_t r = 0; r < n; ++r) {
                      Real sum_d = 0, sum_dx = 0;
                      for (std::size_t j = 0; j < c; ++j) {
                        const Real d = g(r, j) * gv[j];
                        sum_d += d;
                        sum_dx += d * xhat(r, j);
                      }
                      for (std::size_t j = 0; j < c; ++j) {
                        const Real d = g(r, j) * gv[j];
                        dx(r, j) = inv_std[r] / Real(c) *
                                   (Real(c) * d - sum_d - xhat(r, j) * sum_dx);
                      }
                    }
                    tp.accumulate(x, dx);
                  }
                });
}

Var softmax_rows(Var x, bool causal) {
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const std::size_t limit = causal ? std::min(r + 1, xv.cols()) : xv.cols();
    auto xi = xv.row(r);
    auto oi = out.row(r);
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, xi[j]);
    Real total = 0;
    for (std::size_t j = 0; j < limit; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      total += oi[j];
    }
    for (std::size_t j = 0; j < limit; ++j) oi[j] /= total;
  }
  return t.push(std::move(out), t.requires_grad(x), [x = x.id](Tape& tp, std::uint32_t self) {
    const Matrix& g = tp.node_grad(self);
    const Matrix& y = tp.node_value(self);
    Matrix dx(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      Real s = 0;
      for (std::size_t j = 0; j < y.cols(); ++j) s += g(r, j) * y(r, j);
      for (std::size_t j = 0; j < y.cols(); ++j) dx(r, j) = y(r, j) * (g(r, j) - s);
    }
    tp.accumulate(x, dx);
  });
}

Var activate(Var x, Activation kind) {
  if (kind == Activation::kIdentity) return x;
  Tape& t = *x.tape;
  Matrix out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply_activation(kind, out[i]);
  return t.push(std::move(out), t.requires_grad(x),
                [x = x.id, kind](Tape& tp, std::uint32_t self) {
                  const Matrix& g = tp.node_grad(self);
                  const Matrix& xv = tp.node_value(x);
                  const Matrix& yv = tp.node_value(self);
                  Matrix dx(g.rows(), g.cols());
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    dx[i] = g[i] * activation_derivative(kind, xv[i], yv[i]);
                  }
                  tp.accumulate(x, dx);
                });
}

Var mean_rows(Var x) {
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  if (xv.rows() == 0) fail(ErrorCode::kInput, "mean over zero rows");
  Matrix out(1, xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto xi = xv.row(r);
    for (std::size_t c = 0; c < xi.size(); ++c) out[c] += xi[c];
  }
  out *= Real(1) / Real(xv.rows());
  return t.push(std::move(out), t.requires_grad(x), [x = x.id](Tape& tp, std::uint32_t self) {
    const Matrix& g = tp.node_grad(self);
    const std::size_t n = tp.node_value(x).rows();
    Matrix dx(n, g.cols());
    const Real inv = Real(1) / Real(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < g.cols(); ++c) dx(r, c) = g[c] * inv;
    }
    tp.accumulate(x, dx);
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  if (begin + count > xv.rows()) fail(ErrorCode::kDimension, "slice_rows out of range");
  Matrix out(count, xv.cols());
  std::copy(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * xv.cols()),
            xv.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * xv.cols()),
            out.data().begin());
  return t.push(std::move(out), t.requires_grad(x),
                [x = x.id, begin](Tape& tp, std::uint32_t self) {
                  const Matrix& g = tp.node_grad(self);
                  const Matrix& xv = tp.node_value(x);
                  Matrix dx(xv.rows(), xv.cols());
                  std::copy(g.data().begin(), g.data().end(),
                            dx.data().begin() + static_cast<std::ptrdiff_t>(begin * xv.cols()));
                  tp.accumulate(x, dx);
                });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  if (begin + count > xv.cols()) fail(ErrorCode::kDimension, "slice_cols out of range");
  Matrix out(xv.rows(), count);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t c = 0; c < count; ++c) out(r, c) = xv(r, begin + c);
  }
  return t.push(std::move(out), t.requires_grad(x),
                [x = x.id, begin](Tape& tp, std::uint32_t self) {
                  const Matrix& g = tp.node_grad(self);
                  const Matrix& xv = tp.node_value(x);
                  Matrix dx(xv.rows(), xv.cols());
                  for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t c = 0; c < g.cols(); ++c) dx(r, begin + c) = g(r, c);
                  }
                  tp.accumulate(x, dx);
                });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorCode::kInput, "concat_rows of nothing");
  Tape& t = *parts[0].tape;
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.tape != &t) fail(ErrorCode::kState, "operands on different tapes");
    if (p.cols() != c) fail(ErrorCode::kDimension, "concat_rows column mismatch");
    total += p.rows();
    rg = rg || t.requires_grad(p);
  }
  Matrix out(total, c);
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    std::copy(pv.data().begin(), pv.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(at * c));
    ids.push_back(p.id);
    offsets.push_back(at);
    at += pv.rows();
  }
  return t.push(std::move(out), rg,
                [ids = std::move(ids), offsets = std::move(offsets)](Tape& tp, std::uint32_t self) {
                  const Matrix& g = tp.node_grad(self);
                  for (std::size_t i = 0; i < ids.size(); ++i) {
                    if (!tp.node_requires_grad(ids[i])) continue;
                    const Matrix& pv = tp.node_value(ids[i]);
                    Matrix gp(pv.rows(), pv.cols());
                    std::copy(g.data().begin() + static_cast<std::ptrdiff_t>(offsets[i] * g.cols()),
                              g.data().begin() +
                                  static_cast<std::ptrdiff_t>((offsets[i] + pv.rows()) * g.cols()),
                              gp.data().begin());
                    tp.accumulate(ids[i], gp);
                  }
                });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorCode::kInput, "concat_cols of nothing");
  Tape& t = *parts[0].tape;
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.tape != &t) fail(ErrorCode::kState, "operands on different tapes");
    if (p.rows() != r) fail(ErrorCode::kDimension, "concat_cols row mismatch");
    total += p.cols();
    rg = rg || t.requires_grad(p);
  }
  Matrix out(r, total);
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, at + j) = pv(i, j);
    }
    ids.push_back(p.id);
    offsets.push_back(at);
    at += pv.cols();
  }
  return t.push(std::move(out), rg,
                [ids = std::move(ids), offsets = std::move(offsets)](Tape& tp, std::uint32_t self) {
                  const Matrix& g = tp.node_grad(self);
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    if (!tp.node_requires_grad(ids[k])) continue;
                    const Matrix& pv = tp.node_value(ids[k]);
                    Matrix gp(pv.rows(), pv.cols());
                    for (std::size_t i = 0; i < pv.rows(); ++i) {
                      for (std::size_t j = 0; j < pv.cols(); ++j) gp(i, j) = g(i, offsets[k] + j);
                    }
                    tp.accumulate(ids[k], gp);
                  }
                });
}

Var reshape(Var x, std::size_t rows, std::size_t cols) {
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  if (rows * cols != xv.size()) fail(ErrorCode::kDimension, "reshape size mismatch");
  Matrix out(rows, cols, xv.storage());
  return t.push(std::move(out), t.requires_grad(x), [x = x.id](Tape& tp, std::uint32_t self) {
    const Matrix& g = tp.node_grad(self);
    const Matrix& xv = tp.node_value(x);
    tp.accumulate(x, Matrix(xv.rows(), xv.cols(), g.storage()));
  });
}

Var sum(Var x) {
  Tape& t = *x.tape;
  Real s = 0;
  for (Real v : x.value().data()) s += v;
  return t.push(Matrix(1, 1, s), t.requires_grad(x), [x = x.id](Tape& tp, std::uint32_t self) {
    const Matrix& xv = tp.node_value(x);
    tp.accumulate(x, Matrix(xv.rows(), xv.cols(), tp.node_grad(self)[0]));
  });
}

Var mse(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_same_shape(av, bv, "mse");
  if (av.size() == 0) fail(ErrorCode::kInput, "mse of empty matrices");
  Real s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  s /= Real(av.size());
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(Matrix(1, 1, s), rg, [a = a.id, b = b.id](Tape& tp, std::uint32_t self) {
    const Matrix& av = tp.node_value(a);
    const Matrix& bv = tp.node_value(b);
    const Real k = Real(2) * tp.node_grad(self)[0] / Real(av.size());
    Matrix ga(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i) ga[i] = k * (av[i] - bv[i]);
    if (tp.node_requires_grad(a)) tp.accumulate(a, ga);
    if (tp.node_requires_grad(b)) {
      ga *= Real(-1);
      tp.accumulate(b, ga);
    }
  });
}

Var squared_norm(Var x) {
  Tape& t = *x.tape;
  Real s = 0;
  for (Real v : x.value().data()) s += v * v;
  return t.push(Matrix(1, 1, s), t.requires_grad(x), [x = x.id](Tape& tp, std::uint32_t self) {
    Matrix g = tp.node_value(x);
    g *= Real(2) * tp.node_grad(self)[0];
    tp.accumulate(x, g);
  });
}

Var log_sigmoid(Var x) {
  Tape& t = *x.tape;
  Matrix out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real v = out[i];
    // log(sigmoid(v)) = -softplus(-v)
    out[i] = std::min(v, Real(0)) - std::log1p(std::exp(-std::abs(v)));
  }
  return t.push(std::move(out), t.requires_grad(x), [x = x.id](Tape& tp, std::uint32_t self) {
    const Matrix& g = tp.node_grad(self);
    const Matrix& xv = tp.node_value(x);
    Matrix dx(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * sigmoid(-xv[i]);
    tp.accumulate(x, dx);
  });
}

Var clamp(Var x, Real lo, Real hi) {
  Tape& t = *x.tape;
  Matrix out = x.value();
  for (auto& v : out.data()) v = std::clamp(v, lo, hi);
  return t.push(std::move(out), t.requires_grad(x),
                [x = x.id, lo, hi](Tape& tp, std::uint32_t self) {
                  const Matrix& g = tp.node_grad(self);
                  const Matrix& xv = tp.node_value(x);
                  Matrix dx(g.rows(), g.cols());
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    dx[i] = (xv[i] >= lo && xv[i] <= hi) ? g[i] : Real(0);
                  }
                  tp.accumulate(x, dx);
                });
}

Var cross_entropy(Var logits, std::span<const std::int64_t> targets) {
  Tape& t = *logits.tape;
  const Matrix& lv = logits.value();
  if (targets.size() != lv.rows()) fail(ErrorCode::kDimension, "cross_entropy target count");
  Matrix probs(lv.rows(), lv.cols());
  Real loss = 0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (targets[r] < 0) continue;
    if (static_cast<std::size_t>(targets[r]) >= lv.cols()) {
      fail(ErrorCode::kInput, "cross_entropy target out of vocabulary");
    }
    auto li = lv.row(r);
    auto pi = probs.row(r);
    Real mx = li[0];
    for (Real v : li) mx = std::max(mx, v);
    Real total = 0;
    for (std::size_t j = 0; j < li.size(); ++j) {
      pi[j] = std::exp(li[j] - mx);
      total += pi[j];
    }
    const Real log_total = std::log(total);
    loss += -(li[static_cast<std::size_t>(targets[r])] - mx - log_total);
    for (auto& p : pi) p /= total;
  }
  std::vector<std::int64_t> tg(targets.begin(), targets.end());
  return t.push(Matrix(1, 1, loss), t.requires_grad(logits),
                [logits = logits.id, probs = std::move(probs), tg = std::move(tg)](
                    Tape& tp, std::uint32_t self) {
                  const Real g = tp.node_grad(self)[0];
                  Matrix dl(probs.rows(), probs.cols());
                  for (std::size_t r = 0; r < probs.rows(); ++r) {
                    if (tg[r] < 0) continue;
                    for (std::size_t j = 0; j < probs.cols(); ++j) dl(r, j) = g * probs(r, j);
                    dl(r, static_cast<std::size_t>(tg[r])) -= g;
                  }
                  tp.accumulate(logits, dl);
                });
}

Var dropout(Var x, Real p, Rng& rng) {
  if (p <= Real(0)) return x;
  if (p >= Real(1)) fail(ErrorCode::kConfig, "dropout rate must be < 1");
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  Matrix mask(xv.rows(), xv.cols());
  const Real keep = Real(1) / (Real(1) - p);
  for (auto& m : mask.data()) m = rng.uniform() < double(p) ? Real(0) : keep;
  Matrix out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return t.push(std::move(out), t.requires_grad(x),
                [x = x.id, mask = std::move(mask)](Tape& tp, std::uint32_t self) {
                  Matrix g = tp.node_grad(self);
                  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
                  tp.accumulate(x, g);
                });
}

}  // namespace semfed
