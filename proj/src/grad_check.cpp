#include "semfed/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "semfed/error.hpp"

namespace semfed {

namespace {

double evaluate(const LossBuilder& f) {
  Tape tape;
  Var loss = f(tape);
  const Matrix& v = loss.value();
  if (v.rows() != 1 || v.cols() != 1) fail(ErrorCode::kDimension, "loss is not a scalar");
  if (!std::isfinite(v[0])) fail(ErrorCode::kEvaluation, "loss is not finite");
  return double(v[0]);
}

}  // namespace

GradCheckResult grad_check_detailed(const LossBuilder& f, const ParamList& params, double h,
                                    std::size_t max_entries) {
  if (!(h > 0)) fail(ErrorCode::kInput, "finite-difference step must be positive");
  zero_grads(params);
  {
    Tape tape;
    Var loss = f(tape);
    if (!std::isfinite(loss.value()[0])) fail(ErrorCode::kEvaluation, "loss is not finite");
    tape.backward(loss);
  }
  std::vector<Matrix> analytic;
  for (const ParamTensor* p : params) analytic.push_back(p->grad);

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    ParamTensor& p = *params[pi];
    const std::size_t n = p.value.size();
    const std::size_t stride =
        (max_entries == 0 || n <= max_entries) ? 1 : (n + max_entries - 1) / max_entries;
    for (std::size_t i = 0; i < n; i += stride) {
      const Real original = p.value[i];
      p.value[i] = static_cast<Real>(double(original) + h);
      const double plus = evaluate(f);
      p.value[i] = static_cast<Real>(double(original) - h);
      const double minus = evaluate(f);
      p.value[i] = original;
      const double numeric = (plus - minus) / (2 * h);
      const double a = p.trainable ? double(analytic[pi][i]) : numeric;
      const double err =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (err > result.max_error) {
        result = {err, pi, i, a, numeric};
      }
    }
  }
  zero_grads(params);
  return result;
}

double grad_check(const LossBuilder& f, const ParamList& params, double h,
                  std::size_t max_entries) {
  return grad_check_detailed(f, params, h, max_entries).max_error;
}

}  // namespace semfed
