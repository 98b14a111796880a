#include "semfed/adam.hpp"

#include <cmath>

#include "semfed/error.hpp"

namespace semfed {

AdamState::AdamState(const ParamTensor& param, const AdamConfig& cfg)
    : m(param.value.rows(), param.value.cols()),
      v(param.value.rows(), param.value.cols()),
      lr(cfg.lr),
      beta1(cfg.beta1),
      beta2(cfg.beta2),
      eps(cfg.eps) {}

void adam_step(ParamTensor& param, AdamState& state) {
  if (!param.trainable) return;
  if (!state.m.same_shape(param.value) || !state.v.same_shape(param.value)) {
    fail(ErrorCode::kState, "adam state shape does not match parameter");
  }
  if (!param.grad.same_shape(param.value)) {
    fail(ErrorCode::kState, "parameter gradient not populated");
  }
  ++state.step_count;
  const auto t = static_cast<double>(state.step_count);
  const Real c1 = static_cast<Real>(1.0 - std::pow(double(state.beta1), t));
  const Real c2 = static_cast<Real>(1.0 - std::pow(double(state.beta2), t));
  auto value = param.value.data();
  auto grad = param.grad.data();
  auto m = state.m.data();
  auto v = state.v.data();
  for (std::size_t i = 0; i < value.size(); ++i) {
    const Real g = grad[i];
    m[i] = state.beta1 * m[i] + (Real(1) - state.beta1) * g;
    v[i] = state.beta2 * v[i] + (Real(1) - state.beta2) * g * g;
    const Real m_hat = m[i] / c1;
    const Real v_hat = v[i] / c2;
    value[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

Adam::Adam(ParamList params, const AdamConfig& cfg) : params_(std::move(params)) {
  states_.reserve(params_.size());
  for (const ParamTensor* p : params_) states_.emplace_back(*p, cfg);
}

void Adam::zero_grad() { zero_grads(params_); }

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i]->trainable) adam_step(*params_[i], states_[i]);
  }
}

}  // namespace semfed
