#pragma once

#include <cstdint>
#include <vector>

#include "semfed/autodiff.hpp"
#include "semfed/layers.hpp"

namespace semfed {

struct AdamConfig {
  Real lr = Real(1e-4);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
};

struct AdamState {
  Matrix m;
  Matrix v;
  std::uint64_t step_count = 0;
  Real lr = Real(1e-4);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);

  AdamState() = default;
  AdamState(const ParamTensor& param, const AdamConfig& cfg);
};

// Bias-corrected Adam update of one parameter from its accumulated gradient.
// Frozen parameters are left untouched.
void adam_step(ParamTensor& param, AdamState& state);

// Adam over a fixed parameter list; frozen tensors are skipped.
class Adam {
 public:
  Adam(ParamList params, const AdamConfig& cfg);

  void zero_grad();
  void step();

  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  std::vector<AdamState> states_;
};

}  // namespace semfed
