#pragma once

#include <cstddef>
#include <functional>

#include "semfed/autodiff.hpp"
#include "semfed/layers.hpp"

namespace semfed {

// Builds a scalar (1x1) loss on the given tape from the current parameter
// values. Must be a pure function of those values.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_error = 0;
  std::size_t param_index = 0;
  std::size_t entry_index = 0;
  double analytic = 0;
  double numeric = 0;
};

// Compares the backward-pass gradient with central finite differences
//   (f(x + h) - f(x - h)) / 2h
// for every entry of every parameter (or an evenly strided subset of at most
// `max_entries` per parameter when non-zero). The error of one entry is
//   |analytic - numeric| / max(1, |analytic|, |numeric|)
// so large gradients are compared relatively and near-zero ones absolutely.
GradCheckResult grad_check_detailed(const LossBuilder& f, const ParamList& params, double h = 1e-3,
                                    std::size_t max_entries = 0);

double grad_check(const LossBuilder& f, const ParamList& params, double h = 1e-3,
                  std::size_t max_entries = 0);

}  // namespace semfed
