#pragma once

#include <cstddef>

#include "semfed/matrix.hpp"
#include "semfed/rng.hpp"

namespace testing {

inline semfed::Matrix random_matrix(std::size_t rows, std::size_t cols, semfed::Rng& rng,
                                    semfed::Real lo = -1, semfed::Real hi = 1) {
  semfed::Matrix m(rows, cols);
  for (auto& x : m.data()) x = rng.uniform_real(lo, hi);
  return m;
}

// Triple loop with the same summation order as the library kernel.
inline semfed::Matrix naive_matmul(const semfed::Matrix& a, const semfed::Matrix& b) {
  semfed::Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      semfed::Real acc = 0;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
      out(i, j) = acc;
    }
  }
  return out;
}

inline double max_abs_diff(const semfed::Matrix& a, const semfed::Matrix& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    worst = d < 0 ? (-d > worst ? -d : worst) : (d > worst ? d : worst);
  }
  return worst;
}

}  // namespace testing
