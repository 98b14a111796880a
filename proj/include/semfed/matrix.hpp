#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace semfed {

#ifdef SEMFED_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

// Dense row-major matrix. Vectors are 1 x n matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Real fill = Real(0));
  Matrix(std::size_t rows, std::size_t cols, std::vector<Real> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<Real>> rows);
  static Matrix row_vector(std::span<const Real> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const Real> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }
  const std::vector<Real>& storage() const noexcept { return data_; }

  void fill(Real value);
  bool all_finite() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator*=(Real s);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T
Matrix matmul_bt(const Matrix& a, const Matrix& b);
// a^T * b
Matrix matmul_at(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// Bitwise comparison: distinguishes -0 from +0 and treats identical NaN
// payloads as equal.
bool bit_equal(const Matrix& a, const Matrix& b);

double dot(std::span<const Real> a, std::span<const Real> b);
double squared_norm(std::span<const Real> a);
double cosine(std::span<const Real> a, std::span<const Real> b);

}  // namespace semfed
