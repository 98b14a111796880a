#include "semfed/matrix.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "semfed/error.hpp"

namespace semfed {

Matrix::Matrix(std::size_t rows, std::size_t cols, Real fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<Real> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    fail(ErrorCode::kDimension, "data length " + std::to_string(data_.size()) +
                                    " does not match " + std::to_string(rows) + "x" +
                                    std::to_string(cols));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = Real(1);
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<Real>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<Real> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) fail(ErrorCode::kDimension, "ragged initializer rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::row_vector(std::span<const Real> values) {
  return Matrix(1, values.size(), std::vector<Real>(values.begin(), values.end()));
}

void Matrix::fill(Real value) {
  for (auto& x : data_) x = value;
}

bool Matrix::all_finite() const {
  for (Real x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Matrix& Matrix::operator+=(const Matrix& other) {
  if (!same_shape(other)) fail(ErrorCode::kDimension, "+= shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(Real s) {
  for (auto& x : data_) x *= s;
  return *this;
}

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// out (n x m) = a (n x k) * b (k x m), row-major. Full tiles of kTileRows
// rows by kTileVecs vectors are accumulated in registers; the summation order
// over k is the plain sequential one everywhere, so tiled and remainder
// entries round identically.
constexpr std::size_t kVecBytes = 32;
constexpr std::size_t kLanes = kVecBytes / sizeof(Real);
constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileVecs = 2;
constexpr std::size_t kTileCols = kLanes * kTileVecs;
typedef Real Vec __attribute__((vector_size(kVecBytes)));

inline Vec load(const Real* p) {
  Vec v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

// o[j..m) += sum_p a[p] * b[p][j..m)
void axpy_rows(std::size_t k, std::size_t m, std::size_t j, const Real* a, const Real* b,
               Real* o) {
  for (std::size_t p = 0; p < k; ++p) {
    const Real s = a[p];
    const Real* bp = b + p * m;
    for (std::size_t c = j; c < m; ++c) o[c] += s * bp[c];
  }
}

void gemm(std::size_t n, std::size_t k, std::size_t m, const Real* a, const Real* b,
          Real* out) {
  std::size_t i = 0;
  for (; i + kTileRows <= n; i += kTileRows) {
    std::size_t j = 0;
    for (; j + kTileCols <= m; j += kTileCols) {
      Vec acc[kTileRows][kTileVecs] = {};
      for (std::size_t p = 0; p < k; ++p) {
        const Real* bp = b + p * m + j;
        Vec bv[kTileVecs];
        for (std::size_t v = 0; v < kTileVecs; ++v) bv[v] = load(bp + v * kLanes);
        for (std::size_t r = 0; r < kTileRows; ++r) {
          const Real s = a[(i + r) * k + p];
          for (std::size_t v = 0; v < kTileVecs; ++v) acc[r][v] += s * bv[v];
        }
      }
      for (std::size_t r = 0; r < kTileRows; ++r) {
        std::memcpy(out + (i + r) * m + j, acc[r], sizeof(acc[r]));
      }
    }
    if (j < m) {
      for (std::size_t r = i; r < i + kTileRows; ++r) axpy_rows(k, m, j, a + r * k, b, out + r * m);
    }
  }
  for (; i < n; ++i) axpy_rows(k, m, 0, a + i * k, b, out + i * m);
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorCode::kDimension, "matmul " + shape(a) + " * " + shape(b));
  }
  Matrix out(a.rows(), b.cols());
  gemm(a.rows(), a.cols(), b.cols(), a.data().data(), b.data().data(), out.data().data());
  return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    fail(ErrorCode::kDimension, "matmul_bt " + shape(a) + " * " + shape(b) + "^T");
  }
  return matmul(a, transpose(b));
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    fail(ErrorCode::kDimension, "matmul_at " + shape(a) + "^T * " + shape(b));
  }
  return matmul(transpose(a), b);
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return false;
  return a.size() == 0 ||
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(Real)) == 0;
}

double dot(std::span<const Real> a, std::span<const Real> b) {
  if (a.size() != b.size()) fail(ErrorCode::kDimension, "dot length mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
  return acc;
}

double squared_norm(std::span<const Real> a) { return dot(a, a); }

double cosine(std::span<const Real> a, std::span<const Real> b) {
  const double na = std::sqrt(squared_norm(a));
  const double nb = std::sqrt(squared_norm(b));
  if (na == 0.0 || nb == 0.0) fail(ErrorCode::kDegenerateInput, "cosine of zero-norm vector");
  return dot(a, b) / (na * nb);
}

}  // namespace semfed
