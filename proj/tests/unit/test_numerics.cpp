#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "semfed/adam.hpp"
#include "semfed/autodiff.hpp"
#include "semfed/checkpoint.hpp"
#include "semfed/error.hpp"
#include "semfed/layers.hpp"

using namespace semfed;
using testing::max_abs_diff;
using testing::naive_matmul;
using testing::random_matrix;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

}  // namespace

TEST_CASE("matmul hand examples") {
  const Matrix b = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(bit_equal(matmul(Matrix::identity(2), b), b));
  const Matrix r = matmul(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{3}, {4}}));
  CHECK(r.rows() == 1);
  CHECK(r.cols() == 1);
  CHECK(r(0, 0) == Real(11));
}

TEST_CASE("matmul agrees with the triple loop") {
  Rng rng(11);
  const Matrix a = random_matrix(5, 7, rng), b = random_matrix(7, 3, rng);
  CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-6);
  // Shapes with full register tiles plus row and column remainders.
  const Matrix c = random_matrix(9, 40, rng), d = random_matrix(40, 37, rng);
  CHECK(max_abs_diff(matmul(c, d), naive_matmul(c, d)) < 1e-5);
  CHECK(max_abs_diff(matmul_bt(c, transpose(d)), naive_matmul(c, d)) < 1e-5);
  CHECK(max_abs_diff(matmul_at(transpose(c), d), naive_matmul(c, d)) < 1e-5);
}

TEST_CASE("matmul rejects mismatched shapes") {
  CHECK(code_of([] { matmul(Matrix(2, 3), Matrix(2, 3)); }) == ErrorCode::kDimension);
  CHECK(code_of([] { matmul_bt(Matrix(2, 3), Matrix(2, 4)); }) == ErrorCode::kDimension);
  CHECK(code_of([] { matmul_at(Matrix(2, 3), Matrix(3, 3)); }) == ErrorCode::kDimension);
}

TEST_CASE("bit_equal separates signed zeros") {
  CHECK_FALSE(bit_equal(Matrix(1, 1, Real(0)), Matrix(1, 1, Real(-0.0))));
  CHECK_FALSE(bit_equal(Matrix(1, 2), Matrix(2, 1)));
  CHECK(bit_equal(Matrix(0, 3), Matrix(0, 3)));
}

TEST_CASE("softmax rows are distributions") {
  Rng rng(3);
  Tape tape;
  Var x = tape.constant(random_matrix(6, 9, rng, -20, 20));
  for (bool causal : {false, true}) {
    const Matrix& s = softmax_rows(x, causal).value();
    for (std::size_t r = 0; r < s.rows(); ++r) {
      double total = 0;
      for (std::size_t c = 0; c < s.cols(); ++c) {
        CHECK(s(r, c) >= 0);
        if (causal && c > r) CHECK(s(r, c) == 0);
        total += s(r, c);
      }
      CHECK(std::abs(total - 1) <= 1e-6);
    }
  }
}

TEST_CASE("layer norm output is normalized per row") {
  Rng rng(4);
  Tape tape;
  LayerNorm ln(8);
  const Matrix& y = ln.forward(tape, tape.constant(random_matrix(3, 8, rng, -5, 5))).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0, sq = 0;
    for (Real v : y.row(r)) mean += v;
    mean /= 8;
    for (Real v : y.row(r)) sq += (v - mean) * (v - mean);
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(sq / 8 - 1) < 1e-3);
  }
}

TEST_CASE("cross entropy matches log-softmax by hand") {
  Tape tape;
  Var logits = tape.constant(Matrix::from_rows({{1, 2, 3}, {0, 0, 0}}));
  const std::int64_t targets[] = {2, -1};
  const double expected = -(3 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  CHECK(cross_entropy(logits, targets).value()[0] == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("log_sigmoid is stable for large magnitudes") {
  Tape tape;
  const Matrix& v = log_sigmoid(tape.constant(Matrix::from_rows({{-200, 0, 200}}))).value();
  CHECK(v(0, 0) == doctest::Approx(-200));
  CHECK(v(0, 1) == doctest::Approx(-std::log(2.0)));
  CHECK(v(0, 2) == doctest::Approx(0));
  CHECK(v.all_finite());
}

TEST_CASE("a parameter is one leaf per tape") {
  ParamTensor p(Matrix(1, 1, Real(2)));
  Tape tape;
  Var a = tape.param(p);
  Var b = tape.param(p);
  CHECK(a.id == b.id);
  tape.backward(mul(a, b));
  CHECK(p.grad[0] == doctest::Approx(4));
}

TEST_CASE("frozen parameters receive no gradient") {
  ParamTensor p(Matrix(1, 1, Real(3)), false);
  Tape tape;
  tape.backward(mul(tape.param(p), tape.param(p)));
  CHECK(p.grad[0] == 0);
}

TEST_CASE("adam leaves a zero-gradient parameter unchanged") {
  ParamTensor p(Matrix::from_rows({{1, -2, 3}}));
  AdamState st(p, AdamConfig{Real(0.1)});
  p.zero_grad();
  adam_step(p, st);
  CHECK(bit_equal(p.value, Matrix::from_rows({{1, -2, 3}})));
  CHECK(st.step_count == 1);
}

TEST_CASE("adam first step has magnitude lr") {
  ParamTensor p(Matrix(1, 1, Real(0.5)));
  AdamState st(p, AdamConfig{Real(0.1)});
  p.grad[0] = 1;
  adam_step(p, st);
  CHECK(p.value[0] == doctest::Approx(0.4).epsilon(1e-5));
}

TEST_CASE("adam descends x^2 monotonically") {
  ParamTensor p(Matrix(1, 1, Real(1)));
  AdamState st(p, AdamConfig{Real(0.05)});
  double last = std::abs(p.value[0]);
  for (int i = 0; i < 10; ++i) {
    p.grad[0] = 2 * p.value[0];
    adam_step(p, st);
    CHECK(std::abs(p.value[0]) < last);
    last = std::abs(p.value[0]);
    CHECK(st.step_count == std::uint64_t(i + 1));
  }
}

TEST_CASE("adam skips frozen tensors and checks state shape") {
  ParamTensor p(Matrix(1, 2, Real(1)));
  AdamState st(p, AdamConfig{Real(0.1)});
  p.trainable = false;
  p.grad.fill(1);
  adam_step(p, st);
  CHECK(bit_equal(p.value, Matrix(1, 2, Real(1))));
  ParamTensor q(Matrix(2, 2));
  q.grad.fill(1);
  CHECK(code_of([&] { adam_step(q, st); }) == ErrorCode::kState);
}

TEST_CASE("rng streams are reproducible") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 16; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs |= x != c.next_u64();
  }
  CHECK(differs);
  CHECK(derive_seed(7, "encrypt") == derive_seed(7, "encrypt"));
  CHECK(derive_seed(7, "encrypt") != derive_seed(7, "federate"));
  CHECK(derive_seed(7, "encrypt", 0) != derive_seed(7, "encrypt", 1));
}

TEST_CASE("checkpoint round trip and corruption") {
  Rng rng(5);
  Checkpoint ck;
  ck.metadata = {{"kind", "test"}, {"n", 3}};
  ck.add("w", random_matrix(3, 4, rng));
  ck.add("empty", Matrix(0, 2));
  const auto bytes = ck.to_bytes();
  const Checkpoint back = Checkpoint::from_bytes(bytes);
  CHECK(back.metadata == ck.metadata);
  CHECK(bit_equal(back.get("w"), ck.get("w")));
  CHECK(back.get("empty").cols() == 2);
  CHECK(code_of([&] { back.get("missing"); }) == ErrorCode::kFormat);
  const std::span<const std::uint8_t> cut(bytes.data(), bytes.size() - 3);
  CHECK(code_of([&] { Checkpoint::from_bytes(cut); }) == ErrorCode::kFormat);

  const auto path = (std::filesystem::temp_directory_path() / "semfed_ck_test.sfck").string();
  ck.save(path);
  CHECK(bit_equal(Checkpoint::load(path).get("w"), ck.get("w")));
  std::filesystem::remove(path);
}
