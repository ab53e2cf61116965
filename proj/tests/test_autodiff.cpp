#include "doctest.h"

#include <array>

#include <Eigen/Cholesky>

#include "fd_check.hpp"
#include "nonfat/autodiff.hpp"

using namespace nonfat;
using namespace nonfat::testing;
namespace ad = nonfat::ad;

namespace {

// Contract a matrix-valued node with a fixed weight so every output entry
// contributes to the scalar under test.
ad::Var contract(ad::Var v, unsigned seed) {
  auto& tape = *v.tape();
  const auto w = tape.constant(pseudo_random(v.rows(), v.cols(), seed));
  return ad::sum(ad::mul(v, w));
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("elementwise ops and broadcasting") {
  const auto a = pseudo_random(3, 2, 1);
  const auto b = pseudo_random(3, 2, 2);
  const Matrix s = Matrix::Constant(1, 1, 0.7);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::add(v[0], v[1]), 3); }, {a, b}) < kTol);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::sub(v[0], v[1]), 3); }, {a, b}) < kTol);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::mul(v[0], v[1]), 3); }, {a, b}) < kTol);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::mul(v[0], v[1]), 4); }, {a, s}) < kTol);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::mul(v[1], v[0]), 4); }, {a, s}) < kTol);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::add(v[0], v[1]), 5); }, {a, s}) < kTol);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::sub(v[1], v[0]), 5); }, {a, s}) < kTol);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::exp(v[0]), 6); }, {a}) < kTol);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::square(v[0]), 6); }, {a}) < kTol);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::scale(ad::neg(v[0]), 3.0), 6); }, {a}) <
        kTol);
  const Matrix positive = a.array().abs() + 0.5;
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::log(v[0]), 7); }, {positive}) < kTol);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::sqrt_clamped(v[0]), 7); }, {positive}) <
        kTol);
}

TEST_CASE("sqrt_clamped clamps negatives to zero with zero derivative") {
  ad::Tape tape;
  Matrix m(3, 1);
  m << 4.0, -1e-12, 0.0;
  const auto x = tape.variable(m);
  const auto y = ad::sqrt_clamped(x);
  CHECK(y.value()(0, 0) == 2.0);
  CHECK(y.value()(1, 0) == 0.0);
  CHECK(tape.clamp_count() == 1);
  CHECK(tape.max_clamped() == doctest::Approx(1e-12));
  tape.backward(ad::sum(y));
  const Matrix g = tape.grad(x);
  CHECK(g(0, 0) == doctest::Approx(0.25));
  CHECK(g(1, 0) == 0.0);
  CHECK(g(2, 0) == 0.0);
}

TEST_CASE("linear algebra ops") {
  const auto a = pseudo_random(3, 4, 11);
  const auto b = pseudo_random(4, 2, 12);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::matmul(v[0], v[1]), 1); }, {a, b}) < kTol);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::transpose(v[0]), 2); }, {a}) < kTol);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::row_sums(v[0]), 3); }, {a}) < kTol);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::col_sums(v[0]), 3); }, {a}) < kTol);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return ad::frobenius_sq(v[0]); }, {a}) < kTol);
  const auto col = pseudo_random(3, 1, 13);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::scale_rows(v[0], v[1]), 4); }, {col, a}) <
        kTol);
}

TEST_CASE("gather and concat") {
  const auto a = pseudo_random(4, 3, 21);
  const std::array<std::size_t, 5> rows{2, 0, 2, 3, 2};
  CHECK(max_grad_error([&](ad::Tape&, const auto& v) { return contract(ad::gather_rows(v[0], rows), 1); }, {a}) <
        kTol);
  const auto b = pseudo_random(4, 1, 22);
  CHECK(max_grad_error(
            [](ad::Tape&, const auto& v) {
              const std::array<ad::Var, 3> parts{v[0], v[1], v[0]};
              return contract(ad::concat_cols(parts), 2);
            },
            {a, b}) < kTol);
  ad::Tape tape;
  const auto g = ad::gather_rows(tape.constant(a), rows);
  CHECK(g.value().row(1) == a.row(0));
  CHECK_THROWS_AS(ad::gather_rows(tape.constant(a), std::array<std::size_t, 1>{4}), ConfigError);
}

TEST_CASE("squared-exponential kernel op") {
  const auto x = pseudo_random(4, 2, 31);
  const auto y = pseudo_random(3, 2, 32);
  const Matrix ls = Matrix::Constant(1, 1, -0.3);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::se_kernel(v[0], v[1], v[2]), 1); },
                       {x, y, ls}) < kTol);
  // Gram form: the same node on both sides.
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::se_kernel(v[0], v[0], v[1]), 2); },
                       {x, ls}) < kTol);
}

TEST_CASE("cholesky and triangular solves") {
  const Matrix spd = random_spd(4, 41);
  // Symmetrize inside the function so the perturbations stay symmetric.
  auto chol_fn = [](ad::Tape&, const auto& v) {
    const auto sym = ad::scale(ad::add(v[0], ad::transpose(v[0])), 0.5);
    return contract(ad::cholesky(sym, 0.0), 1);
  };
  CHECK(max_grad_error(chol_fn, {spd}) < kTol);

  ad::Tape tape;
  double jitter = -1.0;
  const auto l = ad::cholesky(tape.constant(spd), 1e-6, &jitter);
  CHECK(jitter == 1e-6);
  Matrix expected = spd;
  expected.diagonal().array() += 1e-6;
  CHECK((l.value() * l.value().transpose() - expected).norm() < 1e-12);

  Matrix lower = spd.llt().matrixL();
  const auto b = pseudo_random(4, 3, 42);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::solve_lower(v[0], v[1]), 3); }, {lower, b}) <
        kTol);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::solve_lower_transposed(v[0], v[1]), 4); },
                       {lower, b}) < kTol);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return ad::log_diag_sum(v[0]); }, {lower}) < kTol);

  const auto p = pseudo_random(3, 3, 43);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return contract(ad::lower_factor(v[0]), 5); }, {p}) < kTol);
  ad::Tape t2;
  const auto f = ad::lower_factor(t2.constant(p));
  CHECK(f.value()(0, 1) == 0.0);
  CHECK(f.value()(1, 1) == doctest::Approx(std::exp(p(1, 1))));
  CHECK(f.value()(2, 0) == p(2, 0));
}

TEST_CASE("a chained expression matches finite differences") {
  // log det and quadratic form of a kernel matrix: the shape of a GP marginal.
  const auto x = pseudo_random(5, 2, 51);
  const auto y = pseudo_random(5, 1, 52);
  const Matrix ls = Matrix::Constant(1, 1, 0.2);
  auto fn = [](ad::Tape&, const auto& v) {
    const auto k = ad::se_kernel(v[0], v[0], v[2]);
    const auto l = ad::cholesky(k, 1e-4);
    const auto alpha = ad::solve_lower(l, v[1]);
    return ad::add(ad::frobenius_sq(alpha), ad::scale(ad::log_diag_sum(l), 2.0));
  };
  CHECK(max_grad_error(fn, {x, y, ls}) < 1e-5);
}

TEST_CASE("nodes that depend only on constants carry no gradient") {
  ad::Tape tape;
  const auto c = tape.constant(pseudo_random(2, 2, 61));
  const auto v = tape.variable(pseudo_random(2, 2, 62));
  const auto out = ad::sum(ad::add(ad::exp(c), v));
  CHECK_FALSE(tape.needs_grad(ad::exp(c).id()));
  tape.backward(out);
  CHECK(tape.grad(c).isZero());
  CHECK(tape.grad(v).isOnes());
}

TEST_CASE("shape errors are reported") {
  ad::Tape tape;
  const auto a = tape.constant(Matrix::Zero(2, 3));
  const auto b = tape.constant(Matrix::Zero(3, 2));
  CHECK_THROWS_AS(ad::add(a, b), ConfigError);
  CHECK_THROWS_AS(ad::matmul(a, a), ConfigError);
  CHECK_THROWS_AS(tape.backward(a), ConfigError);
}
