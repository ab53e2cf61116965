#include "doctest.h"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "fd_check.hpp"
#include "nonfat/kernels.hpp"

using namespace nonfat;
using nonfat::testing::pseudo_random;

TEST_CASE("SE kernel values") {
  const SEKernel k{0.0};
  Vector x(2), y(2);
  x << 0.3, -1.2;
  y << 1.3, -1.2;
  CHECK(k(x, x) == 1.0);
  CHECK(k(x, y) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
  CHECK(std::abs(k(x, y) - 0.3678794) < 1e-7);
  CHECK_THROWS_AS(k(x, Vector::Zero(3)), ConfigError);
  for (unsigned s = 0; s < 20; ++s) {
    const Vector a = pseudo_random(3, 1, s);
    const Vector b = pseudo_random(3, 1, s + 100);
    const SEKernel ks{0.1 * s - 1.0};
    CHECK(ks(a, b) == ks(b, a));
    CHECK(ks(a, b) > 0.0);
    CHECK(ks(a, b) <= 1.0);
  }
}

TEST_CASE("kernel value decreases with distance") {
  const SEKernel k{0.4};
  Vector origin = Vector::Zero(2);
  double previous = 1.0;
  for (int i = 1; i <= 30; ++i) {
    Vector x(2);
    x << 0.1 * i, 0.05 * i;
    const double v = k(origin, x);
    CHECK(v < previous);
    previous = v;
  }
}

TEST_CASE("lengthscale gradient matches central differences") {
  for (unsigned s = 0; s < 25; ++s) {
    const Vector a = pseudo_random(3, 1, s);
    const Vector b = pseudo_random(3, 1, s + 50);
    const double ll = 0.2 * static_cast<double>(s % 7) - 0.6;
    const double h = 1e-5;
    const double fd = (SEKernel{ll + h}(a, b) - SEKernel{ll - h}(a, b)) / (2 * h);
    const double an = SEKernel{ll}.grad_log_lengthscale(a, b);
    CHECK(std::abs(an - fd) <= 1e-6 * std::max(std::abs(an), 1e-10));
  }
}

TEST_CASE("product kernel factorizes") {
  const ProductKernel k{SEKernel{0.3}, SEKernel{-0.2}};
  Vector e1(2), e2(2);
  e1 << 0.1, 0.2;
  e2 << -0.4, 0.5;
  Vector w1(1), w2(1);
  w1 << 1.5;
  w2 << 2.25;
  CHECK(k(e1, 1.5, e2, 2.25) == doctest::Approx(k.embed(e1, e2) * k.freq(w1, w2)).epsilon(1e-14));
}

TEST_CASE("gram and cross matrices") {
  const SEKernel k{-0.5};
  CHECK(gram(k, Matrix::Ones(1, 3)) == Matrix::Ones(1, 1));
  CHECK(gram(k, Matrix::Constant(2, 2, 0.7)) == Matrix::Ones(2, 2));

  const Matrix x = pseudo_random(4, 2, 7);
  const Matrix g = gram(k, x);
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 4; ++j) {
      CHECK(std::abs(g(i, j) - k(x.row(i).transpose(), x.row(j).transpose())) < 1e-15);
    }
  }
  CHECK((cross(k, x, x) - g).cwiseAbs().maxCoeff() < 1e-15);
  const Matrix y = pseudo_random(3, 2, 8);
  CHECK((cross(k, x, y) - cross(k, y, x).transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(cross(k, x.topRows(1), y.topRows(1))(0, 0) == doctest::Approx(k(x.row(0).transpose(), y.row(0).transpose())));
  CHECK_THROWS_AS(cross(k, x, Matrix::Zero(2, 3)), ConfigError);
}

TEST_CASE("gram matrices are positive semi-definite up to round-off") {
  for (unsigned s = 0; s < 20; ++s) {
    const Matrix x = pseudo_random(12, 3, 200 + s);
    const Matrix g = gram(SEKernel{0.5 * (static_cast<double>(s % 5) - 2.0)}, x);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(g);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("chol_jitter") {
  SUBCASE("identity") {
    const auto res = chol_jitter(Matrix::Identity(3, 3), 1e-6);
    CHECK(res.jitter == 1e-6);
    CHECK(res.attempts == 1);
    CHECK((res.lower - std::sqrt(1.0 + 1e-6) * Matrix::Identity(3, 3)).norm() < 1e-15);
  }
  SUBCASE("rank-one all-ones matrix") {
    const Matrix m = Matrix::Ones(3, 3);
    const auto res = chol_jitter(m, 1e-6);
    CHECK(res.jitter >= 1e-6);
    CHECK((res.lower * res.lower.transpose() - m - res.jitter * Matrix::Identity(3, 3)).norm() < 1e-10);
  }
  SUBCASE("escalates for slightly indefinite input") {
    Matrix m = Matrix::Identity(2, 2);
    m(1, 1) = -3e-5;
    const auto res = chol_jitter(m, 1e-6);
    CHECK(res.jitter == doctest::Approx(1e-4));
    CHECK(res.attempts == 3);
    CHECK((res.lower * res.lower.transpose() - m - res.jitter * Matrix::Identity(2, 2)).norm() < 1e-12);
  }
  SUBCASE("indefinite input fails after escalation") {
    Matrix m = Matrix::Identity(3, 3);
    m(2, 2) = -1.0;
    CHECK_THROWS_AS(chol_jitter(m, 1e-6), NumericalError);
  }
  SUBCASE("zero base jitter makes one attempt") {
    CHECK_THROWS_AS(chol_jitter(Matrix::Ones(3, 3), 0.0), NumericalError);
    CHECK(chol_jitter(Matrix::Identity(2, 2), 0.0).jitter == 0.0);
  }
  SUBCASE("non-square or non-finite input") {
    CHECK_THROWS_AS(chol_jitter(Matrix::Ones(2, 3)), ConfigError);
    Matrix m = Matrix::Identity(2, 2);
    m(0, 1) = NAN;
    CHECK_THROWS_AS(chol_jitter(m), NumericalError);
  }
}
