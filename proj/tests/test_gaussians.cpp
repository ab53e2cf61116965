#include "doctest.h"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <cmath>
#include <numbers>

#include "fd_check.hpp"
#include "nonfat/gaussians.hpp"
#include "nonfat/random.hpp"

using namespace nonfat;
using nonfat::testing::pseudo_random;
using nonfat::testing::random_spd;

namespace {

// Dense oracles: vec() is column-major, so cov(vec X) = Sc kron Sr.
Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  }
  return out;
}

Vector vec(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

double dense_logpdf(const Vector& x, const Vector& mu, const Matrix& cov) {
  const Eigen::FullPivLU<Matrix> lu(cov);
  const Vector d = x - mu;
  const double quad = d.dot(lu.solve(d));
  return -0.5 * quad - 0.5 * static_cast<double>(x.size()) * std::log(2 * std::numbers::pi) -
         0.5 * std::log(lu.determinant());
}

double dense_kl(const Vector& mq, const Matrix& sq, const Vector& mp, const Matrix& sp) {
  const Matrix sp_inv = sp.inverse();
  const Vector d = mp - mq;
  return 0.5 * ((sp_inv * sq).trace() + d.dot(sp_inv * d) - static_cast<double>(mq.size()) +
                std::log(sp.determinant()) - std::log(sq.determinant()));
}

Matrix random_lower(Index n, unsigned seed) {
  Matrix l = pseudo_random(n, n, seed).triangularView<Eigen::Lower>();
  l.diagonal() = l.diagonal().cwiseAbs().array() + 0.3;
  return l;
}

MatrixGaussian random_mg(Index n, Index m, unsigned seed) {
  return {pseudo_random(n, m, seed), random_lower(n, seed + 1), random_lower(m, seed + 2)};
}

Matrix normal_matrix(Rng& rng, Index n, Index m) {
  Matrix s(n, m);
  for (Index i = 0; i < s.size(); ++i) s.data()[i] = rng.normal();
  return s;
}

}  // namespace

TEST_CASE("matrix Gaussian log-density") {
  const MatrixGaussian standard{Matrix::Zero(1, 1), Matrix::Identity(1, 1), Matrix::Identity(1, 1)};
  CHECK(std::abs(mg_logpdf(Matrix::Zero(1, 1), standard) + 0.9189385332046727) < 1e-12);

  for (unsigned s = 0; s < 20; ++s) {
    const Index n = 1 + s % 4;
    const Index m = 1 + (s / 4) % 4;
    const auto d = random_mg(n, m, 10 * s);
    const Matrix x = pseudo_random(n, m, 10 * s + 7);
    const Matrix cov = kron(d.col_chol * d.col_chol.transpose(), d.row_chol * d.row_chol.transpose());
    CHECK(std::abs(mg_logpdf(x, d) - dense_logpdf(vec(x), vec(d.mean), cov)) < 1e-8);
  }

  const auto d = random_mg(2, 3, 5);
  const double at_mode = mg_logpdf(d.mean, d);
  for (unsigned s = 0; s < 10; ++s) CHECK(mg_logpdf(d.mean + 0.05 * pseudo_random(2, 3, s), d) < at_mode);
  CHECK_THROWS_AS(mg_logpdf(Matrix::Zero(3, 3), d), ConfigError);
}

TEST_CASE("matrix Gaussian sampling") {
  const auto d = random_mg(2, 3, 3);
  CHECK(mg_sample(d, Matrix::Zero(2, 3)) == d.mean);
  const MatrixGaussian unit{d.mean, Matrix::Identity(2, 2), Matrix::Identity(3, 3)};
  const Matrix noise = pseudo_random(2, 3, 4);
  CHECK((mg_sample(unit, noise) - (d.mean + noise)).norm() < 1e-15);
  CHECK_THROWS_AS(mg_sample(d, Matrix::Zero(3, 2)), ConfigError);

  // Monte-Carlo covariance of vec(X).
  Rng rng(17);
  const int draws = 100000;
  const Index dim = 6;
  Matrix second = Matrix::Zero(dim, dim);
  Vector first = Vector::Zero(dim);
  for (int i = 0; i < draws; ++i) {
    const Vector v = vec(mg_sample(d, normal_matrix(rng, 2, 3)));
    first += v;
    second += v * v.transpose();
  }
  first /= draws;
  const Matrix emp = second / draws - first * first.transpose();
  const Matrix cov = kron(d.col_chol * d.col_chol.transpose(), d.row_chol * d.row_chol.transpose());
  CHECK((emp - cov).norm() / cov.norm() < 0.05);
}

TEST_CASE("KL between matrix Gaussians") {
  SUBCASE("q equal to the prior") {
    const Matrix kz = random_spd(3, 1);
    const Matrix kw = random_spd(2, 2);
    const MatrixGaussian q{Matrix::Zero(3, 2), kz.llt().matrixL(), kw.llt().matrixL()};
    CHECK(std::abs(kl_mg_prior(q, kz, kw, 0.0)) < 1e-9);
  }
  SUBCASE("dense Kronecker oracle") {
    for (unsigned s = 0; s < 20; ++s) {
      const Index n = 1 + s % 4;
      const Index m = 1 + (s / 4) % 4;
      const auto q = random_mg(n, m, 100 + s);
      const Matrix kz = random_spd(n, 300 + s);
      const Matrix kw = random_spd(m, 400 + s);
      const Matrix sq = kron(q.col_chol * q.col_chol.transpose(), q.row_chol * q.row_chol.transpose());
      const double expected = dense_kl(vec(q.mean), sq, Vector::Zero(n * m), kron(kw, kz));
      CHECK(std::abs(kl_mg_prior(q, kz, kw, 0.0) - expected) < 1e-8);
    }
  }
  SUBCASE("mean term under identity covariances") {
    const Matrix a = pseudo_random(3, 2, 9);
    const Matrix i3 = Matrix::Identity(3, 3), i2 = Matrix::Identity(2, 2);
    const double base = kl_mg_prior({a, i3, i2}, i3, i2, 0.0);
    const double doubled = kl_mg_prior({2.0 * a, i3, i2}, i3, i2, 0.0);
    CHECK(std::abs(base - 0.5 * a.squaredNorm()) < 1e-12);
    CHECK(std::abs((doubled - base) - 1.5 * a.squaredNorm()) < 1e-12);
  }
  SUBCASE("Monte-Carlo estimate agrees within three standard errors") {
    const auto q = random_mg(2, 2, 50);
    const Matrix kz = random_spd(2, 51);
    const Matrix kw = random_spd(2, 52);
    const MatrixGaussian prior{Matrix::Zero(2, 2), kz.llt().matrixL(), kw.llt().matrixL()};
    Rng rng(99);
    const int draws = 100000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < draws; ++i) {
      const Matrix x = mg_sample(q, normal_matrix(rng, 2, 2));
      const double r = mg_logpdf(x, q) - mg_logpdf(x, prior);
      sum += r;
      sum_sq += r * r;
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sum_sq / draws - mean * mean) / draws);
    CHECK(std::abs(mean - kl_mg_prior(q, kz, kw, 0.0)) < 3.0 * se);
  }
  SUBCASE("shape mismatch") {
    const auto q = random_mg(2, 3, 1);
    CHECK_THROWS_AS(kl_mg_prior(q, Matrix::Identity(3, 3), Matrix::Identity(3, 3)), ConfigError);
  }
  SUBCASE("indefinite prior") {
    const auto q = random_mg(2, 2, 1);
    Matrix bad = Matrix::Identity(2, 2);
    bad(1, 1) = -1.0;
    CHECK_THROWS_AS(kl_mg_prior(q, bad, Matrix::Identity(2, 2)), NumericalError);
  }
}

TEST_CASE("KL between vector Gaussians") {
  const Matrix p = random_spd(3, 7);
  CHECK(std::abs(kl_gaussian({Vector::Zero(3), p.llt().matrixL()}, p, 0.0)) < 1e-9);
  const Matrix one = Matrix::Identity(1, 1);
  CHECK(std::abs(kl_gaussian({Vector::Ones(1), one}, one, 0.0) - 0.5) < 1e-14);
  CHECK(std::abs(kl_gaussian({Vector::Zero(1), 0.5 * one}, one, 0.0) - 0.5 * (0.25 - 1.0 - std::log(0.25))) < 1e-14);
  CHECK(std::abs(kl_gaussian({Vector::Zero(1), 0.5 * one}, one, 0.0) - 0.3181) < 1e-4);

  const Vector mu = pseudo_random(3, 1, 8);
  const Matrix s = random_lower(3, 9);
  CHECK(std::abs(kl_gaussian({mu, s}, p, 0.0) - dense_kl(mu, s * s.transpose(), Vector::Zero(3), p)) < 1e-10);
}

namespace {

// Brute-force conditioning: joint covariance over [Z; x] with the jitter on
// the pseudo block, conditioned through a dense inverse.
ConditionalMoments joint_conditioning(const Vector& x, const Matrix& z, const Matrix& outputs, double log_ls,
                                      double jitter) {
  const Index a = z.rows();
  Matrix all(a + 1, z.cols());
  all.topRows(a) = z;
  all.row(a) = x.transpose();
  Matrix joint(a + 1, a + 1);
  const double eta = std::exp(log_ls);
  for (Index i = 0; i <= a; ++i) {
    for (Index j = 0; j <= a; ++j) joint(i, j) = std::exp(-(all.row(i) - all.row(j)).squaredNorm() / eta);
  }
  joint.topLeftCorner(a, a).diagonal().array() += jitter;
  const Matrix kzz_inv = joint.topLeftCorner(a, a).inverse();
  const Matrix kxz = joint.bottomLeftCorner(1, a);
  ConditionalMoments out;
  out.mean = (kxz * kzz_inv * outputs).transpose();
  out.variance = joint(a, a) - (kxz * kzz_inv * kxz.transpose())(0, 0);
  return out;
}

}  // namespace

TEST_CASE("first-level row conditional") {
  const ProductKernel kernel{SEKernel{0.2}, SEKernel{0.0}};
  const double jitter = 1e-6;
  SUBCASE("brute-force joint conditioning") {
    for (Index a = 1; a <= 3; ++a) {
      for (unsigned s = 0; s < 5; ++s) {
        const Matrix z = pseudo_random(a, 2, 10 * s + static_cast<unsigned>(a));
        const Matrix g = pseudo_random(a, 4, 20 * s + 1);
        const Vector e = pseudo_random(2, 1, 30 * s + 2);
        const auto got = cond_row_moments(e, z, g, kernel, jitter);
        const auto want = joint_conditioning(e, z, g, kernel.embed.log_lengthscale, jitter);
        CHECK((got.mean - want.mean).cwiseAbs().maxCoeff() < 1e-10);
        CHECK(std::abs(got.variance - want.variance) < 1e-10);
      }
    }
  }
  SUBCASE("single pseudo input by hand") {
    Matrix z(1, 2);
    z << 0.3, -0.1;
    Vector e(2);
    e << -0.2, 0.4;
    Matrix g(1, 3);
    g << 1.0, -2.0, 0.5;
    const double kxz = std::exp(-(0.25 + 0.25) / std::exp(0.2));
    const auto got = cond_row_moments(e, z, g, kernel, jitter);
    for (Index c = 0; c < 3; ++c) CHECK(std::abs(got.mean(c) - kxz * g(0, c) / (1.0 + jitter)) < 1e-12);
    CHECK(std::abs(got.variance - (1.0 - kxz * kxz / (1.0 + jitter))) < 1e-12);
  }
  SUBCASE("interpolates at a pseudo input") {
    const Matrix z = pseudo_random(3, 2, 77);
    const Matrix g = pseudo_random(3, 4, 78);
    const auto got = cond_row_moments(z.row(1).transpose(), z, g, kernel, 1e-10);
    CHECK((got.mean - g.row(1).transpose()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(got.variance < 1e-8);
  }
  SUBCASE("sampling") {
    const Matrix z = pseudo_random(2, 2, 5);
    const Matrix g = pseudo_random(2, 3, 6);
    const Vector e = pseudo_random(2, 1, 7);
    const Matrix kw = gram(kernel.freq, Vector::LinSpaced(3, 0.5, 2.5));
    const Matrix lw = chol_jitter(kw).lower;
    const auto m = cond_row_moments(e, z, g, kernel, jitter);
    CHECK(cond_row_sample(e, z, g, kernel, lw, Vector::Zero(3), jitter) == m.mean);
    const Vector noise = pseudo_random(3, 1, 8);
    const Vector want = m.mean + std::sqrt(m.variance) * (lw * noise);
    CHECK((cond_row_sample(e, z, g, kernel, lw, noise, jitter) - want).norm() < 1e-14);
    CHECK(cond_row_sample(e, z, g, kernel, lw, noise, jitter) == cond_row_sample(e, z, g, kernel, lw, noise, jitter));
    CHECK_THROWS_AS(cond_row_sample(e, z, g, kernel, lw, Vector::Zero(2), jitter), ConfigError);
    CHECK_THROWS_AS(cond_row_moments(Vector::Zero(3), z, g, kernel, jitter), ConfigError);
  }
}

TEST_CASE("second-level scalar conditional") {
  const SEKernel kernel{0.4};
  const double jitter = 1e-6;
  SUBCASE("brute-force joint conditioning") {
    for (Index a = 1; a <= 3; ++a) {
      for (unsigned s = 0; s < 5; ++s) {
        const Matrix z = pseudo_random(a, 4, 40 * s + static_cast<unsigned>(a));
        const Vector h = pseudo_random(a, 1, 50 * s + 3);
        const Vector v = pseudo_random(4, 1, 60 * s + 4);
        const auto got = cond_scalar_moments(v, z, h, kernel, jitter);
        const auto want = joint_conditioning(v, z, h, kernel.log_lengthscale, jitter);
        CHECK(std::abs(got.mean(0) - want.mean(0)) < 1e-10);
        CHECK(std::abs(got.variance - want.variance) < 1e-10);
      }
    }
  }
  SUBCASE("interpolates at a pseudo input and samples") {
    const Matrix z = pseudo_random(2, 3, 9);
    const Vector h = pseudo_random(2, 1, 10);
    const auto at = cond_scalar_moments(z.row(0).transpose(), z, h, kernel, 1e-10);
    CHECK(std::abs(at.mean(0) - h(0)) < 1e-6);
    CHECK(at.variance < 1e-8);
    const Vector v = pseudo_random(3, 1, 11);
    const auto m = cond_scalar_moments(v, z, h, kernel, jitter);
    CHECK(cond_scalar_sample(v, z, h, kernel, 0.0, jitter) == m.mean(0));
    CHECK(cond_scalar_sample(v, z, h, kernel, 1.3, jitter) ==
          doctest::Approx(m.mean(0) + std::sqrt(m.variance) * 1.3).epsilon(1e-14));
  }
}

TEST_CASE("conditional variances stay clear of the clamp on well-conditioned inputs") {
  ad::Tape tape;
  const Matrix z = pseudo_random(4, 2, 21);
  const Matrix x = pseudo_random(30, 2, 22);
  const SEKernel k{-1.0};
  const auto chol = tape.constant(chol_jitter(gram(k, z)).lower);
  const auto proj = graph::project(tape.constant(x), tape.constant(z), tape.constant(k.log_lengthscale), chol);
  graph::conditional_sample(proj, tape.constant(Matrix::Zero(30, 1)), tape.constant(Matrix::Ones(30, 1)), ad::Var{});
  CHECK(tape.max_clamped() < 1e-8);
}

TEST_CASE("graph KL terms are differentiable") {
  using nonfat::testing::max_grad_error;
  const Matrix a = pseudo_random(3, 2, 1);
  const Matrix l = random_lower(3, 2);
  const Matrix r = random_lower(2, 3);
  const Matrix pr = random_lower(3, 4);
  const Matrix pc = random_lower(2, 5);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return graph::kl_mg_prior(v[0], v[1], v[2], v[3], v[4]); },
                       {a, l, r, pr, pc}) < 1e-6);
  CHECK(max_grad_error([](ad::Tape&, const auto& v) { return graph::kl_gaussian(v[0], v[1], v[2]); },
                       {Matrix(a.col(0)), l, pr}) < 1e-6);
}
