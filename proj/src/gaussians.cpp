#include "nonfat/gaussians.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace nonfat {

namespace {

void require_lower_factor(const Matrix& f, Index n, const char* what) {
  if (f.rows() != n || f.cols() != n) {
    throw ConfigError(std::string("matrix Gaussian: ") + what + " must be " + std::to_string(n) + "x" +
                      std::to_string(n));
  }
  if (!f.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().isZero(0.0)) {
    throw ConfigError(std::string("matrix Gaussian: ") + what + " must be lower-triangular");
  }
  if ((f.diagonal().array() <= 0.0).any()) {
    throw ConfigError(std::string("matrix Gaussian: ") + what + " must have a positive diagonal");
  }
}

}  // namespace

void MatrixGaussian::validate() const {
  require_lower_factor(row_chol, mean.rows(), "row factor");
  require_lower_factor(col_chol, mean.cols(), "column factor");
}

double mg_logpdf(const Eigen::Ref<const Matrix>& x, const MatrixGaussian& d) {
  d.validate();
  if (x.rows() != d.rows() || x.cols() != d.cols()) throw ConfigError("mg_logpdf: shape mismatch");
  const auto n = static_cast<double>(d.rows());
  const auto m = static_cast<double>(d.cols());
  // Y = L^{-1} (X - A) R^{-T}; the trace term is ||Y||_F^2.
  Matrix y = d.row_chol.triangularView<Eigen::Lower>().solve(x - d.mean);
  y = d.col_chol.triangularView<Eigen::Lower>().solve(y.transpose()).transpose().eval();
  const double log_det_row = 2.0 * d.row_chol.diagonal().array().log().sum();
  const double log_det_col = 2.0 * d.col_chol.diagonal().array().log().sum();
  return -0.5 * y.squaredNorm() - 0.5 * n * m * std::log(2.0 * std::numbers::pi) - 0.5 * m * log_det_row -
         0.5 * n * log_det_col;
}

Matrix mg_sample(const MatrixGaussian& d, const Eigen::Ref<const Matrix>& noise) {
  if (noise.rows() != d.rows() || noise.cols() != d.cols()) throw ConfigError("mg_sample: noise shape mismatch");
  ad::Tape tape;
  return graph::mg_sample(tape.constant(d.mean), tape.constant(d.row_chol), tape.constant(d.col_chol),
                          tape.constant(noise))
      .value();
}

double kl_mg_prior(const MatrixGaussian& q, const Eigen::Ref<const Matrix>& prior_row,
                   const Eigen::Ref<const Matrix>& prior_col, double jitter) {
  q.validate();
  if (prior_row.rows() != q.rows() || prior_row.cols() != q.rows() || prior_col.rows() != q.cols() ||
      prior_col.cols() != q.cols()) {
    throw ConfigError("kl_mg_prior: prior dimensions do not match the posterior");
  }
  ad::Tape tape;
  const auto pr = tape.constant(chol_jitter(prior_row, jitter).lower);
  const auto pc = tape.constant(chol_jitter(prior_col, jitter).lower);
  return graph::kl_mg_prior(tape.constant(q.mean), tape.constant(q.row_chol), tape.constant(q.col_chol), pr, pc)
      .scalar();
}

double kl_gaussian(const GaussianPosterior& q, const Eigen::Ref<const Matrix>& prior_cov, double jitter) {
  const Index n = q.mean.size();
  if (q.chol.rows() != n || q.chol.cols() != n || prior_cov.rows() != n || prior_cov.cols() != n) {
    throw ConfigError("kl_gaussian: shape mismatch");
  }
  ad::Tape tape;
  const auto pc = tape.constant(chol_jitter(prior_cov, jitter).lower);
  return graph::kl_gaussian(tape.constant(Matrix(q.mean)), tape.constant(q.chol), pc).scalar();
}

namespace {

struct ConditionalParts {
  Vector mean;
  double variance;
};

ConditionalParts conditional(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Matrix>& pseudo,
                             const Eigen::Ref<const Matrix>& outputs, double log_lengthscale, double jitter,
                             const char* op) {
  if (x.size() != pseudo.cols()) throw ConfigError(std::string(op) + ": input dimension mismatch");
  if (outputs.rows() != pseudo.rows()) throw ConfigError(std::string(op) + ": one output row per pseudo input");
  const Matrix kzz = gram(SEKernel{log_lengthscale}, pseudo);
  ad::Tape tape;
  const auto chol = tape.constant(chol_jitter(kzz, jitter).lower);
  const auto proj = graph::project(tape.constant(Matrix(x.transpose())), tape.constant(pseudo),
                                   tape.constant(log_lengthscale), chol);
  const auto mean = graph::conditional_mean(proj, chol, tape.constant(outputs));
  return {mean.value().row(0).transpose(), std::max(0.0, proj.variance.scalar())};
}

}  // namespace

ConditionalMoments cond_row_moments(const Eigen::Ref<const Vector>& e_j, const Eigen::Ref<const Matrix>& pseudo,
                                    const Eigen::Ref<const Matrix>& g_hat, const ProductKernel& kernel,
                                    double jitter) {
  auto parts = conditional(e_j, pseudo, g_hat, kernel.embed.log_lengthscale, jitter, "cond_row");
  return {std::move(parts.mean), parts.variance};
}

Vector cond_row_sample(const Eigen::Ref<const Vector>& e_j, const Eigen::Ref<const Matrix>& pseudo,
                       const Eigen::Ref<const Matrix>& g_hat, const ProductKernel& kernel,
                       const Eigen::Ref<const Matrix>& k_omega_chol, const Eigen::Ref<const Vector>& noise,
                       double jitter) {
  if (k_omega_chol.rows() != g_hat.cols() || k_omega_chol.cols() != g_hat.cols() || noise.size() != g_hat.cols()) {
    throw ConfigError("cond_row_sample: frequency factor and noise must match the column count");
  }
  const auto m = cond_row_moments(e_j, pseudo, g_hat, kernel, jitter);
  const Vector shaped = k_omega_chol.triangularView<Eigen::Lower>() * noise;
  return m.mean + std::sqrt(m.variance) * shaped;
}

ConditionalMoments cond_scalar_moments(const Eigen::Ref<const Vector>& v, const Eigen::Ref<const Matrix>& pseudo,
                                       const Eigen::Ref<const Vector>& h_hat, const SEKernel& kernel,
                                       double jitter) {
  auto parts = conditional(v, pseudo, h_hat, kernel.log_lengthscale, jitter, "cond_scalar");
  return {std::move(parts.mean), parts.variance};
}

double cond_scalar_sample(const Eigen::Ref<const Vector>& v, const Eigen::Ref<const Matrix>& pseudo,
                          const Eigen::Ref<const Vector>& h_hat, const SEKernel& kernel, double noise,
                          double jitter) {
  const auto m = cond_scalar_moments(v, pseudo, h_hat, kernel, jitter);
  return m.mean(0) + std::sqrt(m.variance) * noise;
}

namespace graph {

ad::Var mg_sample(ad::Var mean, ad::Var row_chol, ad::Var col_chol, ad::Var noise) {
  return ad::add(mean, ad::matmul(ad::matmul(row_chol, noise), ad::transpose(col_chol)));
}

ad::Var kl_mg_prior(ad::Var mean, ad::Var row_chol, ad::Var col_chol, ad::Var prior_row_chol,
                    ad::Var prior_col_chol) {
  const auto n = static_cast<double>(mean.rows());
  const auto m = static_cast<double>(mean.cols());
  // tr(Kc^{-1} R R^T) tr(Kr^{-1} L L^T) + tr(Kc^{-1} A^T Kr^{-1} A) - nm
  //   + m log|Kr| + n log|Kc| - m log|LL^T| - n log|RR^T|
  const auto trace_col = ad::frobenius_sq(ad::solve_lower(prior_col_chol, col_chol));
  const auto trace_row = ad::frobenius_sq(ad::solve_lower(prior_row_chol, row_chol));
  const auto whitened_rows = ad::solve_lower(prior_row_chol, mean);  // Pr^{-1} A
  const auto mahalanobis = ad::frobenius_sq(ad::solve_lower(prior_col_chol, ad::transpose(whitened_rows)));
  auto total = ad::add(ad::mul(trace_col, trace_row), mahalanobis);
  total = ad::add(total, ad::scale(ad::log_diag_sum(prior_row_chol), 2.0 * m));
  total = ad::add(total, ad::scale(ad::log_diag_sum(prior_col_chol), 2.0 * n));
  total = ad::sub(total, ad::scale(ad::log_diag_sum(row_chol), 2.0 * m));
  total = ad::sub(total, ad::scale(ad::log_diag_sum(col_chol), 2.0 * n));
  return ad::scale(ad::add_scalar(total, -n * m), 0.5);
}

ad::Var kl_gaussian(ad::Var mean, ad::Var chol, ad::Var prior_chol) {
  const auto n = static_cast<double>(mean.rows());
  auto total = ad::add(ad::frobenius_sq(ad::solve_lower(prior_chol, chol)),
                       ad::frobenius_sq(ad::solve_lower(prior_chol, mean)));
  total = ad::add(total, ad::scale(ad::log_diag_sum(prior_chol), 2.0));
  total = ad::sub(total, ad::scale(ad::log_diag_sum(chol), 2.0));
  return ad::scale(ad::add_scalar(total, -n), 0.5);
}

Projection project(ad::Var inputs, ad::Var pseudo, ad::Var log_lengthscale, ad::Var pseudo_chol) {
  const auto kzx = ad::se_kernel(pseudo, inputs, log_lengthscale);  // a x B
  const auto whitened = ad::solve_lower(pseudo_chol, kzx);
  // Unit amplitude: k(x, x) = 1.
  const auto variance = ad::transpose(ad::add_scalar(ad::neg(ad::col_sums(ad::square(whitened))), 1.0));
  return {whitened, variance};
}

ad::Var conditional_mean(const Projection& p, ad::Var pseudo_chol, ad::Var outputs) {
  return ad::matmul(ad::transpose(p.whitened), ad::solve_lower(pseudo_chol, outputs));
}

ad::Var conditional_sample(const Projection& p, ad::Var mean, ad::Var noise, ad::Var col_chol) {
  const auto spread = ad::sqrt_clamped(p.variance);
  const auto shaped = col_chol.valid() ? ad::matmul(noise, ad::transpose(col_chol)) : noise;
  return ad::add(mean, ad::scale_rows(spread, shaped));
}

}  // namespace graph

}  // namespace nonfat
