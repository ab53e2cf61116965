#pragma once

#include "nonfat/autodiff.hpp"
#include "nonfat/common.hpp"
#include "nonfat/kernels.hpp"

namespace nonfat {

/// MN(mean, row_chol row_chol^T, col_chol col_chol^T): vec(X) is Gaussian with
/// covariance (col_chol col_chol^T) kron (row_chol row_chol^T).
struct MatrixGaussian {
  Matrix mean;
  Matrix row_chol;
  Matrix col_chol;

  Index rows() const { return mean.rows(); }
  Index cols() const { return mean.cols(); }
  /// Throws ConfigError unless the factors are square, lower-triangular with a
  /// positive diagonal, and sized to the mean.
  void validate() const;
};

/// Full-covariance Gaussian N(mean, chol chol^T).
struct GaussianPosterior {
  Vector mean;
  Matrix chol;
};

double mg_logpdf(const Eigen::Ref<const Matrix>& x, const MatrixGaussian& d);

/// mean + row_chol * noise * col_chol^T.
Matrix mg_sample(const MatrixGaussian& d, const Eigen::Ref<const Matrix>& noise);

/// KL(q || MN(0, prior_row, prior_col)); the priors are factorized with chol_jitter.
double kl_mg_prior(const MatrixGaussian& q, const Eigen::Ref<const Matrix>& prior_row,
                   const Eigen::Ref<const Matrix>& prior_col, double jitter = kDefaultJitter);

/// KL(q || N(0, prior_cov)).
double kl_gaussian(const GaussianPosterior& q, const Eigen::Ref<const Matrix>& prior_cov,
                   double jitter = kDefaultJitter);

/// Moments of a GP value at one input given pseudo outputs at `pseudo`:
/// mean k(x, Z) K_ZZ^{-1} outputs and variance k(x, x) - k(x, Z) K_ZZ^{-1} k(Z, x),
/// the latter clamped at zero.
struct ConditionalMoments {
  Vector mean;
  double variance = 0.0;
};

/// Row of the first-level frequency matrix for embedding e_j given the pseudo
/// output matrix g_hat (a x C). The row covariance is variance * K_omega.
ConditionalMoments cond_row_moments(const Eigen::Ref<const Vector>& e_j, const Eigen::Ref<const Matrix>& pseudo,
                                    const Eigen::Ref<const Matrix>& g_hat, const ProductKernel& kernel,
                                    double jitter = kDefaultJitter);

/// mean + sqrt(variance) * K_omega_chol * noise.
Vector cond_row_sample(const Eigen::Ref<const Vector>& e_j, const Eigen::Ref<const Matrix>& pseudo,
                       const Eigen::Ref<const Matrix>& g_hat, const ProductKernel& kernel,
                       const Eigen::Ref<const Matrix>& k_omega_chol, const Eigen::Ref<const Vector>& noise,
                       double jitter = kDefaultJitter);

/// Second-level conditional: scalar GP value at v given pseudo outputs h_hat.
ConditionalMoments cond_scalar_moments(const Eigen::Ref<const Vector>& v, const Eigen::Ref<const Matrix>& pseudo,
                                       const Eigen::Ref<const Vector>& h_hat, const SEKernel& kernel,
                                       double jitter = kDefaultJitter);

double cond_scalar_sample(const Eigen::Ref<const Vector>& v, const Eigen::Ref<const Matrix>& pseudo,
                          const Eigen::Ref<const Vector>& h_hat, const SEKernel& kernel, double noise,
                          double jitter = kDefaultJitter);

// Differentiable forms used by the model. Cholesky factors are passed in so a
// batch can share one factorization of the pseudo-input covariance.
namespace graph {

ad::Var mg_sample(ad::Var mean, ad::Var row_chol, ad::Var col_chol, ad::Var noise);

/// KL(MN(mean, LL^T, RR^T) || MN(0, Pr Pr^T, Pc Pc^T)) without forming any
/// Kronecker product.
ad::Var kl_mg_prior(ad::Var mean, ad::Var row_chol, ad::Var col_chol, ad::Var prior_row_chol,
                    ad::Var prior_col_chol);

/// KL(N(mean, SS^T) || N(0, PP^T)) for a column-vector mean.
ad::Var kl_gaussian(ad::Var mean, ad::Var chol, ad::Var prior_chol);

/// Shared pieces of a batch of conditionals at inputs x (B x d) against
/// pseudo inputs Z (a x d) with unit-amplitude SE kernel.
struct Projection {
  ad::Var whitened;  // L_Z^{-1} K(Z, x), a x B
  ad::Var variance;  // 1 - column norms of `whitened`, B x 1 (unclamped)
};

Projection project(ad::Var inputs, ad::Var pseudo, ad::Var log_lengthscale, ad::Var pseudo_chol);

/// K(x, Z) K_ZZ^{-1} outputs for pseudo outputs (a x m); returns B x m.
ad::Var conditional_mean(const Projection& p, ad::Var pseudo_chol, ad::Var outputs);

/// Per-row conditional samples: mean + sqrt(clamp(variance)) (.) (noise * col_chol^T).
/// noise is B x m; pass an empty col_chol (invalid Var) for scalar outputs.
ad::Var conditional_sample(const Projection& p, ad::Var mean, ad::Var noise, ad::Var col_chol);

}  // namespace graph

}  // namespace nonfat
