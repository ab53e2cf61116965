#pragma once

#include <cmath>

#include "nonfat/common.hpp"

namespace nonfat {

/// Unit-amplitude square-exponential kernel exp(-||x - y||^2 / eta) with
/// eta = exp(log_lengthscale).
struct SEKernel {
  double log_lengthscale = 0.0;

  double lengthscale() const { return std::exp(log_lengthscale); }

  double operator()(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) const;

  /// d k(x, y) / d log_lengthscale = k * ||x - y||^2 / eta.
  double grad_log_lengthscale(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) const;
};

/// Kernel over [embedding; frequency] pairs that factorizes into an embedding
/// part and a frequency part, each with its own lengthscale.
struct ProductKernel {
  SEKernel embed;
  SEKernel freq;

  double operator()(const Eigen::Ref<const Vector>& e, double w, const Eigen::Ref<const Vector>& e2, double w2) const;
};

/// Symmetric Gram matrix over the rows of x.
Matrix gram(const SEKernel& kernel, const Eigen::Ref<const Matrix>& x);

/// Cross-covariance between the rows of x and the rows of y.
Matrix cross(const SEKernel& kernel, const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& y);

struct CholeskyResult {
  Matrix lower;
  double jitter = 0.0;
  int attempts = 0;
};

inline constexpr double kDefaultJitter = 1e-6;
inline constexpr int kMaxJitterAttempts = 6;

/// L with L L^T = m + j I. j starts at base_jitter and is multiplied by 10 on
/// each failed factorization, up to 6 attempts. A base of zero makes a single
/// attempt. Throws NumericalError when every attempt fails.
CholeskyResult chol_jitter(const Eigen::Ref<const Matrix>& m, double base_jitter = kDefaultJitter);

}  // namespace nonfat
