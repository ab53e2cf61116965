#include "nonfat/kernels.hpp"

#include <Eigen/Cholesky>
#include <string>

namespace nonfat {

namespace {

double squared_distance(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) {
  if (x.size() != y.size()) {
    throw ConfigError("kernel: dimension mismatch (" + std::to_string(x.size()) + " vs " + std::to_string(y.size()) +
                      ")");
  }
  return (x - y).squaredNorm();
}

}  // namespace

double SEKernel::operator()(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) const {
  return std::exp(-squared_distance(x, y) / lengthscale());
}

double SEKernel::grad_log_lengthscale(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) const {
  const double d2 = squared_distance(x, y);
  const double eta = lengthscale();
  return std::exp(-d2 / eta) * d2 / eta;
}

double ProductKernel::operator()(const Eigen::Ref<const Vector>& e, double w, const Eigen::Ref<const Vector>& e2,
                                 double w2) const {
  const double dw = w - w2;
  return embed(e, e2) * std::exp(-dw * dw / freq.lengthscale());
}

Matrix gram(const SEKernel& kernel, const Eigen::Ref<const Matrix>& x) {
  const Index n = x.rows();
  const double eta = kernel.lengthscale();
  Matrix k(n, n);
  for (Index i = 0; i < n; ++i) {
    k(i, i) = 1.0;
    for (Index j = 0; j < i; ++j) {
      k(i, j) = k(j, i) = std::exp(-(x.row(i) - x.row(j)).squaredNorm() / eta);
    }
  }
  return k;
}

Matrix cross(const SEKernel& kernel, const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& y) {
  if (x.cols() != y.cols()) throw ConfigError("cross: x and y must have the same number of columns");
  const double eta = kernel.lengthscale();
  Matrix k(x.rows(), y.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < y.rows(); ++j) k(i, j) = std::exp(-(x.row(i) - y.row(j)).squaredNorm() / eta);
  }
  return k;
}

CholeskyResult chol_jitter(const Eigen::Ref<const Matrix>& m, double base_jitter) {
  if (m.rows() != m.cols()) throw ConfigError("chol_jitter: matrix must be square");
  if (!m.allFinite()) throw NumericalError("chol_jitter: non-finite matrix entries");
  const int attempts = base_jitter > 0.0 ? kMaxJitterAttempts : 1;
  double jitter = base_jitter;
  for (int attempt = 1; attempt <= attempts; ++attempt, jitter *= 10.0) {
    Matrix shifted = m;
    shifted.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(shifted);
    if (llt.info() != Eigen::Success) continue;
    Matrix lower = llt.matrixL();
    if ((lower.diagonal().array() > 0.0).all() && lower.allFinite()) return {std::move(lower), jitter, attempt};
  }
  throw NumericalError("chol_jitter: matrix of size " + std::to_string(m.rows()) +
                       " is not positive definite after jitter escalation to " + std::to_string(jitter / 10.0));
}

}  // namespace nonfat
