#include "nonfat/quadrature.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace nonfat {

namespace {

struct LaguerreEval {
  long double value;       // L_n(x)
  long double previous;    // L_{n-1}(x)
  long double derivative;  // L_n'(x)
};

LaguerreEval laguerre_recurrence(int n, long double x) {
  long double p_prev = 0.0L;
  long double p = 1.0L;
  for (int j = 1; j <= n; ++j) {
    const long double p_next = ((2.0L * j - 1.0L - x) * p - (j - 1.0L) * p_prev) / j;
    p_prev = p;
    p = p_next;
  }
  // x L_n'(x) = n (L_n(x) - L_{n-1}(x))
  return {p, p_prev, n * (p - p_prev) / x};
}

}  // namespace

double laguerre(int n, double x) {
  if (n < 0) throw ConfigError("laguerre: negative degree");
  return static_cast<double>(laguerre_recurrence(n, x).value);
}

GLRule gauss_laguerre(int order) {
  if (order < 1 || order > kMaxQuadratureOrder) {
    throw ConfigError("gauss_laguerre: order must be in [1, " + std::to_string(kMaxQuadratureOrder) + "], got " +
                      std::to_string(order));
  }
  const int n = order;
  GLRule rule;
  rule.order = n;
  rule.nodes.resize(n);
  rule.weights.resize(n);

  long double z = 0.0L;
  for (int i = 0; i < n; ++i) {
    // Asymptotic initial guesses (Stroud & Secrest), each seeded from the
    // previously converged roots.
    if (i == 0) {
      z = 3.0L / (1.0L + 2.4L * n);
    } else if (i == 1) {
      z += 15.0L / (1.0L + 2.5L * n);
    } else {
      const long double ai = i - 1;
      z += (1.0L + 2.55L * ai) / (1.9L * ai) * (z - static_cast<long double>(rule.nodes(i - 2)));
    }

    bool converged = false;
    for (int iter = 0; iter < 100; ++iter) {
      const auto ev = laguerre_recurrence(n, z);
      const long double step = ev.value / ev.derivative;
      z -= step;
      if (std::abs(step) <= 1e-17L * std::max(1.0L, std::abs(z))) {
        converged = true;
        break;
      }
    }
    const auto ev = laguerre_recurrence(n, z);
    // Relative residual: the absolute size of L_n near large roots far exceeds 1.
    const long double residual = std::abs(ev.value / (z * ev.derivative));
    if (!converged && residual > 1e-14L) {
      throw NumericalError("gauss_laguerre: root " + std::to_string(i) + " of L_" + std::to_string(n) +
                           " did not converge");
    }
    if (z <= 0.0L || (i > 0 && z <= static_cast<long double>(rule.nodes(i - 1)))) {
      throw NumericalError("gauss_laguerre: root " + std::to_string(i) + " of L_" + std::to_string(n) +
                           " converged out of order");
    }
    // w = x / ((n+1)^2 L_{n+1}(x)^2)
    const long double next = laguerre_recurrence(n + 1, z).value;
    const long double np1 = n + 1.0L;
    rule.nodes(i) = static_cast<double>(z);
    rule.weights(i) = static_cast<double>(z / (np1 * np1 * next * next));
  }
  return rule;
}

double integrate(const std::function<double(double)>& g, const GLRule& rule) {
  double total = 0.0;
  for (int c = 0; c < rule.order; ++c) {
    const double v = g(rule.nodes(c));
    if (!std::isfinite(v)) {
      throw NumericalError("integrate: integrand non-finite at node " + std::to_string(c));
    }
    total += rule.weights(c) * v;
  }
  return total;
}

double synth_trajectory(const Eigen::Ref<const Vector>& alpha, const GLRule& rule, double t) {
  if (alpha.size() != rule.order) throw ConfigError("synth_trajectory: alpha length must equal the rule order");
  double total = 0.0;
  for (int c = 0; c < rule.order; ++c) total += alpha(c) * rule.weights(c) * std::cos(rule.nodes(c) * t);
  return total / std::numbers::pi;
}

Matrix synthesis_basis(const GLRule& rule, const Eigen::Ref<const Vector>& times) {
  Matrix basis(times.size(), rule.order);
  for (Index b = 0; b < times.size(); ++b) {
    for (int c = 0; c < rule.order; ++c) {
      basis(b, c) = rule.weights(c) * std::cos(rule.nodes(c) * times(b)) / std::numbers::pi;
    }
  }
  return basis;
}

Vector synth_batch(const Eigen::Ref<const Matrix>& alpha_rows, const GLRule& rule,
                   const Eigen::Ref<const Vector>& times) {
  if (alpha_rows.cols() != rule.order) throw ConfigError("synth_batch: column count must equal the rule order");
  if (alpha_rows.rows() != times.size()) throw ConfigError("synth_batch: one time per row required");
  for (Index b = 0; b < times.size(); ++b) {
    if (!std::isfinite(times(b))) throw ConfigError("synth_batch: non-finite time");
  }
  return alpha_rows.cwiseProduct(synthesis_basis(rule, times)).rowwise().sum();
}

}  // namespace nonfat
