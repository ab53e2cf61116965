#pragma once

#include <functional>

#include "nonfat/common.hpp"

namespace nonfat {

/// Gauss-Laguerre rule for integrals of the form int_0^inf e^{-x} g(x) dx.
struct GLRule {
  int order = 0;
  Vector nodes;    // ascending, positive
  Vector weights;  // positive, sum to 1
};

inline constexpr int kMaxQuadratureOrder = 64;

/// Order-C rule; nodes are the roots of the Laguerre polynomial L_C.
/// Throws NumericalError if a root fails to converge, ConfigError if the
/// order is outside [1, 64].
GLRule gauss_laguerre(int order);

/// Evaluates L_n(x) by the three-term recurrence.
double laguerre(int n, double x);

/// Sum_c w_c g(x_c). Throws NumericalError if g is non-finite at a node.
double integrate(const std::function<double(double)>& g, const GLRule& rule);

/// Trajectory value (1/pi) sum_c alpha_c w_c cos(x_c t) from frequency-function
/// samples alpha taken at the rule's nodes.
double synth_trajectory(const Eigen::Ref<const Vector>& alpha, const GLRule& rule, double t);

/// Row b holds (1/pi) w_c cos(x_c t_b), so a trajectory value is the dot product
/// of that row with the alpha samples.
Matrix synthesis_basis(const GLRule& rule, const Eigen::Ref<const Vector>& times);

/// Row-wise synth_trajectory: output b uses alpha_rows.row(b) at times(b).
Vector synth_batch(const Eigen::Ref<const Matrix>& alpha_rows, const GLRule& rule,
                   const Eigen::Ref<const Vector>& times);

}  // namespace nonfat
