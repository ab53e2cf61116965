#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every intermediate as an Eigen matrix together with a
// closure that pushes the node's adjoint to its parents. Scalars are 1x1
// matrices. Nodes built only from constants carry no closure and are skipped
// during the backward sweep.

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "nonfat/common.hpp"

namespace nonfat::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  double scalar() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // `self` is the id of the node being differentiated.
  using Backward = std::function<void(Tape&, int self, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is collected by backward().
  Var variable(Matrix value);
  Var constant(Matrix value);
  Var constant(double value);

  /// Records a derived node. `backward` is kept only if a parent needs gradients.
  Var push(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var push(Matrix value, std::span<const Var> parents, Backward backward);

  /// Seeds d(output)/d(output) = 1 and sweeps the tape in reverse.
  void backward(Var output);

  /// Gradient of the last backward() output with respect to `v` (zeros if untouched).
  Matrix grad(Var v) const;

  /// Adds `g` into the adjoint of node `id`, if that node needs gradients.
  void accumulate(int id, const Matrix& g);
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  std::size_t size() const { return nodes_.size(); }
  /// Shapes of every recorded node, in creation order.
  std::vector<std::pair<Index, Index>> shapes() const;

  /// Bookkeeping for sqrt_clamped: how often a negative input was clamped and
  /// the largest clamped magnitude.
  void note_clamp(double magnitude);
  std::size_t clamp_count() const { return clamp_count_; }
  double max_clamped() const { return max_clamped_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  std::size_t clamp_count_ = 0;
  double max_clamped_ = 0.0;
};

// Elementwise arithmetic. Shapes must match, except that a 1x1 operand of
// add/sub/mul broadcasts as a scalar.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
/// sqrt(max(a, 0)); the derivative is taken as 0 where the input was clamped.
Var sqrt_clamped(Var a);

Var matmul(Var a, Var b);
Var transpose(Var a);
/// diag(v) * m for a column vector v.
Var scale_rows(Var v, Var m);

Var sum(Var a);
Var row_sums(Var a);
Var col_sums(Var a);
Var frobenius_sq(Var a);

Var gather_rows(Var a, std::span<const std::size_t> rows);
Var concat_cols(std::span<const Var> parts);

/// exp(-||x_i - y_j||^2 / exp(log_lengthscale)) for rows x_i of x and y_j of y.
Var se_kernel(Var x, Var y, Var log_lengthscale);

/// Lower Cholesky factor of a + j I. j starts at base_jitter and grows x10 per
/// failed attempt (at most 6 attempts); throws NumericalError past that.
Var cholesky(Var a, double base_jitter, double* jitter_used = nullptr);
/// L^{-1} b for lower-triangular L.
Var solve_lower(Var lower, Var b);
/// L^{-T} b for lower-triangular L.
Var solve_lower_transposed(Var lower, Var b);
/// Strictly lower part of p with exp() applied to the diagonal.
Var lower_factor(Var p);
/// sum_i log(L_ii); throws NumericalError on a non-positive diagonal.
Var log_diag_sum(Var lower);

}  // namespace nonfat::ad
