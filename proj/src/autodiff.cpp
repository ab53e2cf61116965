#include "nonfat/autodiff.hpp"

#include <cmath>
#include <string>

#include "nonfat/kernels.hpp"

namespace nonfat::ad {

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw ConfigError("Var::scalar: node is not 1x1");
  return v(0, 0);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, true});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, false});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::push(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::push(Matrix value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  for (const auto& p : parents) {
    if (p.tape() != this) throw ConfigError("autodiff: operand recorded on a different tape");
    needs = needs || needs_grad(p.id());
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(backward) : nullptr, needs});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(int id, const Matrix& g) {
  auto& node = nodes_[static_cast<std::size_t>(id)];
  if (!node.needs_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

void Tape::backward(Var output) {
  if (output.tape() != this) throw ConfigError("backward: output recorded on a different tape");
  if (output.value().size() != 1) throw ConfigError("backward: output must be 1x1");
  for (auto& node : nodes_) node.grad.resize(0, 0);
  accumulate(output.id(), Matrix::Ones(1, 1));
  for (int id = output.id(); id >= 0; --id) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.backward || node.grad.size() == 0) continue;
    node.backward(*this, id, node.grad);
  }
}

Matrix Tape::grad(Var v) const {
  const auto& node = nodes_[static_cast<std::size_t>(v.id())];
  if (node.grad.size() == 0) return Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

std::vector<std::pair<Index, Index>> Tape::shapes() const {
  std::vector<std::pair<Index, Index>> out;
  out.reserve(nodes_.size());
  for (const auto& node : nodes_) out.emplace_back(node.value.rows(), node.value.cols());
  return out;
}

void Tape::note_clamp(double magnitude) {
  ++clamp_count_;
  max_clamped_ = std::max(max_clamped_, magnitude);
}

namespace {

bool is_scalar(const Var& v) { return v.rows() == 1 && v.cols() == 1; }
bool same_shape(const Var& a, const Var& b) { return a.rows() == b.rows() && a.cols() == b.cols(); }

std::string shape_str(const Var& v) { return std::to_string(v.rows()) + "x" + std::to_string(v.cols()); }

[[noreturn]] void shape_error(const char* op, const Var& a, const Var& b) {
  throw ConfigError(std::string(op) + ": shape mismatch (" + shape_str(a) + " vs " + shape_str(b) + ")");
}

// Sums an adjoint down to a broadcast scalar operand.
Matrix reduce_to(const Matrix& g, const Var& target) {
  if (is_scalar(target) && g.size() != 1) return Matrix::Constant(1, 1, g.sum());
  return g;
}

Var add_or_sub(Var a, Var b, double sign, const char* op) {
  Matrix out;
  if (same_shape(a, b)) {
    out = a.value() + sign * b.value();
  } else if (is_scalar(b)) {
    out = a.value().array() + sign * b.scalar();
  } else if (is_scalar(a)) {
    out = (sign * b.value().array()) + a.scalar();
  } else {
    shape_error(op, a, b);
  }
  return a.tape()->push(std::move(out), {a, b}, [a, b, sign](Tape& tape, int, const Matrix& g) {
    tape.accumulate(a.id(), reduce_to(g, a));
    tape.accumulate(b.id(), reduce_to(sign * g, b));
  });
}

Var unary(Var a, Matrix out, std::function<Matrix(const Matrix& in, const Matrix& out, const Matrix& g)> dfn) {
  return a.tape()->push(std::move(out), {a}, [a, dfn = std::move(dfn)](Tape& tape, int self, const Matrix& g) {
    tape.accumulate(a.id(), dfn(a.value(), tape.value(self), g));
  });
}

Matrix tril(const Matrix& m) { return m.triangularView<Eigen::Lower>(); }

void require_square_lower(const Var& lower, const char* op) {
  if (lower.rows() != lower.cols()) throw ConfigError(std::string(op) + ": factor must be square");
}

}  // namespace

Var add(Var a, Var b) { return add_or_sub(a, b, 1.0, "add"); }
Var sub(Var a, Var b) { return add_or_sub(a, b, -1.0, "sub"); }

Var mul(Var a, Var b) {
  Matrix out;
  if (same_shape(a, b)) {
    out = a.value().cwiseProduct(b.value());
  } else if (is_scalar(b)) {
    out = a.value() * b.scalar();
  } else if (is_scalar(a)) {
    out = b.value() * a.scalar();
  } else {
    shape_error("mul", a, b);
  }
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape& tape, int, const Matrix& g) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (same_shape(a, b)) {
      if (tape.needs_grad(a.id())) tape.accumulate(a.id(), g.cwiseProduct(bv));
      if (tape.needs_grad(b.id())) tape.accumulate(b.id(), g.cwiseProduct(av));
    } else if (bv.size() == 1) {
      tape.accumulate(a.id(), g * bv(0, 0));
      tape.accumulate(b.id(), Matrix::Constant(1, 1, g.cwiseProduct(av).sum()));
    } else {
      tape.accumulate(a.id(), Matrix::Constant(1, 1, g.cwiseProduct(bv).sum()));
      tape.accumulate(b.id(), g * av(0, 0));
    }
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double c) {
  return unary(a, a.value() * c, [c](const Matrix&, const Matrix&, const Matrix& g) { return Matrix(g * c); });
}

Var add_scalar(Var a, double c) {
  return unary(a, a.value().array() + c, [](const Matrix&, const Matrix&, const Matrix& g) { return g; });
}

Var exp(Var a) {
  return unary(a, a.value().array().exp(),
               [](const Matrix&, const Matrix& out, const Matrix& g) { return Matrix(g.cwiseProduct(out)); });
}

Var log(Var a) {
  if ((a.value().array() <= 0.0).any()) throw NumericalError("log: non-positive argument");
  return unary(a, a.value().array().log(),
               [](const Matrix& in, const Matrix&, const Matrix& g) { return Matrix(g.cwiseQuotient(in)); });
}

Var square(Var a) {
  return unary(a, a.value().array().square(),
               [](const Matrix& in, const Matrix&, const Matrix& g) { return Matrix(2.0 * g.cwiseProduct(in)); });
}

Var sqrt_clamped(Var a) {
  Matrix out = a.value();
  for (Index i = 0; i < out.size(); ++i) {
    double& v = out.data()[i];
    if (v < 0.0) {
      a.tape()->note_clamp(-v);
      v = 0.0;
    }
    v = std::sqrt(v);
  }
  return unary(a, std::move(out), [](const Matrix&, const Matrix& out, const Matrix& g) {
    Matrix d(out.rows(), out.cols());
    for (Index i = 0; i < out.size(); ++i) {
      d.data()[i] = out.data()[i] > 0.0 ? g.data()[i] / (2.0 * out.data()[i]) : 0.0;
    }
    return d;
  });
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  return a.tape()->push(a.value() * b.value(), {a, b}, [a, b](Tape& tape, int, const Matrix& g) {
    if (tape.needs_grad(a.id())) tape.accumulate(a.id(), g * b.value().transpose());
    if (tape.needs_grad(b.id())) tape.accumulate(b.id(), a.value().transpose() * g);
  });
}

Var transpose(Var a) {
  return unary(a, a.value().transpose(),
               [](const Matrix&, const Matrix&, const Matrix& g) { return Matrix(g.transpose()); });
}

Var scale_rows(Var v, Var m) {
  if (v.cols() != 1 || v.rows() != m.rows()) shape_error("scale_rows", v, m);
  Matrix out = v.value().col(0).asDiagonal() * m.value();
  return v.tape()->push(std::move(out), {v, m}, [v, m](Tape& tape, int, const Matrix& g) {
    if (tape.needs_grad(v.id())) tape.accumulate(v.id(), g.cwiseProduct(m.value()).rowwise().sum());
    if (tape.needs_grad(m.id())) tape.accumulate(m.id(), v.value().col(0).asDiagonal() * g);
  });
}

Var sum(Var a) {
  return unary(a, Matrix::Constant(1, 1, a.value().sum()), [](const Matrix& in, const Matrix&, const Matrix& g) {
    return Matrix(Matrix::Constant(in.rows(), in.cols(), g(0, 0)));
  });
}

Var row_sums(Var a) {
  return unary(a, a.value().rowwise().sum(), [](const Matrix& in, const Matrix&, const Matrix& g) {
    return Matrix(g.col(0).replicate(1, in.cols()));
  });
}

Var col_sums(Var a) {
  return unary(a, a.value().colwise().sum(), [](const Matrix& in, const Matrix&, const Matrix& g) {
    return Matrix(g.row(0).replicate(in.rows(), 1));
  });
}

Var frobenius_sq(Var a) {
  return unary(a, Matrix::Constant(1, 1, a.value().squaredNorm()),
               [](const Matrix& in, const Matrix&, const Matrix& g) { return Matrix(2.0 * g(0, 0) * in); });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Matrix out(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= static_cast<std::size_t>(a.rows())) throw ConfigError("gather_rows: row index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(static_cast<Index>(idx[i]));
  }
  return a.tape()->push(std::move(out), {a}, [a, idx = std::move(idx)](Tape& tape, int, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) d.row(static_cast<Index>(idx[i])) += g.row(static_cast<Index>(i));
    tape.accumulate(a.id(), d);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no operands");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", parts.front(), p);
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return parts.front().tape()->push(std::move(out), parts, [saved](Tape& tape, int, const Matrix& g) {
    Index off = 0;
    for (const auto& p : saved) {
      if (tape.needs_grad(p.id())) tape.accumulate(p.id(), g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var se_kernel(Var x, Var y, Var log_lengthscale) {
  if (x.cols() != y.cols()) shape_error("se_kernel", x, y);
  if (!is_scalar(log_lengthscale)) throw ConfigError("se_kernel: log lengthscale must be 1x1");
  const double eta = std::exp(log_lengthscale.scalar());
  const auto& xv = x.value();
  const auto& yv = y.value();
  Matrix k(xv.rows(), yv.rows());
  for (Index i = 0; i < xv.rows(); ++i) {
    for (Index j = 0; j < yv.rows(); ++j) k(i, j) = std::exp(-(xv.row(i) - yv.row(j)).squaredNorm() / eta);
  }
  return x.tape()->push(std::move(k), {x, y, log_lengthscale},
                        [x, y, log_lengthscale, eta](Tape& tape, int self, const Matrix& g) {
                          const auto& xv = x.value();
                          const auto& yv = y.value();
                          // G = adjoint (.) K; dK_ij/dx_i = -2 K_ij (x_i - y_j) / eta
                          const Matrix gk = g.cwiseProduct(tape.value(self));
                          if (tape.needs_grad(x.id())) {
                            Matrix dx = gk.rowwise().sum().asDiagonal() * xv - gk * yv;
                            tape.accumulate(x.id(), (-2.0 / eta) * dx);
                          }
                          if (tape.needs_grad(y.id())) {
                            Matrix dy = gk.colwise().sum().transpose().asDiagonal() * yv - gk.transpose() * xv;
                            tape.accumulate(y.id(), (-2.0 / eta) * dy);
                          }
                          if (tape.needs_grad(log_lengthscale.id())) {
                            double acc = 0.0;
                            for (Index i = 0; i < xv.rows(); ++i) {
                              for (Index j = 0; j < yv.rows(); ++j) {
                                acc += gk(i, j) * (xv.row(i) - yv.row(j)).squaredNorm();
                              }
                            }
                            tape.accumulate(log_lengthscale.id(), Matrix::Constant(1, 1, acc / eta));
                          }
                        });
}

Var cholesky(Var a, double base_jitter, double* jitter_used) {
  auto result = chol_jitter(a.value(), base_jitter);
  if (jitter_used != nullptr) *jitter_used = result.jitter;
  return a.tape()->push(std::move(result.lower), {a}, [a](Tape& tape, int self, const Matrix& g) {
    // Symmetric adjoint of the Cholesky map: with P = Phi(L^T tril(G)),
    // Phi taking the lower triangle with a halved diagonal,
    // S = L^{-T} P L^{-1} and A_bar = (S + S^T) / 2.
    const Matrix& lower = tape.value(self);
    const auto tri = lower.triangularView<Eigen::Lower>();
    Matrix p = lower.transpose() * tril(g);
    p = tril(p);
    p.diagonal() *= 0.5;
    Matrix s = tri.transpose().solve(p);                               // L^{-T} P
    s = tri.transpose().solve(s.transpose()).transpose().eval();  // (L^{-T} (L^{-T} P)^T)^T = L^{-T} P L^{-1}
    tape.accumulate(a.id(), 0.5 * (s + s.transpose()));
  });
}

Var solve_lower(Var lower, Var b) {
  require_square_lower(lower, "solve_lower");
  if (lower.cols() != b.rows()) shape_error("solve_lower", lower, b);
  Matrix x = lower.value().triangularView<Eigen::Lower>().solve(b.value());
  return lower.tape()->push(std::move(x), {lower, b}, [lower, b](Tape& tape, int self, const Matrix& g) {
    // X = L^{-1} B: B_bar = L^{-T} X_bar, L_bar = -tril(B_bar X^T)
    const Matrix bbar = lower.value().triangularView<Eigen::Lower>().transpose().solve(g);
    if (tape.needs_grad(b.id())) tape.accumulate(b.id(), bbar);
    if (tape.needs_grad(lower.id())) tape.accumulate(lower.id(), -tril(bbar * tape.value(self).transpose()));
  });
}

Var solve_lower_transposed(Var lower, Var b) {
  require_square_lower(lower, "solve_lower_transposed");
  if (lower.cols() != b.rows()) shape_error("solve_lower_transposed", lower, b);
  Matrix x = lower.value().triangularView<Eigen::Lower>().transpose().solve(b.value());
  return lower.tape()->push(std::move(x), {lower, b}, [lower, b](Tape& tape, int self, const Matrix& g) {
    // X = L^{-T} B: B_bar = L^{-1} X_bar, L_bar = -tril(X B_bar^T)
    const Matrix bbar = lower.value().triangularView<Eigen::Lower>().solve(g);
    if (tape.needs_grad(b.id())) tape.accumulate(b.id(), bbar);
    if (tape.needs_grad(lower.id())) tape.accumulate(lower.id(), -tril(tape.value(self) * bbar.transpose()));
  });
}

Var lower_factor(Var p) {
  if (p.rows() != p.cols()) throw ConfigError("lower_factor: parameter must be square");
  Matrix out = p.value().triangularView<Eigen::StrictlyLower>();
  out.diagonal() = p.value().diagonal().array().exp();
  return unary(p, std::move(out), [](const Matrix&, const Matrix& out, const Matrix& g) {
    Matrix d = g.triangularView<Eigen::StrictlyLower>();
    d.diagonal() = g.diagonal().cwiseProduct(out.diagonal());
    return d;
  });
}

Var log_diag_sum(Var lower) {
  require_square_lower(lower, "log_diag_sum");
  const auto diag = lower.value().diagonal();
  if ((diag.array() <= 0.0).any()) throw NumericalError("log_diag_sum: non-positive diagonal");
  return unary(lower, Matrix::Constant(1, 1, diag.array().log().sum()),
               [](const Matrix& in, const Matrix&, const Matrix& g) {
                 Matrix d = Matrix::Zero(in.rows(), in.cols());
                 d.diagonal() = g(0, 0) * in.diagonal().cwiseInverse();
                 return d;
               });
}

}  // namespace nonfat::ad
