#pragma once

// Two-level sparse GP model of factor trajectories.
//
// Mode k entity j carries R trajectories u^k_{j,r}(t). Each trajectory is the
// cosine synthesis of a row alpha of F^k_r, where F^k_r is a GP over
// (embedding, frequency) pairs evaluated at the quadrature nodes. Entry values
// are a second GP over the concatenated trajectory values at time t.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nonfat/autodiff.hpp"
#include "nonfat/common.hpp"
#include "nonfat/data.hpp"
#include "nonfat/quadrature.hpp"
#include "nonfat/random.hpp"
#include "nonfat/train_config.hpp"

namespace nonfat {

struct ModelShape {
  std::vector<std::size_t> dims;
  std::size_t R = 1;
  std::size_t C = 1;
  std::size_t s = 1;
  std::size_t a_k = 1;
  std::size_t a_g = 1;
  bool per_r_kernels = false;

  static ModelShape from(const TensorMeta& meta, const TrainConfig& config);

  std::size_t K() const { return dims.size(); }
  /// Kernels per mode: R when per_r_kernels, else 1.
  std::size_t kernels_per_mode() const { return per_r_kernels ? R : 1; }
  void validate() const;
  bool operator==(const ModelShape&) const = default;
};

void to_json(nlohmann::json& j, const ModelShape& s);
void from_json(const nlohmann::json& j, ModelShape& s);

struct NamedTensor {
  std::string name;
  Matrix value;
  // Raw Cholesky parameter: only the lower triangle is used, with the
  // diagonal on the log scale.
  bool lower = false;
};

/// Maps a raw Cholesky parameter to its factor and back.
Matrix lower_from_raw(const Matrix& raw);
Matrix raw_from_lower(const Matrix& lower);

/// Every learnable tensor of the model, in a fixed named order.
class NonfatParams {
 public:
  NonfatParams() = default;
  /// Zero-filled tensors with the layout implied by `shape`.
  explicit NonfatParams(ModelShape shape);

  const ModelShape& shape() const { return shape_; }
  const GLRule& rule() const { return rule_; }

  std::vector<NamedTensor>& tensors() { return tensors_; }
  const std::vector<NamedTensor>& tensors() const { return tensors_; }
  Matrix& operator[](std::size_t i) { return tensors_[i].value; }
  const Matrix& operator[](std::size_t i) const { return tensors_[i].value; }
  /// Position of the tensor called `name`; throws ConfigError if absent.
  std::size_t find(const std::string& name) const;

  // Tensor positions.
  std::size_t embedding(std::size_t k) const { return embedding_[k]; }
  std::size_t pseudo_freq(std::size_t k) const { return pseudo_freq_[k]; }
  std::size_t log_ls_embed(std::size_t k, std::size_t r) const;
  std::size_t log_ls_freq(std::size_t k, std::size_t r) const;
  std::size_t mean(std::size_t k, std::size_t r) const { return mean_[k * shape_.R + r]; }
  std::size_t row_factor(std::size_t k, std::size_t r) const { return row_factor_[k * shape_.R + r]; }
  std::size_t col_factor(std::size_t k, std::size_t r) const { return col_factor_[k * shape_.R + r]; }
  std::size_t pseudo_entry() const { return pseudo_entry_; }
  std::size_t h_mean() const { return h_mean_; }
  std::size_t h_factor() const { return h_factor_; }
  std::size_t log_ls_entry() const { return log_ls_entry_; }
  std::size_t log_noise_var() const { return log_noise_var_; }

  double noise_var() const;
  /// Number of scalars that influence the model (upper triangles of raw
  /// factors excluded).
  std::size_t num_learnable() const;
  bool all_finite() const;
  /// "name=norm" for every tensor, for divergence reports.
  std::string norms_report() const;

 private:
  std::size_t add(std::string name, Index rows, Index cols, bool lower = false);

  ModelShape shape_;
  GLRule rule_;
  std::vector<NamedTensor> tensors_;
  std::vector<std::size_t> embedding_, pseudo_freq_, log_ls_embed_, log_ls_freq_;
  std::vector<std::size_t> mean_, row_factor_, col_factor_;
  std::size_t pseudo_entry_ = 0, h_mean_ = 0, h_factor_ = 0, log_ls_entry_ = 0, log_noise_var_ = 0;
};

/// Deterministic initialization from `seed`.
NonfatParams init(const TensorMeta& meta, const TrainConfig& config, std::uint64_t seed);

/// Standard-normal noise that makes every sample a pure function of the
/// parameters. Pseudo-output noise is shared by the batch; row noise and the
/// scalar noise belong to individual batch elements.
struct NoiseBundle {
  std::vector<Matrix> pseudo;  // per (k, r) at k * R + r: a_k x C
  Vector entry;                // a_g
  std::vector<Matrix> rows;    // per (k, r): B x C
  Vector scalar;               // B

  std::size_t size() const { return static_cast<std::size_t>(scalar.size()); }
  /// Same global noise, with the per-element noise of `rows` only.
  NoiseBundle slice(std::span<const std::size_t> rows) const;
};

NoiseBundle draw_noise(const ModelShape& shape, std::size_t batch_size, Rng& rng);
NoiseBundle zero_noise(const ModelShape& shape, std::size_t batch_size);

/// Samples of u^k_{j,r}(t) for each requested (mode, entity); one R-vector
/// per request. Request i uses row i of the row noise of its mode.
std::vector<Vector> sample_trajectories(const NonfatParams& params,
                                        std::span<const std::pair<std::size_t, std::size_t>> entities, double t,
                                        const NoiseBundle& noise);

/// Sample of the latent entry value m at (entry, t); uses row 0 of the noise.
double sample_entry_value(const NonfatParams& params, const std::vector<std::size_t>& entry, double t,
                          const NoiseBundle& noise);

struct ElboTerms {
  double kl_freq = 0.0;   // sum over (k, r)
  double kl_entry = 0.0;
  double likelihood = 0.0;  // scaled by N_total / B
  double value = 0.0;
};

struct ElboGradient {
  ElboTerms terms;
  std::vector<Matrix> grads;  // parallel to params.tensors()
};

/// Mini-batch ELBO estimate. With several bundles the likelihood term is
/// averaged over them. Throws NumericalError if the value is not finite.
ElboTerms elbo_estimate(const NonfatParams& params, std::span<const Observation> batch, std::size_t n_total,
                        const NoiseBundle& noise, double jitter = 1e-6);
ElboGradient elbo_gradient(const NonfatParams& params, std::span<const Observation> batch, std::size_t n_total,
                           std::span<const NoiseBundle> noise, double jitter = 1e-6);

/// Shapes of every intermediate recorded while differentiating the ELBO.
std::vector<std::pair<Index, Index>> elbo_graph_shapes(const NonfatParams& params,
                                                       std::span<const Observation> batch, std::size_t n_total,
                                                       const NoiseBundle& noise, double jitter = 1e-6);

struct Prediction {
  Vector mean;      // per item
  Vector variance;  // sample variance of m plus the noise variance
  Matrix samples;   // items x num_samples
  double noise_var = 0.0;
};

/// Monte-Carlo prediction. Noise for an item depends only on (seed, sample,
/// entities, time), so equal queries give equal outputs.
Prediction predict(const NonfatParams& params, std::span<const Observation> items, std::size_t num_samples,
                   std::uint64_t seed, double jitter = 1e-6);

struct TrajectoryCurve {
  Vector mean;
  Vector stddev;
};

/// Monte-Carlo mean and standard deviation of u^k_{j,r} over `grid`.
TrajectoryCurve export_trajectory(const NonfatParams& params, std::size_t mode, std::size_t entity,
                                  std::size_t component, const Vector& grid, std::size_t num_samples,
                                  std::uint64_t seed, double jitter = 1e-6);

}  // namespace nonfat
