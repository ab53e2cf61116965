#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nonfat/data.hpp"
#include "nonfat/model.hpp"
#include "nonfat/train_config.hpp"

namespace nonfat {

struct AdamState {
  std::vector<Matrix> m, v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam step that descends `grads`. Throws NumericalError
/// naming the first parameter with a non-finite gradient.
void adam_step(NonfatParams& params, const std::vector<Matrix>& grads, AdamState& state, double lr);

struct Metrics {
  double rmse = 0.0;
  double log_lik = 0.0;  // mean over points of log mean_s N(y | m_s, noise_var)
};

Metrics metrics(const Prediction& pred, const Vector& truth);

Vector values_of(const Dataset& d);

struct GradCheckOptions {
  double eps = 1e-4;
  std::uint64_t seed = 0;
  // Models with more learnable scalars are checked on a seeded subsample.
  std::size_t max_scalars = 2000;
  // Denominator floor of the relative error |a - f| / max(|a|, |f|, floor).
  double floor = 1e-8;
  double jitter = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_name;  // "tensor[row,col]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares ELBO gradients with central differences under fixed noise drawn
/// from `opts.seed`; the batch doubles as the full data set.
GradCheckResult grad_check(const NonfatParams& params, std::span<const Observation> batch,
                           const GradCheckOptions& opts = {});

/// Small model with spread-out parameters for gradient checks: K=2, d_k=3,
/// R=2, C=3, s=2, a_k=2, a_g=3 and a batch of 4 observations.
struct TinyProblem {
  NonfatParams params;
  std::vector<Observation> batch;
};
TinyProblem tiny_problem(std::uint64_t seed);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double elbo = 0.0;      // full training-set estimate over fixed noise draws
  double train_rmse = 0.0;
  double test_rmse = 0.0;
  double test_ll = 0.0;
  double validation_rmse = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  bool has_validation = false;
};

void write_history_csv(std::ostream& out, const TrainHistory& h);

struct TrainResult {
  NonfatParams params;  // snapshot at the best selection RMSE
  TrainHistory history;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
};

/// Seed of the per-epoch metric predictions made by train().
std::uint64_t evaluation_seed(const TrainConfig& config);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam on the negative ELBO. Both sets must be normalized. Deterministic
/// given `config.seed`.
TrainResult train(const Dataset& train_set, const Dataset& test_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Boxcar mean over `window` consecutive values (length n - window + 1).
std::vector<double> moving_average(std::span<const double> xs, std::size_t window);

}  // namespace nonfat
