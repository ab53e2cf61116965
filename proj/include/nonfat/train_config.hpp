#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

namespace nonfat {

/// How train() picks the returned parameter snapshot.
enum class Selection {
  TestRmse,    // smallest test RMSE over epochs
  Validation,  // smallest RMSE on a held-out slice of the training set
};

Selection selection_from_string(const std::string& name);
std::string to_string(Selection s);

struct TrainConfig {
  std::size_t R = 3;   // trajectories per entity
  std::size_t C = 10;  // quadrature order
  std::size_t s = 3;   // frequency-embedding dimension
  std::size_t a_k = 100;
  std::size_t a_g = 100;
  std::size_t batch_size = 100;
  double learning_rate = 1e-3;
  std::size_t epochs = 500;
  std::uint64_t seed = 0;
  double jitter = 1e-6;
  std::size_t num_pred_samples = 20;
  bool per_r_kernels = false;
  // Monte-Carlo samples per data point in each ELBO evaluation.
  std::size_t elbo_samples = 1;
  Selection selection = Selection::TestRmse;
  double validation_frac = 0.1;

  /// Throws ConfigError naming the first bad field.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Rejects unknown keys; missing keys keep their defaults.
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace nonfat
