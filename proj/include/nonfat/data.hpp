#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace nonfat {

/// One observed tensor entry: per-mode entity ids, value and timestamp.
struct Observation {
  std::vector<std::size_t> indices;
  double value = 0.0;
  double time = 0.0;
};

struct TensorMeta {
  std::size_t num_modes = 0;
  std::vector<std::size_t> dims;
  double time_min = 0.0;
  double time_max = 0.0;
};

/// Affine maps between raw units and the model's standardized scale.
///
/// Values are z-scored, times are mapped so that the training time range
/// becomes [0, 1]. Times outside the training range map outside [0, 1].
struct NormStats {
  double value_mean = 0.0;
  double value_std = 1.0;
  double time_min = 0.0;
  double time_max = 1.0;

  double value_to_norm(double v) const { return (v - value_mean) / value_std; }
  double value_from_norm(double z) const { return z * value_std + value_mean; }
  double time_scale() const { return time_max > time_min ? time_max - time_min : 1.0; }
  double time_to_norm(double t) const { return (t - time_min) / time_scale(); }
  double time_from_norm(double u) const { return u * time_scale() + time_min; }
};

void to_json(nlohmann::json& j, const NormStats& s);
void from_json(const nlohmann::json& j, NormStats& s);

struct Dataset {
  TensorMeta meta;
  std::vector<Observation> observations;
  // Populated by normalize(); value_std > 0 once normalized.
  double value_mean = 0.0;
  double value_std = 0.0;
  bool normalized = false;

  std::size_t size() const { return observations.size(); }
  bool empty() const { return observations.empty(); }
};

/// Checks every observation against the meta; throws DataError.
void validate(const Dataset& d);

/// Meta with dims = per-mode max index + 1 and the observed time range.
TensorMeta infer_meta(const std::vector<Observation>& obs, std::size_t num_modes);

/// Parses `i1,...,iK,value,time` CSV. `source` names the input in errors.
Dataset parse_csv(std::istream& in, std::size_t num_modes, const std::string& source = "<stream>");
Dataset load_csv(const std::filesystem::path& path, std::size_t num_modes);

std::string csv_header(std::size_t num_modes);
void write_csv(std::ostream& out, const Dataset& d);
void save_csv(const std::filesystem::path& path, const Dataset& d);

/// Uniform random partition with floor(N * train_frac) training rows.
std::pair<Dataset, Dataset> split(const Dataset& d, double train_frac, std::uint64_t seed);

struct NormalizedSplit {
  Dataset train;
  Dataset test;
  NormStats stats;
};

/// Standardizes both sets with statistics computed on `train` only.
NormalizedSplit normalize(const Dataset& train, const Dataset& test);

/// Maps a raw dataset through existing statistics.
Dataset apply_norm(const Dataset& raw, const NormStats& stats);

/// Inverse of apply_norm.
Dataset invert_norm(const Dataset& normalized, const NormStats& stats);

/// One epoch of shuffled index batches; the last batch may be short.
std::vector<std::vector<std::size_t>> minibatches(std::size_t num_items, std::size_t batch_size,
                                                  std::uint64_t seed, std::uint64_t epoch);

enum class Scenario { CpSin };

Scenario scenario_from_string(const std::string& name);
std::string to_string(Scenario s);

/// Noiseless generating function of a synthetic dataset.
///
/// For scenario cp-sin each entity carries `rank` trajectories
/// u(t) = a sin(2 pi f t / span + phase) + b, and an entry's value is the
/// sum over components of the product of its entities' trajectories.
class GroundTruth {
 public:
  struct Wave {
    double amplitude, frequency, phase, offset;
  };

  GroundTruth() = default;
  GroundTruth(std::vector<std::size_t> dims, std::size_t rank, double time_span,
              std::vector<std::vector<std::vector<Wave>>> waves);

  double trajectory(std::size_t mode, std::size_t entity, std::size_t component, double t) const;
  double operator()(const std::vector<std::size_t>& entry, double t) const;

  std::size_t rank() const { return rank_; }
  const std::vector<std::size_t>& dims() const { return dims_; }
  double time_span() const { return time_span_; }

  nlohmann::json to_json() const;
  static GroundTruth from_json(const nlohmann::json& j);

 private:
  std::vector<std::size_t> dims_;
  std::size_t rank_ = 0;
  double time_span_ = 1.0;
  // waves_[mode][entity][component]
  std::vector<std::vector<std::vector<Wave>>> waves_;
};

struct SynthOptions {
  std::vector<std::size_t> dims;
  std::size_t num_obs = 0;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  Scenario scenario = Scenario::CpSin;
  std::size_t rank = 2;
  double time_span = 1.0;
};

struct SynthResult {
  Dataset data;
  GroundTruth truth;
};

/// Entries and timestamps uniform; values from the ground truth plus noise.
SynthResult synth_dataset(const SynthOptions& opts);

}  // namespace nonfat
