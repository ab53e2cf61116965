#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "nonfat/data.hpp"
#include "nonfat/model.hpp"
#include "nonfat/train_config.hpp"

namespace nonfat {

/// Contents of a run-config file: the training hyperparameters plus the
/// pipeline settings around them. Stored as one flat JSON object.
struct RunConfig {
  TrainConfig train;
  std::string data;  // CSV path; relative paths resolve against the config file
  std::size_t num_modes = 0;
  double train_frac = 0.8;
  std::string output_dir = ".";

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Rejects unknown keys with a ConfigError naming the key.
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);
/// Applies one `key=value` override; the value is read as JSON when it parses
/// and as a string otherwise.
void apply_override(RunConfig& c, const std::string& assignment);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  NormStats stats;
  TensorMeta meta;
  NonfatParams params;
  // Free-form run summary (best epoch, metrics).
  nlohmann::json summary = nlohmann::json::object();
};

std::string serialize(const Checkpoint& c);
Checkpoint deserialize(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nonfat
