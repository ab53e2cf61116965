#pragma once

// Library side of the command-line tool. Each command reads and writes files
// in raw units and reports through the given streams.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nonfat/checkpoint.hpp"
#include "nonfat/optim.hpp"

namespace nonfat {

struct TrainSummary {
  std::filesystem::path checkpoint;
  std::filesystem::path history;
  std::size_t best_epoch = 0;
  double test_rmse = 0.0;
  double test_ll = 0.0;
};

/// load -> split -> normalize -> train; writes model.ckpt and history.csv into
/// the output directory. Errors carry the failing stage in their message.
TrainSummary cmd_train(const RunConfig& config, std::ostream& log, bool verbose = false);

struct EvalSummary {
  Metrics metrics;
  std::size_t count = 0;
  std::size_t skipped = 0;  // rows with out-of-range entity indices
};

EvalSummary cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                     const std::optional<std::filesystem::path>& out_csv, std::ostream& log,
                     std::optional<std::uint64_t> seed = std::nullopt);

/// Query rows are `i1,...,iK,time` (a `value` column before `time` is
/// accepted and ignored). Writes `i1,...,iK,time,mean,std` in raw units.
std::size_t cmd_predict(const std::filesystem::path& checkpoint, const std::filesystem::path& queries,
                        std::ostream& out, std::ostream& log, std::optional<std::uint64_t> seed = std::nullopt);

struct TimeGrid {
  double start = 0.0;
  double stop = 0.0;
  std::size_t points = 100;
};

/// Writes `mode,entity,r,t,mean,std` for every entity and component over a
/// grid given in raw time units.
void cmd_trajectories(const std::filesystem::path& checkpoint, std::size_t mode,
                      const std::vector<std::size_t>& entities, const std::optional<TimeGrid>& grid,
                      std::size_t num_samples, std::uint64_t seed, std::ostream& out);

/// Writes `node,weight` rows; returns the weight sum.
double cmd_quadrature(int order, std::ostream& out);

struct SimulateOptions {
  SynthOptions synth;
  std::filesystem::path out;
};

/// Writes the data CSV and a `<stem>.truth.json` manifest next to it; returns
/// the manifest path.
std::filesystem::path cmd_simulate(const SimulateOptions& opts);

/// Gradient check on the built-in tiny model.
GradCheckResult cmd_gradcheck(std::uint64_t seed, double eps, std::ostream& out);

/// Full command-line entry point. Returns the process exit code:
/// 0 success, 1 usage or configuration error, 2 data error, 3 numerical failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nonfat
