#include <fstream>
#include <ostream>

#include <CLI11.hpp>

#include "nonfat/commands.hpp"
#include "nonfat/csv.hpp"

namespace nonfat {

namespace {

// Writes to `path` when given, else to `fallback`.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw DataError("cannot write " + path);
      stream_ = &file_;
    }
  }
  std::ostream& get() { return *stream_; }

 private:
  std::ofstream file_;
  std::ostream* stream_;
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continuous-time tensor decomposition with factor trajectories"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  bool verbose = false;
  auto* train = app.add_subcommand("train", "Train a model from a run-config file");
  train->add_option("--config", config_path, "JSON run-config file")->required();
  train->add_option("--set", overrides, "Override a config key (key=value)");
  train->add_flag("--verbose", verbose, "Print per-epoch metrics");

  std::string checkpoint, data, out_path;
  std::uint64_t seed = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a data CSV");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--data", data)->required();
  eval->add_option("--out", out_path, "Metrics CSV");
  auto* eval_seed = eval->add_option("--seed", seed, "Prediction seed (default: from checkpoint config)");

  auto* pred = app.add_subcommand("predict", "Predict entry values at query times");
  pred->add_option("--checkpoint", checkpoint)->required();
  pred->add_option("--queries", data, "CSV with i1,...,iK,time")->required();
  pred->add_option("--out", out_path, "Output CSV (default: stdout)");
  auto* pred_seed = pred->add_option("--seed", seed, "Prediction seed (default: from checkpoint config)");

  std::size_t mode = 0;
  std::vector<std::size_t> entities;
  std::vector<double> grid;
  std::size_t samples = 100;
  auto* traj = app.add_subcommand("trajectories", "Export learned factor trajectories");
  traj->add_option("--checkpoint", checkpoint)->required();
  traj->add_option("--mode", mode)->required();
  traj->add_option("--entities", entities, "Entity ids")->required()->delimiter(',');
  traj->add_option("--grid", grid, "start,stop,points in raw time units (default: training range, 100 points)")
      ->delimiter(',')
      ->expected(3);
  traj->add_option("--samples", samples, "Monte-Carlo samples")->check(CLI::PositiveNumber);
  traj->add_option("--seed", seed);
  traj->add_option("--out", out_path, "Output CSV (default: stdout)");

  int order = 10;
  auto* quad = app.add_subcommand("quadrature", "Print Gauss-Laguerre nodes and weights");
  quad->add_option("--order", order)->required();
  quad->add_option("--out", out_path, "Output CSV (default: stdout)");

  SimulateOptions sim;
  std::string scenario = "cp-sin";
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic data set");
  simulate->add_option("--dims", sim.synth.dims, "Mode dimensions")->required()->delimiter(',');
  simulate->add_option("--num-obs", sim.synth.num_obs, "Number of observations")->required();
  simulate->add_option("--noise", sim.synth.noise_std, "Gaussian noise std")->default_val(0.1);
  simulate->add_option("--seed", sim.synth.seed)->default_val(0);
  simulate->add_option("--rank", sim.synth.rank, "Components of the generating function")->default_val(2);
  simulate->add_option("--scenario", scenario, "Generating function (cp-sin)")->default_val("cp-sin");
  simulate->add_option("--out", sim.out, "Data CSV path")->required();

  double eps = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "Check ELBO gradients on a built-in tiny model");
  gradcheck->add_option("--seed", seed);
  gradcheck->add_option("--eps", eps)->default_val(1e-4);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) {
      RunConfig config = load_run_config(config_path);
      for (const auto& o : overrides) apply_override(config, o);
      cmd_train(config, out, verbose);
    } else if (*eval) {
      cmd_eval(checkpoint, data, out_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(out_path), out,
               *eval_seed ? std::optional<std::uint64_t>(seed) : std::nullopt);
    } else if (*pred) {
      Sink sink(out_path, out);
      cmd_predict(checkpoint, data, sink.get(), err, *pred_seed ? std::optional<std::uint64_t>(seed) : std::nullopt);
    } else if (*traj) {
      std::optional<TimeGrid> g;
      if (!grid.empty()) {
        if (!(grid[2] >= 1.0) || grid[2] != std::floor(grid[2])) throw ConfigError("--grid points must be a positive integer");
        g = TimeGrid{grid[0], grid[1], static_cast<std::size_t>(grid[2])};
      }
      Sink sink(out_path, out);
      cmd_trajectories(checkpoint, mode, entities, g, samples, seed, sink.get());
    } else if (*quad) {
      Sink sink(out_path, out);
      const double total = cmd_quadrature(order, sink.get());
      err << "weight_sum=" << csv::format_real(total) << '\n';
    } else if (*simulate) {
      sim.synth.scenario = scenario_from_string(scenario);
      const auto manifest = cmd_simulate(sim);
      out << "wrote " << sim.out.string() << " and " << manifest.string() << '\n';
    } else if (*gradcheck) {
      const auto r = cmd_gradcheck(seed, eps, out);
      if (r.max_rel_error > 1e-4) {
        err << "gradient check failed\n";
        return 3;
      }
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace nonfat
