#include "nonfat/commands.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "nonfat/csv.hpp"
#include "nonfat/quadrature.hpp"

namespace nonfat {

namespace {

// Re-throws `e` with the pipeline stage prefixed, keeping its category.
template <typename F>
auto stage(const std::string& name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const DataError& e) {
    throw DataError(name + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(name + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(name + ": " + e.what());
  }
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

// Keeps rows whose entity indices fit the checkpoint dims.
std::vector<Observation> in_range(const std::vector<Observation>& rows, const std::vector<std::size_t>& dims,
                                  std::size_t& skipped) {
  std::vector<Observation> out;
  skipped = 0;
  for (const auto& o : rows) {
    bool ok = o.indices.size() == dims.size();
    for (std::size_t k = 0; ok && k < dims.size(); ++k) ok = o.indices[k] < dims[k];
    if (ok) out.push_back(o);
    else ++skipped;
  }
  return out;
}

std::vector<Observation> parse_queries(const std::filesystem::path& path, std::size_t num_modes) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line) && csv::trim(line).empty()) ++line_no;
  ++line_no;
  const std::string header(csv::trim(line));
  std::string with_value = csv_header(num_modes);
  std::string without_value = with_value.substr(0, with_value.size() - std::string("value,time").size()) + "time";
  bool has_value;
  if (header == with_value) has_value = true;
  else if (header == without_value) has_value = false;
  else throw DataError(path.string() + ": line " + std::to_string(line_no) + ": expected header '" + without_value + "'");

  std::vector<Observation> out;
  const std::size_t width = num_modes + (has_value ? 2 : 1);
  while (std::getline(in, line)) {
    ++line_no;
    const auto trimmed = csv::trim(line);
    if (trimmed.empty()) continue;
    const auto fields = csv::split(trimmed);
    auto fail = [&](const std::string& why) {
      throw DataError(path.string() + ": row at line " + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != width) fail("expected " + std::to_string(width) + " fields");
    Observation o;
    for (std::size_t k = 0; k < num_modes; ++k) {
      long long v = 0;
      if (!csv::parse_int(csv::trim(fields[k]), v) || v < 0) fail("bad entity index");
      o.indices.push_back(static_cast<std::size_t>(v));
    }
    if (!csv::parse_real(csv::trim(fields.back()), o.time) || !std::isfinite(o.time)) fail("bad time");
    out.push_back(std::move(o));
  }
  if (out.empty()) throw DataError(path.string() + ": no observations");
  return out;
}

}  // namespace

TrainSummary cmd_train(const RunConfig& config, std::ostream& log, bool verbose) {
  stage("config", [&] { config.validate(); });
  const auto data = stage("load", [&] { return load_csv(config.data, config.num_modes); });
  const auto parts = stage("split", [&] { return split(data, config.train_frac, config.train.seed); });
  const auto norm = stage("normalize", [&] { return normalize(parts.first, parts.second); });

  const auto result = stage("train", [&] {
    return train(norm.train, norm.test, config.train, [&](const EpochRecord& e) {
      if (verbose) {
        log << "epoch " << e.epoch << " elbo " << e.elbo << " train_rmse " << e.train_rmse << " test_rmse "
            << e.test_rmse << " test_ll " << e.test_ll << '\n';
      }
    });
  });

  TrainSummary s;
  s.best_epoch = result.best_epoch;
  if (result.best_epoch > 0) {
    const auto& best = result.history.epochs[result.best_epoch - 1];
    s.test_rmse = best.test_rmse;
    s.test_ll = best.test_ll;
  } else {
    const auto m = metrics(predict(result.params, norm.test.observations, config.train.num_pred_samples,
                                   evaluation_seed(config.train), config.train.jitter),
                           values_of(norm.test));
    s.test_rmse = m.rmse;
    s.test_ll = m.log_lik;
  }

  stage("save", [&] {
    const std::filesystem::path dir = config.output_dir;
    std::filesystem::create_directories(dir);
    s.checkpoint = dir / "model.ckpt";
    s.history = dir / "history.csv";
    Checkpoint ckpt{config, norm.stats, data.meta, result.params, nlohmann::json::object()};
    ckpt.summary = {{"best_epoch", s.best_epoch},
                    {"test_rmse", s.test_rmse},
                    {"test_ll", s.test_ll},
                    {"train_size", norm.train.size()},
                    {"test_size", norm.test.size()}};
    save_checkpoint(s.checkpoint, ckpt);
    auto out = open_out(s.history);
    write_history_csv(out, result.history);
  });
  log << "test_rmse=" << csv::format_real(s.test_rmse) << " test_ll=" << csv::format_real(s.test_ll)
      << " best_epoch=" << s.best_epoch << '\n';
  return s;
}

EvalSummary cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                     const std::optional<std::filesystem::path>& out_csv, std::ostream& log,
                     std::optional<std::uint64_t> seed) {
  const auto ckpt = stage("checkpoint", [&] { return load_checkpoint(checkpoint); });
  const auto raw = stage("load", [&] { return load_csv(data, ckpt.meta.num_modes); });
  EvalSummary s;
  Dataset kept = raw;
  kept.observations = in_range(raw.observations, ckpt.params.shape().dims, s.skipped);
  if (s.skipped > 0) log << "skipped " << s.skipped << " rows with out-of-range entity indices\n";
  if (kept.empty()) throw DataError("eval: no rows left to evaluate");
  const auto norm = apply_norm(kept, ckpt.stats);
  s.count = norm.size();
  const auto& tc = ckpt.config.train;
  s.metrics = stage("predict", [&] {
    return metrics(predict(ckpt.params, norm.observations, tc.num_pred_samples, seed.value_or(evaluation_seed(tc)),
                           tc.jitter),
                   values_of(norm));
  });
  log << "rmse=" << csv::format_real(s.metrics.rmse) << " log_lik=" << csv::format_real(s.metrics.log_lik)
      << " count=" << s.count << " skipped=" << s.skipped << '\n';
  if (out_csv) {
    auto out = open_out(*out_csv);
    out << "rmse,log_lik,count,skipped\n"
        << csv::format_real(s.metrics.rmse) << ',' << csv::format_real(s.metrics.log_lik) << ',' << s.count << ','
        << s.skipped << '\n';
  }
  return s;
}

std::size_t cmd_predict(const std::filesystem::path& checkpoint, const std::filesystem::path& queries,
                        std::ostream& out, std::ostream& log, std::optional<std::uint64_t> seed) {
  const auto ckpt = stage("checkpoint", [&] { return load_checkpoint(checkpoint); });
  const auto rows = stage("load", [&] { return parse_queries(queries, ckpt.meta.num_modes); });
  std::size_t skipped = 0;
  auto kept = in_range(rows, ckpt.params.shape().dims, skipped);
  if (skipped > 0) log << "skipped " << skipped << " rows with out-of-range entity indices\n";
  std::vector<Observation> normalized = kept;
  for (auto& o : normalized) o.time = ckpt.stats.time_to_norm(o.time);
  const auto& tc = ckpt.config.train;
  const auto pred = stage("predict", [&] {
    return predict(ckpt.params, normalized, tc.num_pred_samples, seed.value_or(evaluation_seed(tc)), tc.jitter);
  });

  const std::string header = csv_header(ckpt.meta.num_modes);
  out << header.substr(0, header.size() - std::string("value,time").size()) << "time,mean,std\n";
  for (std::size_t i = 0; i < kept.size(); ++i) {
    for (auto j : kept[i].indices) out << j << ',';
    const auto ii = static_cast<Index>(i);
    out << csv::format_real(kept[i].time) << ',' << csv::format_real(ckpt.stats.value_from_norm(pred.mean(ii)))
        << ',' << csv::format_real(std::sqrt(pred.variance(ii)) * ckpt.stats.value_std) << '\n';
  }
  return kept.size();
}

void cmd_trajectories(const std::filesystem::path& checkpoint, std::size_t mode,
                      const std::vector<std::size_t>& entities, const std::optional<TimeGrid>& grid,
                      std::size_t num_samples, std::uint64_t seed, std::ostream& out) {
  const auto ckpt = stage("checkpoint", [&] { return load_checkpoint(checkpoint); });
  const auto& shape = ckpt.params.shape();
  if (mode >= shape.K()) throw DataError("trajectories: mode " + std::to_string(mode) + " out of range");
  for (auto j : entities) {
    if (j >= shape.dims[mode]) throw DataError("trajectories: entity " + std::to_string(j) + " out of range");
  }
  const TimeGrid g = grid.value_or(TimeGrid{ckpt.stats.time_min, ckpt.stats.time_max, 100});
  if (g.points < 1 || !std::isfinite(g.start) || !std::isfinite(g.stop)) {
    throw ConfigError("trajectories: invalid time grid");
  }
  const Vector raw = g.points == 1 ? Vector(Vector::Constant(1, g.start))
                                   : Vector(Vector::LinSpaced(static_cast<Index>(g.points), g.start, g.stop));
  Vector normalized = raw;
  for (Index i = 0; i < raw.size(); ++i) normalized(i) = ckpt.stats.time_to_norm(raw(i));

  out << "mode,entity,r,t,mean,std\n";
  for (auto j : entities) {
    for (std::size_t r = 0; r < shape.R; ++r) {
      const auto curve = stage("export", [&] {
        return export_trajectory(ckpt.params, mode, j, r, normalized, num_samples, seed, ckpt.config.train.jitter);
      });
      for (Index i = 0; i < raw.size(); ++i) {
        out << mode << ',' << j << ',' << r << ',' << csv::format_real(raw(i)) << ','
            << csv::format_real(curve.mean(i)) << ',' << csv::format_real(curve.stddev(i)) << '\n';
      }
    }
  }
}

double cmd_quadrature(int order, std::ostream& out) {
  const auto rule = gauss_laguerre(order);
  out << "node,weight\n";
  for (Index c = 0; c < rule.nodes.size(); ++c) {
    out << csv::format_real(rule.nodes(c)) << ',' << csv::format_real(rule.weights(c)) << '\n';
  }
  return rule.weights.sum();
}

std::filesystem::path cmd_simulate(const SimulateOptions& opts) {
  const auto result = synth_dataset(opts.synth);
  if (opts.out.has_parent_path()) std::filesystem::create_directories(opts.out.parent_path());
  save_csv(opts.out, result.data);
  auto manifest_path = opts.out;
  manifest_path.replace_extension(".truth.json");
  nlohmann::json manifest = {{"scenario", to_string(opts.synth.scenario)},
                             {"dims", opts.synth.dims},
                             {"num_obs", opts.synth.num_obs},
                             {"noise_std", opts.synth.noise_std},
                             {"seed", opts.synth.seed},
                             {"rank", opts.synth.rank},
                             {"time_span", opts.synth.time_span},
                             {"truth", result.truth.to_json()}};
  auto out = open_out(manifest_path);
  out << manifest.dump(2) << '\n';
  return manifest_path;
}

GradCheckResult cmd_gradcheck(std::uint64_t seed, double eps, std::ostream& out) {
  const auto tp = tiny_problem(seed);
  GradCheckOptions opts;
  opts.seed = seed;
  opts.eps = eps;
  const auto r = grad_check(tp.params, tp.batch, opts);
  out << "checked=" << r.checked << " max_rel_error=" << csv::format_real(r.max_rel_error) << " worst=" << r.worst_name
      << " analytic=" << csv::format_real(r.worst_analytic) << " numeric=" << csv::format_real(r.worst_numeric)
      << '\n';
  return r;
}

}  // namespace nonfat
