#include "nonfat/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "nonfat/common.hpp"
#include "nonfat/csv.hpp"
#include "nonfat/random.hpp"

namespace nonfat {

void to_json(nlohmann::json& j, const NormStats& s) {
  j = nlohmann::json{{"value_mean", s.value_mean},
                     {"value_std", s.value_std},
                     {"time_min", s.time_min},
                     {"time_max", s.time_max}};
}

void from_json(const nlohmann::json& j, NormStats& s) {
  j.at("value_mean").get_to(s.value_mean);
  j.at("value_std").get_to(s.value_std);
  j.at("time_min").get_to(s.time_min);
  j.at("time_max").get_to(s.time_max);
}

void validate(const Dataset& d) {
  const auto& meta = d.meta;
  if (meta.num_modes == 0 || meta.dims.size() != meta.num_modes) {
    throw DataError("tensor meta: dims must have one positive entry per mode");
  }
  for (auto dk : meta.dims) {
    if (dk == 0) throw DataError("tensor meta: mode dimension must be positive");
  }
  if (!(meta.time_min <= meta.time_max)) throw DataError("tensor meta: time_min > time_max");
  for (std::size_t n = 0; n < d.observations.size(); ++n) {
    const auto& o = d.observations[n];
    if (o.indices.size() != meta.num_modes) {
      throw DataError("observation " + std::to_string(n) + ": expected " +
                      std::to_string(meta.num_modes) + " indices");
    }
    for (std::size_t k = 0; k < meta.num_modes; ++k) {
      if (o.indices[k] >= meta.dims[k]) {
        throw DataError("observation " + std::to_string(n) + ": index " +
                        std::to_string(o.indices[k]) + " out of range for mode " +
                        std::to_string(k) + " (dim " + std::to_string(meta.dims[k]) + ")");
      }
    }
    if (!std::isfinite(o.value) || !std::isfinite(o.time)) {
      throw DataError("observation " + std::to_string(n) + ": non-finite value or time");
    }
  }
  if (d.normalized && !(d.value_std > 0.0)) throw DataError("normalized dataset with value_std <= 0");
}

TensorMeta infer_meta(const std::vector<Observation>& obs, std::size_t num_modes) {
  TensorMeta meta;
  meta.num_modes = num_modes;
  meta.dims.assign(num_modes, 0);
  if (obs.empty()) {
    std::fill(meta.dims.begin(), meta.dims.end(), 1);
    return meta;
  }
  meta.time_min = obs.front().time;
  meta.time_max = obs.front().time;
  for (const auto& o : obs) {
    for (std::size_t k = 0; k < num_modes; ++k) meta.dims[k] = std::max(meta.dims[k], o.indices[k] + 1);
    meta.time_min = std::min(meta.time_min, o.time);
    meta.time_max = std::max(meta.time_max, o.time);
  }
  return meta;
}

std::string csv_header(std::size_t num_modes) {
  std::string h;
  for (std::size_t k = 0; k < num_modes; ++k) h += "i" + std::to_string(k + 1) + ",";
  return h + "value,time";
}

Dataset parse_csv(std::istream& in, std::size_t num_modes, const std::string& source) {
  if (num_modes == 0) throw DataError(source + ": num_modes must be >= 1");
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (!have_header && std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    have_header = true;
  }
  if (!have_header) throw DataError(source + ": empty file (missing header)");

  const auto header = csv::split(csv::trim(line));
  const std::string expected_line = csv_header(num_modes);
  const auto expected = csv::split(expected_line);
  bool header_ok = header.size() == expected.size();
  for (std::size_t i = 0; header_ok && i < header.size(); ++i) {
    header_ok = csv::trim(header[i]) == expected[i];
  }
  if (!header_ok) {
    throw DataError(source + ": line " + std::to_string(line_no) + ": expected header '" + expected_line + "'");
  }

  std::vector<Observation> obs;
  while (std::getline(in, line)) {
    ++line_no;
    const auto trimmed = csv::trim(line);
    if (trimmed.empty()) continue;
    const auto fields = csv::split(trimmed);
    const auto where = source + ": row at line " + std::to_string(line_no);
    if (fields.size() != num_modes + 2) {
      throw DataError(where + ": expected " + std::to_string(num_modes + 2) + " fields, got " +
                      std::to_string(fields.size()));
    }
    Observation o;
    o.indices.resize(num_modes);
    for (std::size_t k = 0; k < num_modes; ++k) {
      long long idx = 0;
      if (!csv::parse_int(fields[k], idx)) throw DataError(where + ": malformed index in column " + std::to_string(k + 1));
      if (idx < 0) throw DataError(where + ": negative index in column " + std::to_string(k + 1));
      o.indices[k] = static_cast<std::size_t>(idx);
    }
    if (!csv::parse_real(fields[num_modes], o.value)) throw DataError(where + ": malformed value");
    if (!csv::parse_real(fields[num_modes + 1], o.time)) throw DataError(where + ": malformed time");
    if (!std::isfinite(o.value)) throw DataError(where + ": non-finite value");
    if (!std::isfinite(o.time)) throw DataError(where + ": non-finite time");
    obs.push_back(std::move(o));
  }
  if (obs.empty()) throw DataError(source + ": no observations");

  Dataset d;
  d.meta = infer_meta(obs, num_modes);
  d.observations = std::move(obs);
  return d;
}

Dataset load_csv(const std::filesystem::path& path, std::size_t num_modes) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open file");
  return parse_csv(in, num_modes, path.string());
}

void write_csv(std::ostream& out, const Dataset& d) {
  out << csv_header(d.meta.num_modes) << '\n';
  for (const auto& o : d.observations) {
    for (auto idx : o.indices) out << idx << ',';
    out << csv::format_real(o.value) << ',' << csv::format_real(o.time) << '\n';
  }
}

void save_csv(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  write_csv(out, d);
  if (!out) throw DataError(path.string() + ": write failed");
}

std::pair<Dataset, Dataset> split(const Dataset& d, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("split: train_frac must be in (0, 1)");
  if (d.empty()) throw DataError("split: empty dataset");
  const auto n = d.size();
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_frac));
  if (n_train == 0) throw DataError("split: training split is empty");

  Rng rng(seed);
  const auto perm = rng.permutation(n);
  Dataset train, test;
  train.meta = test.meta = d.meta;
  train.observations.reserve(n_train);
  test.observations.reserve(n - n_train);
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? train : test).observations.push_back(d.observations[perm[i]]);
  }
  return {std::move(train), std::move(test)};
}

namespace {

Dataset map_dataset(const Dataset& src, const NormStats& stats, bool forward) {
  Dataset out = src;
  for (auto& o : out.observations) {
    o.value = forward ? stats.value_to_norm(o.value) : stats.value_from_norm(o.value);
    o.time = forward ? stats.time_to_norm(o.time) : stats.time_from_norm(o.time);
  }
  auto& meta = out.meta;
  meta.time_min = forward ? stats.time_to_norm(meta.time_min) : stats.time_from_norm(meta.time_min);
  meta.time_max = forward ? stats.time_to_norm(meta.time_max) : stats.time_from_norm(meta.time_max);
  out.normalized = forward;
  out.value_mean = forward ? stats.value_mean : 0.0;
  out.value_std = forward ? stats.value_std : 0.0;
  return out;
}

}  // namespace

NormalizedSplit normalize(const Dataset& train, const Dataset& test) {
  if (train.empty()) throw DataError("normalize: empty training set");
  const auto n = static_cast<double>(train.size());
  double mean = 0.0;
  for (const auto& o : train.observations) mean += o.value;
  mean /= n;
  double var = 0.0;
  for (const auto& o : train.observations) var += (o.value - mean) * (o.value - mean);
  var /= n;
  const double std = std::sqrt(var);
  if (!(std > 1e-12 * std::max(1.0, std::abs(mean)))) throw DataError("normalize: zero variance in training values");

  NormStats stats;
  stats.value_mean = mean;
  stats.value_std = std;
  stats.time_min = train.observations.front().time;
  stats.time_max = stats.time_min;
  for (const auto& o : train.observations) {
    stats.time_min = std::min(stats.time_min, o.time);
    stats.time_max = std::max(stats.time_max, o.time);
  }
  return {map_dataset(train, stats, true), map_dataset(test, stats, true), stats};
}

Dataset apply_norm(const Dataset& raw, const NormStats& stats) { return map_dataset(raw, stats, true); }

Dataset invert_norm(const Dataset& normalized, const NormStats& stats) {
  return map_dataset(normalized, stats, false);
}

std::vector<std::vector<std::size_t>> minibatches(std::size_t num_items, std::size_t batch_size,
                                                  std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("minibatches: batch_size must be >= 1");
  Rng rng(hash_combine(seed, epoch));
  const auto perm = rng.permutation(num_items);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < num_items; start += batch_size) {
    const auto stop = std::min(num_items, start + batch_size);
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return batches;
}

Scenario scenario_from_string(const std::string& name) {
  if (name == "cp-sin") return Scenario::CpSin;
  throw ConfigError("unknown scenario '" + name + "' (expected cp-sin)");
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::CpSin:
      return "cp-sin";
  }
  return "unknown";
}

GroundTruth::GroundTruth(std::vector<std::size_t> dims, std::size_t rank, double time_span,
                         std::vector<std::vector<std::vector<Wave>>> waves)
    : dims_(std::move(dims)), rank_(rank), time_span_(time_span), waves_(std::move(waves)) {}

double GroundTruth::trajectory(std::size_t mode, std::size_t entity, std::size_t component, double t) const {
  const auto& w = waves_.at(mode).at(entity).at(component);
  return w.amplitude * std::sin(2.0 * std::numbers::pi * w.frequency * t / time_span_ + w.phase) + w.offset;
}

double GroundTruth::operator()(const std::vector<std::size_t>& entry, double t) const {
  double total = 0.0;
  for (std::size_t r = 0; r < rank_; ++r) {
    double prod = 1.0;
    for (std::size_t k = 0; k < dims_.size(); ++k) prod *= trajectory(k, entry[k], r, t);
    total += prod;
  }
  return total;
}

nlohmann::json GroundTruth::to_json() const {
  nlohmann::json waves = nlohmann::json::array();
  for (const auto& mode : waves_) {
    nlohmann::json jm = nlohmann::json::array();
    for (const auto& entity : mode) {
      nlohmann::json je = nlohmann::json::array();
      for (const auto& w : entity) {
        je.push_back({{"amplitude", w.amplitude},
                      {"frequency", w.frequency},
                      {"phase", w.phase},
                      {"offset", w.offset}});
      }
      jm.push_back(std::move(je));
    }
    waves.push_back(std::move(jm));
  }
  return {{"dims", dims_}, {"rank", rank_}, {"time_span", time_span_}, {"waves", waves}};
}

GroundTruth GroundTruth::from_json(const nlohmann::json& j) {
  std::vector<std::vector<std::vector<Wave>>> waves;
  for (const auto& jm : j.at("waves")) {
    auto& mode = waves.emplace_back();
    for (const auto& je : jm) {
      auto& entity = mode.emplace_back();
      for (const auto& jw : je) {
        entity.push_back({jw.at("amplitude").get<double>(), jw.at("frequency").get<double>(),
                          jw.at("phase").get<double>(), jw.at("offset").get<double>()});
      }
    }
  }
  return GroundTruth(j.at("dims").get<std::vector<std::size_t>>(), j.at("rank").get<std::size_t>(),
                     j.at("time_span").get<double>(), std::move(waves));
}

SynthResult synth_dataset(const SynthOptions& opts) {
  if (opts.dims.empty()) throw ConfigError("synth: dims must be non-empty");
  for (auto dk : opts.dims) {
    if (dk == 0) throw ConfigError("synth: every dim must be >= 1");
  }
  if (opts.num_obs == 0) throw ConfigError("synth: num_obs must be >= 1");
  if (!(opts.noise_std >= 0.0)) throw ConfigError("synth: noise_std must be >= 0");
  if (opts.rank == 0) throw ConfigError("synth: rank must be >= 1");
  if (!(opts.time_span > 0.0)) throw ConfigError("synth: time_span must be > 0");

  Rng rng(opts.seed);
  // Slow waves (under half a cycle per span) keep the targets learnable with
  // the low-frequency quadrature nodes that carry most of the weight.
  std::vector<std::vector<std::vector<GroundTruth::Wave>>> waves(opts.dims.size());
  for (std::size_t k = 0; k < opts.dims.size(); ++k) {
    waves[k].resize(opts.dims[k]);
    for (auto& entity : waves[k]) {
      for (std::size_t r = 0; r < opts.rank; ++r) {
        GroundTruth::Wave w{};
        w.amplitude = rng.uniform(0.5, 1.0);
        w.frequency = rng.uniform(0.1, 0.35);
        w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        w.offset = rng.uniform(-0.3, 0.3);
        entity.push_back(w);
      }
    }
  }
  GroundTruth truth(opts.dims, opts.rank, opts.time_span, std::move(waves));

  Dataset d;
  d.observations.reserve(opts.num_obs);
  for (std::size_t n = 0; n < opts.num_obs; ++n) {
    Observation o;
    o.indices.resize(opts.dims.size());
    for (std::size_t k = 0; k < opts.dims.size(); ++k) o.indices[k] = static_cast<std::size_t>(rng.below(opts.dims[k]));
    o.time = rng.uniform(0.0, opts.time_span);
    const double noise = rng.normal();
    o.value = truth(o.indices, o.time) + opts.noise_std * noise;
    d.observations.push_back(std::move(o));
  }
  d.meta = infer_meta(d.observations, opts.dims.size());
  d.meta.dims = opts.dims;
  return {std::move(d), std::move(truth)};
}

}  // namespace nonfat
