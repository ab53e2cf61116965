#include "nonfat/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <ostream>

#include "nonfat/csv.hpp"
#include "nonfat/random.hpp"

namespace nonfat {

void adam_step(NonfatParams& params, const std::vector<Matrix>& grads, AdamState& state, double lr) {
  auto& tensors = params.tensors();
  if (grads.size() != tensors.size()) throw ConfigError("adam_step: gradient count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (grads[i].rows() != tensors[i].value.rows() || grads[i].cols() != tensors[i].value.cols()) {
      throw ConfigError("adam_step: gradient shape mismatch for " + tensors[i].name);
    }
    if (!grads[i].allFinite()) throw NumericalError("adam_step: non-finite gradient for " + tensors[i].name);
  }
  if (state.m.size() != tensors.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& t : tensors) {
      state.m.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
      state.v.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i].cwiseAbs2();
    tensors[i].value.array() -=
        lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + state.eps);
  }
}

Metrics metrics(const Prediction& pred, const Vector& truth) {
  const auto n = truth.size();
  if (n == 0) throw DataError("metrics: empty input");
  if (pred.mean.size() != n || pred.samples.rows() != n) throw ConfigError("metrics: length mismatch");
  Metrics out;
  out.rmse = std::sqrt((pred.mean - truth).squaredNorm() / static_cast<double>(n));

  const double var = pred.noise_var;
  const double norm = -0.5 * std::log(2.0 * std::numbers::pi * var);
  const auto S = pred.samples.cols();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Eigen::ArrayXd logs = norm - 0.5 * (pred.samples.row(i).transpose().array() - truth(i)).square() / var;
    const double top = logs.maxCoeff();
    total += top + std::log((logs - top).exp().sum() / static_cast<double>(S));
  }
  out.log_lik = total / static_cast<double>(n);
  return out;
}

Vector values_of(const Dataset& d) {
  Vector y(static_cast<Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) y(static_cast<Index>(i)) = d.observations[i].value;
  return y;
}

GradCheckResult grad_check(const NonfatParams& params, std::span<const Observation> batch,
                           const GradCheckOptions& opts) {
  Rng rng(opts.seed);
  const NoiseBundle noise = draw_noise(params.shape(), batch.size(), rng);
  const auto n = batch.size();
  const auto analytic = elbo_gradient(params, batch, n, std::span<const NoiseBundle>(&noise, 1), opts.jitter);

  struct Slot {
    std::size_t tensor;
    Index row, col;
  };
  std::vector<Slot> slots;
  const auto& tensors = params.tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    const auto& m = tensors[t].value;
    for (Index c = 0; c < m.cols(); ++c) {
      for (Index r = 0; r < m.rows(); ++r) {
        if (tensors[t].lower && c > r) continue;
        slots.push_back({t, r, c});
      }
    }
  }
  if (slots.size() > opts.max_scalars) {
    const auto order = rng.permutation(slots.size());
    std::vector<Slot> picked;
    for (std::size_t i = 0; i < opts.max_scalars; ++i) picked.push_back(slots[order[i]]);
    slots = std::move(picked);
  }

  GradCheckResult out;
  NonfatParams work = params;
  for (const auto& s : slots) {
    double& x = work[s.tensor](s.row, s.col);
    const double saved = x;
    x = saved + opts.eps;
    const double up = elbo_estimate(work, batch, n, noise, opts.jitter).value;
    x = saved - opts.eps;
    const double down = elbo_estimate(work, batch, n, noise, opts.jitter).value;
    x = saved;
    const double numeric = (up - down) / (2.0 * opts.eps);
    const double a = analytic.grads[s.tensor](s.row, s.col);
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opts.floor});
    if (rel > out.max_rel_error || out.checked == 0) {
      out.max_rel_error = rel;
      out.worst_name = tensors[s.tensor].name + "[" + std::to_string(s.row) + "," + std::to_string(s.col) + "]";
      out.worst_analytic = a;
      out.worst_numeric = numeric;
    }
    ++out.checked;
  }
  return out;
}

TinyProblem tiny_problem(std::uint64_t seed) {
  TrainConfig config;
  config.R = 2;
  config.C = 3;
  config.s = 2;
  config.a_k = 2;
  config.a_g = 3;
  config.batch_size = 4;
  TensorMeta meta;
  meta.num_modes = 2;
  meta.dims = {3, 3};
  meta.time_max = 1.0;

  TinyProblem out{init(meta, config, seed), {}};
  Rng rng(hash_combine(seed, 1));
  auto& p = out.params;
  for (auto& t : p.tensors()) {
    const double sd = t.lower ? 0.2 : (t.value.size() == 1 ? 0.2 : 0.6);
    for (Index i = 0; i < t.value.size(); ++i) t.value.data()[i] += sd * rng.normal();
  }
  // Second-level inputs live on the scale of the trajectory values.
  p[p.pseudo_entry()] *= 0.3;
  p[p.log_noise_var()](0, 0) = std::log(0.5);
  for (int i = 0; i < 4; ++i) {
    out.batch.push_back({{rng.below(3), rng.below(3)}, rng.normal(), rng.uniform()});
  }
  return out;
}

void write_history_csv(std::ostream& out, const TrainHistory& h) {
  out << "epoch,elbo,train_rmse,test_rmse,test_ll,seconds";
  if (h.has_validation) out << ",validation_rmse";
  out << '\n';
  for (const auto& e : h.epochs) {
    out << e.epoch << ',' << csv::format_real(e.elbo) << ',' << csv::format_real(e.train_rmse) << ','
        << csv::format_real(e.test_rmse) << ',' << csv::format_real(e.test_ll) << ','
        << csv::format_real(e.seconds);
    if (h.has_validation) out << ',' << csv::format_real(e.validation_rmse);
    out << '\n';
  }
}

namespace {

constexpr std::uint64_t kBatchTag = 0x6261746368ULL;
constexpr std::uint64_t kNoiseTag = 0x6e6f697365ULL;
constexpr std::uint64_t kEvalTag = 0x6576616cULL;
constexpr std::uint64_t kElboTag = 0x656c626fULL;
constexpr std::size_t kElboDraws = 16;
constexpr std::uint64_t kValidationTag = 0x76616cULL;

}  // namespace

std::uint64_t evaluation_seed(const TrainConfig& config) { return hash_combine(config.seed, kEvalTag); }

TrainResult train(const Dataset& train_set, const Dataset& test_set, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  if (!train_set.normalized || (!test_set.empty() && !test_set.normalized)) {
    throw DataError("train: datasets must be normalized");
  }
  if (config.selection == Selection::TestRmse && test_set.empty()) {
    throw DataError("train: test-RMSE selection needs a nonempty test set");
  }

  Dataset fit = train_set;
  Dataset validation;
  const bool use_validation = config.selection == Selection::Validation;
  if (use_validation) {
    auto [a, b] = split(train_set, 1.0 - config.validation_frac, hash_combine(config.seed, kValidationTag));
    if (a.empty() || b.empty()) throw DataError("train: training set too small for a validation split");
    fit = std::move(a);
    validation = std::move(b);
  }

  TrainResult out;
  out.history.has_validation = use_validation;
  NonfatParams params = init(train_set.meta, config, config.seed);
  out.params = params;

  const auto n = fit.size();
  const auto& obs = fit.observations;
  const Vector fit_y = values_of(fit);
  const Vector test_y = values_of(test_set);
  const Vector validation_y = values_of(validation);
  const std::uint64_t eval_seed = evaluation_seed(config);

  // The recorded ELBO is a full-set estimate averaged over noise draws that
  // stay fixed for the run, so successive epochs differ only through the
  // parameters. A single draw is too noisy to show the trend.
  Rng elbo_rng(hash_combine(eval_seed, kElboTag));
  std::vector<NoiseBundle> elbo_noise;
  for (std::size_t i = 0; i < kElboDraws; ++i) elbo_noise.push_back(draw_noise(params.shape(), n, elbo_rng));

  AdamState adam;
  double best = std::numeric_limits<double>::infinity();
  std::vector<Observation> batch;
  std::vector<NoiseBundle> noise;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto batches = minibatches(n, config.batch_size, hash_combine(config.seed, kBatchTag), epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      batch.clear();
      for (auto i : batches[b]) batch.push_back(obs[i]);
      Rng rng(hash_combine(hash_combine(hash_combine(config.seed, kNoiseTag), epoch), b));
      noise.clear();
      for (std::size_t s = 0; s < config.elbo_samples; ++s) noise.push_back(draw_noise(params.shape(), batch.size(), rng));
      ElboGradient g;
      try {
        g = elbo_gradient(params, batch, n, noise, config.jitter);
      } catch (const NumericalError& e) {
        throw NumericalError("train: diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                             ": " + e.what());
      }
      for (auto& m : g.grads) m = -m;
      adam_step(params, g.grads, adam, config.learning_rate);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    try {
      for (const auto& nb : elbo_noise) rec.elbo += elbo_estimate(params, obs, n, nb, config.jitter).value;
      rec.elbo /= static_cast<double>(kElboDraws);
    } catch (const NumericalError& e) {
      throw NumericalError("train: diverged after epoch " + std::to_string(epoch) + ": " + e.what());
    }
    rec.train_rmse = metrics(predict(params, fit.observations, config.num_pred_samples, eval_seed, config.jitter), fit_y).rmse;
    if (!test_set.empty()) {
      const auto m = metrics(predict(params, test_set.observations, config.num_pred_samples, eval_seed, config.jitter), test_y);
      rec.test_rmse = m.rmse;
      rec.test_ll = m.log_lik;
    } else {
      rec.test_rmse = rec.test_ll = std::numeric_limits<double>::quiet_NaN();
    }
    double score = rec.test_rmse;
    if (use_validation) {
      rec.validation_rmse =
          metrics(predict(params, validation.observations, config.num_pred_samples, eval_seed, config.jitter),
                  validation_y)
              .rmse;
      score = rec.validation_rmse;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (score < best) {
      best = score;
      out.params = params;
      out.best_epoch = epoch;
    }
    out.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return out;
}

std::vector<double> moving_average(std::span<const double> xs, std::size_t window) {
  if (window < 1) throw ConfigError("moving_average: window must be >= 1");
  std::vector<double> out;
  if (xs.size() < window) return out;
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    acc += xs[i];
    if (i >= window) acc -= xs[i - window];
    if (i + 1 >= window) out.push_back(acc / static_cast<double>(window));
  }
  return out;
}

}  // namespace nonfat
