#include "nonfat/model.hpp"

#include <bit>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "nonfat/gaussians.hpp"

namespace nonfat {

namespace {

using ad::Var;

std::string idx(std::size_t i) { return std::to_string(i); }

}  // namespace

ModelShape ModelShape::from(const TensorMeta& meta, const TrainConfig& config) {
  ModelShape s;
  s.dims = meta.dims;
  s.R = config.R;
  s.C = config.C;
  s.s = config.s;
  s.a_k = config.a_k;
  s.a_g = config.a_g;
  s.per_r_kernels = config.per_r_kernels;
  s.validate();
  return s;
}

void ModelShape::validate() const {
  if (dims.empty()) throw ConfigError("model: at least one mode required");
  for (auto d : dims) {
    if (d < 1) throw ConfigError("model: mode dimensions must be >= 1");
  }
  if (R < 1 || C < 1 || s < 1 || a_k < 1 || a_g < 1) throw ConfigError("model: R, C, s, a_k, a_g must be >= 1");
  if (C > static_cast<std::size_t>(kMaxQuadratureOrder)) throw ConfigError("model: quadrature order too large");
}

void to_json(nlohmann::json& j, const ModelShape& s) {
  j = nlohmann::json{{"dims", s.dims}, {"R", s.R},     {"C", s.C},
                     {"s", s.s},       {"a_k", s.a_k}, {"a_g", s.a_g},
                     {"per_r_kernels", s.per_r_kernels}};
}

void from_json(const nlohmann::json& j, ModelShape& s) {
  j.at("dims").get_to(s.dims);
  j.at("R").get_to(s.R);
  j.at("C").get_to(s.C);
  j.at("s").get_to(s.s);
  j.at("a_k").get_to(s.a_k);
  j.at("a_g").get_to(s.a_g);
  j.at("per_r_kernels").get_to(s.per_r_kernels);
  s.validate();
}

Matrix lower_from_raw(const Matrix& raw) {
  Matrix out = raw.triangularView<Eigen::StrictlyLower>();
  out.diagonal() = raw.diagonal().array().exp();
  return out;
}

Matrix raw_from_lower(const Matrix& lower) {
  if ((lower.diagonal().array() <= 0.0).any()) throw NumericalError("raw_from_lower: non-positive diagonal");
  Matrix out = lower.triangularView<Eigen::StrictlyLower>();
  out.diagonal() = lower.diagonal().array().log();
  return out;
}

NonfatParams::NonfatParams(ModelShape shape) : shape_(std::move(shape)) {
  shape_.validate();
  rule_ = gauss_laguerre(static_cast<int>(shape_.C));
  const auto K = shape_.K();
  const auto R = shape_.R;
  const auto C = static_cast<Index>(shape_.C);
  const auto s = static_cast<Index>(shape_.s);
  const auto a = static_cast<Index>(shape_.a_k);
  for (std::size_t k = 0; k < K; ++k) {
    embedding_.push_back(add("embedding/" + idx(k), static_cast<Index>(shape_.dims[k]), s));
    pseudo_freq_.push_back(add("pseudo_freq/" + idx(k), a, s));
    for (std::size_t q = 0; q < shape_.kernels_per_mode(); ++q) {
      const auto suffix = shape_.per_r_kernels ? idx(k) + "/" + idx(q) : idx(k);
      log_ls_embed_.push_back(add("log_ls_embed/" + suffix, 1, 1));
      log_ls_freq_.push_back(add("log_ls_freq/" + suffix, 1, 1));
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t r = 0; r < R; ++r) {
      const auto suffix = idx(k) + "/" + idx(r);
      mean_.push_back(add("A/" + suffix, a, C));
      row_factor_.push_back(add("L/" + suffix, a, a, true));
      col_factor_.push_back(add("R/" + suffix, C, C, true));
    }
  }
  const auto g = static_cast<Index>(shape_.a_g);
  pseudo_entry_ = add("pseudo_entry", g, static_cast<Index>(K * R));
  h_mean_ = add("h_mean", g, 1);
  h_factor_ = add("h_chol", g, g, true);
  log_ls_entry_ = add("log_ls_entry", 1, 1);
  log_noise_var_ = add("log_noise_var", 1, 1);
}

std::size_t NonfatParams::add(std::string name, Index rows, Index cols, bool lower) {
  tensors_.push_back({std::move(name), Matrix::Zero(rows, cols), lower});
  return tensors_.size() - 1;
}

std::size_t NonfatParams::find(const std::string& name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return i;
  }
  throw ConfigError("no parameter named '" + name + "'");
}

std::size_t NonfatParams::log_ls_embed(std::size_t k, std::size_t r) const {
  return log_ls_embed_[k * shape_.kernels_per_mode() + (shape_.per_r_kernels ? r : 0)];
}

std::size_t NonfatParams::log_ls_freq(std::size_t k, std::size_t r) const {
  return log_ls_freq_[k * shape_.kernels_per_mode() + (shape_.per_r_kernels ? r : 0)];
}

double NonfatParams::noise_var() const { return std::exp(tensors_[log_noise_var_].value(0, 0)); }

std::size_t NonfatParams::num_learnable() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) {
    const auto size = static_cast<std::size_t>(t.value.size());
    n += t.lower ? static_cast<std::size_t>(t.value.rows() * (t.value.rows() + 1) / 2) : size;
  }
  return n;
}

bool NonfatParams::all_finite() const {
  for (const auto& t : tensors_) {
    if (!t.value.allFinite()) return false;
  }
  return true;
}

std::string NonfatParams::norms_report() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (i) out << ' ';
    out << tensors_[i].name << '=' << tensors_[i].value.norm();
  }
  return out.str();
}

NonfatParams init(const TensorMeta& meta, const TrainConfig& config, std::uint64_t seed) {
  config.validate();
  NonfatParams p(ModelShape::from(meta, config));
  const auto& shape = p.shape();
  Rng rng(seed);
  auto fill_normal = [&rng](Matrix& m, double sd) {
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
  };
  for (std::size_t k = 0; k < shape.K(); ++k) fill_normal(p[p.embedding(k)], 0.1);
  for (std::size_t k = 0; k < shape.K(); ++k) {
    const Matrix& e = p[p.embedding(k)];
    Matrix& z = p[p.pseudo_freq(k)];
    const auto d = shape.dims[k];
    std::vector<std::size_t> rows;
    if (shape.a_k <= d) {
      rows = rng.permutation(d);
      rows.resize(shape.a_k);
    } else {
      for (std::size_t i = 0; i < shape.a_k; ++i) rows.push_back(rng.below(d));
    }
    for (std::size_t i = 0; i < shape.a_k; ++i) {
      for (Index c = 0; c < z.cols(); ++c) {
        z(static_cast<Index>(i), c) = e(static_cast<Index>(rows[i]), c) + 0.01 * rng.normal();
      }
    }
  }
  fill_normal(p[p.pseudo_entry()], 0.1);

  const double log_tenth = std::log(0.1);
  for (auto& t : p.tensors()) {
    if (t.lower) t.value.diagonal().setConstant(log_tenth);
  }
  p[p.log_noise_var()](0, 0) = log_tenth;
  return p;
}

NoiseBundle NoiseBundle::slice(std::span<const std::size_t> which) const {
  NoiseBundle out;
  out.pseudo = pseudo;
  out.entry = entry;
  const auto n = static_cast<Index>(which.size());
  for (const auto& m : rows) {
    Matrix part(n, m.cols());
    for (Index i = 0; i < n; ++i) part.row(i) = m.row(static_cast<Index>(which[static_cast<std::size_t>(i)]));
    out.rows.push_back(std::move(part));
  }
  out.scalar.resize(n);
  for (Index i = 0; i < n; ++i) out.scalar(i) = scalar(static_cast<Index>(which[static_cast<std::size_t>(i)]));
  return out;
}

NoiseBundle draw_noise(const ModelShape& shape, std::size_t batch_size, Rng& rng) {
  NoiseBundle n = zero_noise(shape, batch_size);
  auto fill = [&rng](auto& m) {
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  };
  for (auto& m : n.pseudo) fill(m);
  fill(n.entry);
  for (auto& m : n.rows) fill(m);
  fill(n.scalar);
  return n;
}

NoiseBundle zero_noise(const ModelShape& shape, std::size_t batch_size) {
  NoiseBundle n;
  const auto a = static_cast<Index>(shape.a_k);
  const auto C = static_cast<Index>(shape.C);
  const auto B = static_cast<Index>(batch_size);
  for (std::size_t i = 0; i < shape.K() * shape.R; ++i) {
    n.pseudo.push_back(Matrix::Zero(a, C));
    n.rows.push_back(Matrix::Zero(B, C));
  }
  n.entry = Vector::Zero(static_cast<Index>(shape.a_g));
  n.scalar = Vector::Zero(B);
  return n;
}

namespace {

// Sampling path on a tape. Parameters enter as variables when gradients are
// wanted and as constants otherwise; derived quantities shared between
// batch elements (Cholesky factors, factor maps) are built once.
class Graph {
 public:
  Graph(ad::Tape& tape, const NonfatParams& p, bool differentiable, double jitter)
      : tape_(tape), p_(p), jitter_(jitter) {
    for (const auto& t : p.tensors()) vars_.push_back(differentiable ? tape.variable(t.value) : tape.constant(t.value));
    omega_ = tape.constant(Matrix(p.rule().nodes));
  }

  Var var(std::size_t i) const { return vars_[i]; }

  Var factor(std::size_t i) {
    auto it = factors_.find(i);
    if (it != factors_.end()) return it->second;
    return factors_[i] = ad::lower_factor(vars_[i]);
  }

  // Prior row factor chol(K(Z_k, Z_k)) of the kernel used by component r.
  Var pseudo_chol(std::size_t k, std::size_t r) {
    const auto key = p_.log_ls_embed(k, r);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const Var z = var(p_.pseudo_freq(k));
    return cache_[key] = ad::cholesky(ad::se_kernel(z, z, var(key)), jitter_);
  }

  // Prior column factor chol(K(w, w)) over the quadrature nodes.
  Var freq_chol(std::size_t k, std::size_t r) {
    const auto key = p_.log_ls_freq(k, r);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    return cache_[key] = ad::cholesky(ad::se_kernel(omega_, omega_, var(key)), jitter_);
  }

  Var entry_chol() {
    const auto key = p_.log_ls_entry();
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const Var z = var(p_.pseudo_entry());
    return cache_[key] = ad::cholesky(ad::se_kernel(z, z, var(key)), jitter_);
  }

  Var kl_freq() {
    const auto& s = p_.shape();
    Var total = tape_.constant(0.0);
    for (std::size_t k = 0; k < s.K(); ++k) {
      for (std::size_t r = 0; r < s.R; ++r) {
        total = ad::add(total, graph::kl_mg_prior(var(p_.mean(k, r)), factor(p_.row_factor(k, r)),
                                                  factor(p_.col_factor(k, r)), pseudo_chol(k, r), freq_chol(k, r)));
      }
    }
    return total;
  }

  Var kl_entry() { return graph::kl_gaussian(var(p_.h_mean()), factor(p_.h_factor()), entry_chol()); }

  Var g_hat(std::size_t k, std::size_t r, const Matrix& noise) {
    return graph::mg_sample(var(p_.mean(k, r)), factor(p_.row_factor(k, r)), factor(p_.col_factor(k, r)),
                            tape_.constant(noise));
  }

  Var h_hat(const Vector& noise) {
    return ad::add(var(p_.h_mean()), ad::matmul(factor(p_.h_factor()), tape_.constant(Matrix(noise))));
  }

  // B x 1 samples of u^k_r for each r in `comps`, at entities `ids` with the
  // synthesis basis of the batch times.
  std::vector<Var> trajectories(std::size_t k, std::span<const std::size_t> ids, Var basis,
                                std::span<const std::size_t> comps, std::span<const Var> g_hats,
                                std::span<const Matrix> row_noise) {
    const Var e = ad::gather_rows(var(p_.embedding(k)), ids);
    std::map<std::size_t, graph::Projection> projections;
    std::vector<Var> out;
    for (std::size_t i = 0; i < comps.size(); ++i) {
      const auto r = comps[i];
      const auto key = p_.log_ls_embed(k, r);
      auto it = projections.find(key);
      if (it == projections.end()) {
        it = projections.emplace(key, graph::project(e, var(p_.pseudo_freq(k)), var(key), pseudo_chol(k, r))).first;
      }
      const Var mean = graph::conditional_mean(it->second, pseudo_chol(k, r), g_hats[i]);
      const Var alpha = graph::conditional_sample(it->second, mean, tape_.constant(row_noise[i]), freq_chol(k, r));
      out.push_back(ad::row_sums(ad::mul(alpha, basis)));
    }
    return out;
  }

  // B x 1 samples of m for `items` given the sampled pseudo outputs.
  Var entry_values(std::span<const Observation> items, std::span<const Var> g_hats, Var h,
                   const std::vector<Matrix>& row_noise, const Vector& scalar_noise) {
    const auto& s = p_.shape();
    const auto B = items.size();
    Vector times(static_cast<Index>(B));
    for (std::size_t i = 0; i < B; ++i) times(static_cast<Index>(i)) = items[i].time;
    const Var basis = tape_.constant(synthesis_basis(p_.rule(), times));

    std::vector<std::size_t> comps(s.R);
    for (std::size_t r = 0; r < s.R; ++r) comps[r] = r;
    std::vector<Var> columns;
    std::vector<std::size_t> ids(B);
    for (std::size_t k = 0; k < s.K(); ++k) {
      for (std::size_t i = 0; i < B; ++i) ids[i] = items[i].indices[k];
      const auto u = trajectories(k, ids, basis, comps, g_hats.subspan(k * s.R, s.R),
                                  std::span<const Matrix>(row_noise).subspan(k * s.R, s.R));
      columns.insert(columns.end(), u.begin(), u.end());
    }
    const Var v = ad::concat_cols(columns);
    const Var lg = entry_chol();
    const auto proj = graph::project(v, var(p_.pseudo_entry()), var(p_.log_ls_entry()), lg);
    const Var mean = graph::conditional_mean(proj, lg, h);
    return graph::conditional_sample(proj, mean, tape_.constant(Matrix(scalar_noise)), Var{});
  }

  Var entry_values(std::span<const Observation> items, const NoiseBundle& noise) {
    const auto g = all_g_hats(noise);
    return entry_values(items, g, h_hat(noise.entry), noise.rows, noise.scalar);
  }

  std::vector<Var> all_g_hats(const NoiseBundle& noise) {
    const auto& s = p_.shape();
    std::vector<Var> g;
    for (std::size_t k = 0; k < s.K(); ++k) {
      for (std::size_t r = 0; r < s.R; ++r) g.push_back(g_hat(k, r, noise.pseudo[k * s.R + r]));
    }
    return g;
  }

  // sum_n log N(y_n | m_n, exp(log_noise_var)).
  Var log_likelihood(const Vector& y, Var m) {
    const double B = static_cast<double>(y.size());
    const Var s = var(p_.log_noise_var());
    const Var sq = ad::sum(ad::square(ad::sub(tape_.constant(Matrix(y)), m)));
    const Var data = ad::scale(ad::mul(ad::exp(ad::neg(s)), sq), -0.5);
    return ad::add_scalar(ad::add(data, ad::scale(s, -0.5 * B)), -0.5 * B * std::log(2.0 * std::numbers::pi));
  }

 private:
  ad::Tape& tape_;
  const NonfatParams& p_;
  double jitter_;
  std::vector<Var> vars_;
  Var omega_;
  std::map<std::size_t, Var> factors_;
  std::map<std::size_t, Var> cache_;
};

void check_items(const NonfatParams& p, std::span<const Observation> items) {
  const auto& dims = p.shape().dims;
  for (const auto& o : items) {
    if (o.indices.size() != dims.size()) throw DataError("entry has the wrong number of modes");
    for (std::size_t k = 0; k < dims.size(); ++k) {
      if (o.indices[k] >= dims[k]) {
        throw DataError("entity index " + std::to_string(o.indices[k]) + " out of range for mode " +
                        std::to_string(k));
      }
    }
    if (!std::isfinite(o.time)) throw DataError("non-finite time");
  }
}

void check_noise(const NonfatParams& p, const NoiseBundle& n, std::size_t batch) {
  const auto& s = p.shape();
  const auto KR = s.K() * s.R;
  bool ok = n.pseudo.size() == KR && n.rows.size() == KR && n.size() == batch &&
            n.entry.size() == static_cast<Index>(s.a_g);
  for (std::size_t i = 0; ok && i < KR; ++i) {
    ok = n.pseudo[i].rows() == static_cast<Index>(s.a_k) && n.pseudo[i].cols() == static_cast<Index>(s.C) &&
         n.rows[i].rows() == static_cast<Index>(batch) && n.rows[i].cols() == static_cast<Index>(s.C);
  }
  if (!ok) throw ConfigError("noise bundle does not match the model shape and batch size");
}

struct ElboGraph {
  Var kl_freq, kl_entry, likelihood, value;
};

ElboGraph build_elbo(Graph& g, ad::Tape& tape, const NonfatParams& p, std::span<const Observation> batch,
                     std::size_t n_total, std::span<const NoiseBundle> noise) {
  if (batch.empty()) throw ConfigError("elbo: empty batch");
  if (noise.empty()) throw ConfigError("elbo: no noise bundle");
  check_items(p, batch);
  for (const auto& n : noise) check_noise(p, n, batch.size());

  Vector y(static_cast<Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) y(static_cast<Index>(i)) = batch[i].value;

  ElboGraph out;
  out.kl_freq = g.kl_freq();
  out.kl_entry = g.kl_entry();
  Var lik = tape.constant(0.0);
  for (const auto& n : noise) lik = ad::add(lik, g.log_likelihood(y, g.entry_values(batch, n)));
  const double weight =
      static_cast<double>(n_total) / static_cast<double>(batch.size()) / static_cast<double>(noise.size());
  out.likelihood = ad::scale(lik, weight);
  out.value = ad::sub(out.likelihood, ad::add(out.kl_freq, out.kl_entry));
  return out;
}

ElboTerms terms_of(const ElboGraph& e, const NonfatParams& p) {
  ElboTerms t{e.kl_freq.scalar(), e.kl_entry.scalar(), e.likelihood.scalar(), e.value.scalar()};
  if (!std::isfinite(t.value)) {
    throw NumericalError("elbo is not finite (kl_freq=" + std::to_string(t.kl_freq) +
                         ", kl_entry=" + std::to_string(t.kl_entry) + ", likelihood=" + std::to_string(t.likelihood) +
                         "); parameter norms: " + p.norms_report());
  }
  return t;
}

std::uint64_t time_bits(double t) { return std::bit_cast<std::uint64_t>(t == 0.0 ? 0.0 : t); }

// Stream keys for prediction noise. Tags keep the families apart.
constexpr std::uint64_t kGlobalTag = 0x676c6f62616cULL;
constexpr std::uint64_t kRowTag = 0x726f77ULL;
constexpr std::uint64_t kEntryTag = 0x656e747279ULL;

std::uint64_t global_key(std::uint64_t seed, std::size_t sample) {
  return hash_combine(hash_combine(kGlobalTag, seed), sample);
}

// Row noise of entity j in mode k for component r: one C-vector per sample,
// shared by every time at which that entity is queried.
Vector row_noise(std::uint64_t seed, std::size_t sample, std::size_t k, std::size_t j, std::size_t r, std::size_t C) {
  std::uint64_t h = hash_combine(hash_combine(kRowTag, seed), sample);
  h = hash_combine(hash_combine(hash_combine(h, k), j), r);
  KeyedRng rng(h);
  Vector out(static_cast<Index>(C));
  for (Index c = 0; c < out.size(); ++c) out(c) = rng.normal();
  return out;
}

double entry_noise(std::uint64_t seed, std::size_t sample, const Observation& o) {
  std::uint64_t h = hash_combine(hash_combine(kEntryTag, seed), sample);
  for (auto i : o.indices) h = hash_combine(h, i);
  h = hash_combine(h, time_bits(o.time));
  return KeyedRng(h).normal();
}

constexpr std::size_t kPredictChunk = 1024;

}  // namespace

std::vector<Vector> sample_trajectories(const NonfatParams& params,
                                        std::span<const std::pair<std::size_t, std::size_t>> entities, double t,
                                        const NoiseBundle& noise) {
  const auto& s = params.shape();
  check_noise(params, noise, noise.size());
  if (noise.size() < entities.size()) throw ConfigError("sample_trajectories: not enough row noise");
  ad::Tape tape;
  Graph g(tape, params, false, kDefaultJitter);
  Vector times(1);
  times << t;
  const Var basis = tape.constant(synthesis_basis(params.rule(), times));
  std::vector<std::size_t> comps(s.R);
  for (std::size_t r = 0; r < s.R; ++r) comps[r] = r;

  std::vector<Vector> out;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    const auto [k, j] = entities[i];
    if (k >= s.K() || j >= s.dims[k]) throw DataError("sample_trajectories: entity out of range");
    std::vector<Var> g_hats;
    std::vector<Matrix> rows;
    for (std::size_t r = 0; r < s.R; ++r) {
      g_hats.push_back(g.g_hat(k, r, noise.pseudo[k * s.R + r]));
      rows.push_back(noise.rows[k * s.R + r].row(static_cast<Index>(i)));
    }
    const std::size_t id[] = {j};
    const auto u = g.trajectories(k, id, basis, comps, g_hats, rows);
    Vector v(static_cast<Index>(s.R));
    for (std::size_t r = 0; r < s.R; ++r) v(static_cast<Index>(r)) = u[r].scalar();
    out.push_back(std::move(v));
  }
  return out;
}

double sample_entry_value(const NonfatParams& params, const std::vector<std::size_t>& entry, double t,
                          const NoiseBundle& noise) {
  const Observation item[] = {{entry, 0.0, t}};
  check_items(params, item);
  if (noise.size() < 1) throw ConfigError("sample_entry_value: empty noise bundle");
  const std::size_t first[] = {0};
  const NoiseBundle one = noise.slice(first);
  check_noise(params, one, 1);
  ad::Tape tape;
  Graph g(tape, params, false, kDefaultJitter);
  return g.entry_values(item, one).scalar();
}

ElboTerms elbo_estimate(const NonfatParams& params, std::span<const Observation> batch, std::size_t n_total,
                        const NoiseBundle& noise, double jitter) {
  ad::Tape tape;
  Graph g(tape, params, false, jitter);
  const auto e = build_elbo(g, tape, params, batch, n_total, std::span<const NoiseBundle>(&noise, 1));
  return terms_of(e, params);
}

ElboGradient elbo_gradient(const NonfatParams& params, std::span<const Observation> batch, std::size_t n_total,
                           std::span<const NoiseBundle> noise, double jitter) {
  ad::Tape tape;
  Graph g(tape, params, true, jitter);
  const auto e = build_elbo(g, tape, params, batch, n_total, noise);
  ElboGradient out;
  out.terms = terms_of(e, params);
  tape.backward(e.value);
  for (std::size_t i = 0; i < params.tensors().size(); ++i) out.grads.push_back(tape.grad(g.var(i)));
  return out;
}

std::vector<std::pair<Index, Index>> elbo_graph_shapes(const NonfatParams& params,
                                                       std::span<const Observation> batch, std::size_t n_total,
                                                       const NoiseBundle& noise, double jitter) {
  ad::Tape tape;
  Graph g(tape, params, true, jitter);
  const auto e = build_elbo(g, tape, params, batch, n_total, std::span<const NoiseBundle>(&noise, 1));
  tape.backward(e.value);
  return tape.shapes();
}

Prediction predict(const NonfatParams& params, std::span<const Observation> items, std::size_t num_samples,
                   std::uint64_t seed, double jitter) {
  if (num_samples < 1) throw ConfigError("predict: num_samples must be >= 1");
  check_items(params, items);
  const auto& s = params.shape();
  const auto n = items.size();
  Prediction out;
  out.noise_var = params.noise_var();
  out.samples.resize(static_cast<Index>(n), static_cast<Index>(num_samples));

  for (std::size_t smp = 0; smp < num_samples; ++smp) {
    Rng rng(global_key(seed, smp));
    const NoiseBundle global = draw_noise(s, 0, rng);
    for (std::size_t start = 0; start < n; start += kPredictChunk) {
      const auto chunk = items.subspan(start, std::min(kPredictChunk, n - start));
      const auto B = static_cast<Index>(chunk.size());
      std::vector<Matrix> rows;
      for (std::size_t k = 0; k < s.K(); ++k) {
        for (std::size_t r = 0; r < s.R; ++r) {
          Matrix m(B, static_cast<Index>(s.C));
          std::map<std::size_t, Vector> by_entity;
          for (Index b = 0; b < B; ++b) {
            const auto j = chunk[static_cast<std::size_t>(b)].indices[k];
            auto it = by_entity.find(j);
            if (it == by_entity.end()) it = by_entity.emplace(j, row_noise(seed, smp, k, j, r, s.C)).first;
            m.row(b) = it->second.transpose();
          }
          rows.push_back(std::move(m));
        }
      }
      Vector scalar(B);
      for (Index b = 0; b < B; ++b) scalar(b) = entry_noise(seed, smp, chunk[static_cast<std::size_t>(b)]);

      ad::Tape tape;
      Graph g(tape, params, false, jitter);
      const auto g_hats = g.all_g_hats(global);
      const Var m = g.entry_values(chunk, g_hats, g.h_hat(global.entry), rows, scalar);
      out.samples.block(static_cast<Index>(start), static_cast<Index>(smp), B, 1) = m.value();
    }
  }
  out.mean = out.samples.rowwise().mean();
  out.variance = (out.samples.colwise() - out.mean).rowwise().squaredNorm() / static_cast<double>(num_samples);
  out.variance.array() += out.noise_var;
  return out;
}

TrajectoryCurve export_trajectory(const NonfatParams& params, std::size_t mode, std::size_t entity,
                                  std::size_t component, const Vector& grid, std::size_t num_samples,
                                  std::uint64_t seed, double jitter) {
  const auto& s = params.shape();
  if (mode >= s.K()) throw DataError("export_trajectory: mode out of range");
  if (entity >= s.dims[mode]) throw DataError("export_trajectory: entity out of range");
  if (component >= s.R) throw DataError("export_trajectory: component out of range");
  if (num_samples < 1) throw ConfigError("export_trajectory: num_samples must be >= 1");
  if (!grid.allFinite()) throw DataError("export_trajectory: non-finite time grid");

  const auto G = grid.size();
  Matrix samples(G, static_cast<Index>(num_samples));
  const std::vector<std::size_t> ids(static_cast<std::size_t>(G), entity);
  const std::size_t comps[] = {component};
  for (std::size_t smp = 0; smp < num_samples; ++smp) {
    Rng rng(global_key(seed, smp));
    const NoiseBundle global = draw_noise(s, 0, rng);
    const Vector noise = row_noise(seed, smp, mode, entity, component, s.C);
    const Matrix rows = noise.transpose().replicate(G, 1);

    ad::Tape tape;
    Graph g(tape, params, false, jitter);
    const Var basis = tape.constant(synthesis_basis(params.rule(), grid));
    const Var g_hat[] = {g.g_hat(mode, component, global.pseudo[mode * s.R + component])};
    const Matrix row_mats[] = {rows};
    samples.col(static_cast<Index>(smp)) = g.trajectories(mode, ids, basis, comps, g_hat, row_mats)[0].value();
  }
  TrajectoryCurve out;
  out.mean = samples.rowwise().mean();
  out.stddev = ((samples.colwise() - out.mean).rowwise().squaredNorm() / static_cast<double>(num_samples))
                   .array()
                   .sqrt();
  return out;
}

}  // namespace nonfat
