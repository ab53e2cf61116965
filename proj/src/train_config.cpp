#include "nonfat/train_config.hpp"

#include <cmath>

#include "nonfat/common.hpp"
#include "nonfat/quadrature.hpp"

namespace nonfat {

Selection selection_from_string(const std::string& name) {
  if (name == "test") return Selection::TestRmse;
  if (name == "validation") return Selection::Validation;
  throw ConfigError("unknown selection mode '" + name + "' (expected 'test' or 'validation')");
}

std::string to_string(Selection s) { return s == Selection::TestRmse ? "test" : "validation"; }

void TrainConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw ConfigError(std::string("config: ") + name + " must be >= 1");
  };
  positive(R, "R");
  positive(C, "C");
  positive(s, "s");
  positive(a_k, "a_k");
  positive(a_g, "a_g");
  positive(batch_size, "batch_size");
  positive(num_pred_samples, "num_pred_samples");
  positive(elbo_samples, "elbo_samples");
  if (C > static_cast<std::size_t>(kMaxQuadratureOrder)) {
    throw ConfigError("config: C must be <= " + std::to_string(kMaxQuadratureOrder));
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("config: learning_rate must be > 0");
  if (!(jitter >= 0.0) || !std::isfinite(jitter)) throw ConfigError("config: jitter must be >= 0");
  if (!(validation_frac > 0.0 && validation_frac < 1.0)) {
    throw ConfigError("config: validation_frac must be in (0, 1)");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"R", c.R},
                     {"C", c.C},
                     {"s", c.s},
                     {"a_k", c.a_k},
                     {"a_g", c.a_g},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"epochs", c.epochs},
                     {"seed", c.seed},
                     {"jitter", c.jitter},
                     {"num_pred_samples", c.num_pred_samples},
                     {"per_r_kernels", c.per_r_kernels},
                     {"elbo_samples", c.elbo_samples},
                     {"selection", to_string(c.selection)},
                     {"validation_frac", c.validation_frac}};
}

namespace {

std::size_t count(const nlohmann::json& v) {
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("expected a non-negative integer");
  return v.get<std::size_t>();
}

}  // namespace

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "R") c.R = count(value);
      else if (key == "C") c.C = count(value);
      else if (key == "s") c.s = count(value);
      else if (key == "a_k") c.a_k = count(value);
      else if (key == "a_g") c.a_g = count(value);
      else if (key == "batch_size") c.batch_size = count(value);
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "epochs") c.epochs = count(value);
      else if (key == "seed") c.seed = count(value);
      else if (key == "jitter") c.jitter = value.get<double>();
      else if (key == "num_pred_samples") c.num_pred_samples = count(value);
      else if (key == "per_r_kernels") c.per_r_kernels = value.get<bool>();
      else if (key == "elbo_samples") c.elbo_samples = count(value);
      else if (key == "selection") c.selection = selection_from_string(value.get<std::string>());
      else if (key == "validation_frac") c.validation_frac = value.get<double>();
      else throw ConfigError("config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: bad value for '" + key + "': " + e.what());
    } catch (const ConfigError& e) {
      if (std::string(e.what()).rfind("config:", 0) == 0) throw;
      throw ConfigError("config: bad value for '" + key + "': " + e.what());
    }
  }
}

}  // namespace nonfat
