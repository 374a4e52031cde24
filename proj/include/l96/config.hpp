#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "l96/closure.hpp"
#include "l96/errors.hpp"
#include "l96/lorenz96.hpp"
#include "l96/response.hpp"
#include "l96/rng.hpp"

namespace l96 {

using Json = nlohmann::json;

// Every key a config file may set, with its default. User files are merged
// over this tree; unknown keys and type mismatches are errors.
inline Json default_config() {
  return Json::parse(R"({
    "regime": {"n_x": 20, "j": 4, "f_x": 16.0, "f_y": 12.0,
               "lambda_x": 0.4, "lambda_y": 0.4, "epsilon": 0.1},
    "rng": {"algorithm": "mt19937_64", "seed": 1},
    "integration": {"multiscale_dt_factor": 0.1, "reduced_dt": 0.1},
    "calibration": {"run_length": 10000.0, "spinup": 100.0, "dt": 0.01},
    "closure": {
      "x_star_run": 5000.0, "x_star_spinup": 100.0,
      "z_bar_run": 10000.0, "z_bar_spinup": 100.0,
      "correlation": {"run_length": 10000.0, "spinup": 100.0, "dt": 0.1, "dt_lag": 0.1,
                      "t_corr": null, "cutoff_threshold": 0.01, "cutoff_cap": 50.0,
                      "centered": true, "symmetrize": true}
    },
    "simulate": {"system": "multiscale", "run_length": 100.0, "spinup": 100.0, "dt_record": 0.1},
    "stats": {"run_length": 5000.0, "spinup": 100.0, "dt_sample": 0.1, "max_lag": 100,
              "bins": {"lo": -4.0, "hi": 4.0, "count": 80}, "noise_floor": true},
    "ensemble": {"base_count": 10000, "rotations": true, "spacing": 1.0, "spinup": 100.0},
    "response": {
      "horizon": 5.0, "dt_out": 0.1, "max_excluded_fraction": 0.001,
      "forcing": {"kind": "heaviside", "node": 0, "fraction": 0.01},
      "probe_amplitudes": [-1.0, 1.0],
      "snapshot_times": [2.0, 5.0],
      "qg_run": 10000.0,
      "systems": ["multiscale", "reduced0", "reduced1"],
      "operators": ["direct", "ideal", "quasi_gaussian"],
      "reference": "multiscale:ideal"
    },
    "sweep": {"f_x": [6.0, 7.0, 8.0, 10.0, 16.0], "f_y": [8.0, 12.0, 16.0],
              "lambda": [0.1, 0.4, 0.7, 1.0], "epsilon": [0.1, 0.01], "limit": 0}
  })");
}

namespace detail {

// Checks `value` against the default `def` and normalizes numbers so that
// equal configs always serialize (and hash) identically.
inline Json coerce(const Json& def, const Json& value, const std::string& key) {
  const auto wrong = [&] { return ConfigError("config key '" + key + "' has the wrong type"); };
  if (def.is_null() || def.is_number_float()) {
    if (def.is_null() && value.is_null()) return value;
    if (!value.is_number()) throw wrong();
    return Json(value.get<double>());
  }
  if (def.is_number_integer()) {
    if (value.is_number_integer()) return value;
    if (value.is_number_float() && value.get<double>() == std::floor(value.get<double>()))
      return Json(static_cast<std::int64_t>(value.get<double>()));
    throw wrong();
  }
  if (def.is_array()) {
    if (!value.is_array()) throw wrong();
    if (def.empty()) return value;
    Json out = Json::array();
    for (const auto& v : value) out.push_back(coerce(def.front(), v, key));
    return out;
  }
  if (def.type() != value.type()) throw wrong();
  return value;
}

inline void merge_checked(Json& base, const Json& defaults, const Json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    const Json& def = defaults.at(it.key());
    if (def.is_object())
      merge_checked(base[it.key()], def, it.value(), key);
    else
      base[it.key()] = coerce(def, it.value(), key);
  }
}

inline Json* lookup(Json& root, const std::string& dotted) {
  Json* node = &root;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) return nullptr;
    node = &(*node)[part];
    if (dot == std::string::npos) return node;
    start = dot + 1;
  }
}

}  // namespace detail

class ExperimentConfig {
 public:
  ExperimentConfig() : tree_(default_config()) {}

  static ExperimentConfig parse(const std::string& text) {
    Json patch;
    try {
      patch = Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c;
    detail::merge_checked(c.tree_, default_config(), patch, "");
    c.validate();
    return c;
  }

  std::string emit() const { return tree_.dump(2) + "\n"; }
  const Json& tree() const { return tree_; }

  // KEY=VAL where KEY is a regime field, "lambda" (both couplings) or a
  // dotted path into any section. VAL is read as a JSON scalar or array.
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not KEY=VAL");
    const std::string key = assignment.substr(0, eq);
    Json value;
    try {
      value = Json::parse(assignment.substr(eq + 1));
    } catch (const Json::parse_error&) {
      value = assignment.substr(eq + 1);
    }
    if (key == "lambda") {
      apply_override("regime.lambda_x=" + value.dump());
      apply_override("regime.lambda_y=" + value.dump());
      return;
    }
    const std::string path = key.find('.') == std::string::npos ? "regime." + key : key;
    Json defaults = default_config();
    const Json* def = detail::lookup(defaults, path);
    if (!def || def->is_object()) throw ConfigError("unknown config key '" + path + "'");
    *detail::lookup(tree_, path) = detail::coerce(*def, value, path);
    validate();
  }

  void set_seed(std::uint64_t seed) { tree_["rng"]["seed"] = static_cast<std::int64_t>(seed); }

  ModelParams regime() const {
    const Json& r = tree_.at("regime");
    ModelParams p;
    p.n_x = r.at("n_x").get<Index>();
    p.j = r.at("j").get<Index>();
    p.f_x = r.at("f_x").get<double>();
    p.f_y = r.at("f_y").get<double>();
    p.lambda_x = r.at("lambda_x").get<double>();
    p.lambda_y = r.at("lambda_y").get<double>();
    p.epsilon = r.at("epsilon").get<double>();
    return p;
  }

  void set_regime(const ModelParams& p) {
    Json& r = tree_["regime"];
    r["n_x"] = static_cast<std::int64_t>(p.n_x);
    r["j"] = static_cast<std::int64_t>(p.j);
    r["f_x"] = p.f_x;
    r["f_y"] = p.f_y;
    r["lambda_x"] = p.lambda_x;
    r["lambda_y"] = p.lambda_y;
    r["epsilon"] = p.epsilon;
  }

  std::uint64_t seed() const { return tree_.at("rng").at("seed").get<std::uint64_t>(); }
  double num(const std::string& dotted) const { return at(dotted).get<double>(); }
  Index count(const std::string& dotted) const { return at(dotted).get<Index>(); }
  bool flag(const std::string& dotted) const { return at(dotted).get<bool>(); }
  std::string text(const std::string& dotted) const { return at(dotted).get<std::string>(); }
  std::vector<double> nums(const std::string& dotted) const { return at(dotted).get<std::vector<double>>(); }
  std::vector<std::string> texts(const std::string& dotted) const {
    return at(dotted).get<std::vector<std::string>>();
  }

  double multiscale_dt() const { return num("integration.multiscale_dt_factor") * regime().epsilon; }
  double reduced_dt() const { return num("integration.reduced_dt"); }

  ClosureOptions closure() const {
    ClosureOptions o;
    o.x_star_run = num("closure.x_star_run");
    o.x_star_spinup = num("closure.x_star_spinup");
    o.z_bar_run = num("closure.z_bar_run");
    o.z_bar_spinup = num("closure.z_bar_spinup");
    CorrelationOptions& c = o.correlation;
    c.run_length = num("closure.correlation.run_length");
    c.spinup = num("closure.correlation.spinup");
    c.dt = num("closure.correlation.dt");
    c.dt_lag = num("closure.correlation.dt_lag");
    const Json& t = at("closure.correlation.t_corr");
    if (!t.is_null()) c.t_corr = t.get<double>();
    c.cutoff_threshold = num("closure.correlation.cutoff_threshold");
    c.cutoff_cap = num("closure.correlation.cutoff_cap");
    c.centered = flag("closure.correlation.centered");
    c.symmetrize = flag("closure.correlation.symmetrize");
    return o;
  }

 private:
  const Json& at(const std::string& dotted) const {
    Json* node = detail::lookup(const_cast<Json&>(tree_), dotted);
    if (!node) throw ConfigError("missing config key '" + dotted + "'");
    return *node;
  }

  void validate() const {
    if (text("rng.algorithm") != Rng::algorithm)
      throw ConfigError("unsupported rng.algorithm '" + text("rng.algorithm") + "' (only " +
                        std::string(Rng::algorithm) + ")");
    if (at("rng.seed").get<std::int64_t>() < 0)
      throw ConfigError("rng.seed must be a non-negative integer");
    try {
      regime().validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("invalid regime: ") + e.what());
    }
    const std::string kind = text("response.forcing.kind");
    if (kind != "heaviside" && kind != "ramp") throw ConfigError("response.forcing.kind must be heaviside or ramp");
    for (const auto& s : texts("response.systems"))
      if (s != "multiscale" && s != "reduced0" && s != "reduced1") throw ConfigError("unknown system '" + s + "'");
    for (const auto& o : texts("response.operators"))
      if (o != "direct" && o != "ideal" && o != "quasi_gaussian") throw ConfigError("unknown operator '" + o + "'");
  }

  Json tree_;
};

}  // namespace l96
