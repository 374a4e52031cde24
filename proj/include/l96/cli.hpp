#pragma once

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "l96/closure.hpp"
#include "l96/config.hpp"
#include "l96/lorenz96.hpp"
#include "l96/response.hpp"
#include "l96/statistics.hpp"
#include "l96/store.hpp"

namespace l96::cli {

enum ExitCode : int { kOk = 0, kOtherError = 1, kConfigError = 2, kNumericalFailure = 3, kStoreConflict = 4 };

// Stage identifiers for Rng::derive; fixed so results never depend on the
// order in which a command happens to need them.
namespace stream {
inline constexpr std::uint64_t calibration = 1;
inline constexpr std::uint64_t closure = 3;
inline constexpr std::uint64_t stats = 10;      // + system index
inline constexpr std::uint64_t noise_floor = 19;
inline constexpr std::uint64_t ensemble = 20;   // + system index
inline constexpr std::uint64_t qg_series = 30;  // + system index
inline constexpr std::uint64_t simulate = 40;   // + system index
}  // namespace stream

inline const std::vector<std::string>& system_names() {
  static const std::vector<std::string> names{"multiscale", "reduced0", "reduced1"};
  return names;
}

inline std::uint64_t system_index(const std::string& name) {
  const auto& n = system_names();
  const auto it = std::find(n.begin(), n.end(), name);
  if (it == n.end()) throw ConfigError("unknown system '" + name + "'");
  return static_cast<std::uint64_t>(it - n.begin());
}

class Session {
 public:
  Session(ExperimentConfig cfg, std::filesystem::path dir, std::ostream& out, std::ostream& log)
      : cfg_(std::move(cfg)), store_(std::move(dir)), out_(out), log_(log) {}

  const ExperimentConfig& config() const { return cfg_; }
  const ArtifactStore& store() const { return store_; }
  std::ostream& out() { return out_; }
  std::ostream& log() { return log_; }

  std::filesystem::path save(const Artifact& a) {
    const bool fresh = store_.write(a);
    const auto path = store_.path_of(a);
    log_ << (fresh ? "wrote " : "kept  ") << path.string() << "\n";
    return path;
  }

  // Calibrations are stored per (N, F) and reused verbatim once written;
  // `recompute` always reruns and so detects a differing stored copy.
  Calibration calibration(Index n, double forcing, bool recompute = false) {
    const Json view = calibration_view(n, forcing);
    const std::string name = Artifact{"calibration", config_hash(view), ".json", ""}.file_name();
    if (auto text = store_.read(name); text && !recompute) {
      const Json p = Json::parse(*text).at("payload");
      return {p.at("forcing").get<double>(), p.at("mean").get<double>(),     p.at("sigma").get<double>(),
              p.at("run_length").get<double>(), p.at("spinup").get<double>(), p.at("dt").get<double>()};
    }
    const Calibration c = calibrate(n, forcing, cfg_.num("calibration.run_length"), cfg_.num("calibration.spinup"),
                                    cfg_.num("calibration.dt"), Rng::derive(cfg_.seed(), stream::calibration));
    Json payload{{"n", n},           {"forcing", c.forcing}, {"mean", c.mean},    {"sigma", c.sigma},
                 {"run_length", c.run_length}, {"spinup", c.spinup}, {"dt", c.dt}};
    save(json_artifact("calibration", view, payload));
    return c;
  }

  Calibration cal_x() { return calibration(cfg_.regime().n_x, cfg_.regime().f_x); }
  Calibration cal_y() { return calibration(cfg_.regime().n_y(), cfg_.regime().f_y); }

  // Both orders come from one closure build and are stored together.
  ReducedModel reduced(int order, bool recompute = false) {
    const Json view = reduced_view(order);
    const std::string name = Artifact{"reduced" + std::to_string(order), config_hash(view), ".json", ""}.file_name();
    if (auto text = store_.read(name); text && !recompute) return reduced_from_json(Json::parse(*text).at("payload"), config_hash(view));
    const ModelParams p = cfg_.regime();
    const ClosureBuild b =
        build_closure(p, cal_x(), cal_y(), cfg_.closure(), Rng::derive(cfg_.seed(), stream::closure));
    for (int k : {0, 1}) {
      ReducedModel rm = b.order(k);
      rm.provenance.config_hash = config_hash(reduced_view(k));
      save(json_artifact("reduced" + std::to_string(k), reduced_view(k), reduced_to_json(rm, b.x_star)));
    }
    ReducedModel rm = b.order(order);
    rm.provenance.config_hash = config_hash(view);
    return rm;
  }

  // Calls fn(field, layout, dt, system index) for the named system.
  template <class Fn>
  void with_system(const std::string& name, Fn&& fn) {
    const ModelParams p = cfg_.regime();
    const std::uint64_t idx = system_index(name);
    if (name == "multiscale") {
      const TwoScaleField f(p, cal_x(), cal_y());
      fn(f, NodeLayout{p.n_x, p.j}, cfg_.multiscale_dt(), idx);
    } else {
      const ReducedModel rm = reduced(name == "reduced0" ? 0 : 1);
      const ReducedField f(p, cal_x(), rm);
      fn(f, NodeLayout{p.n_x, 0}, cfg_.reduced_dt(), idx);
    }
  }

  Json calibration_view(Index n, double forcing) const {
    return Json{{"kind", "calibration"},
                {"n", n},
                {"forcing", forcing},
                {"calibration", cfg_.tree().at("calibration")},
                {"rng", cfg_.tree().at("rng")}};
  }

  Json reduced_view(int order) const {
    const Json& t = cfg_.tree();
    return Json{{"kind", "reduced"},           {"order", order},         {"regime", t.at("regime")},
                {"calibration", t.at("calibration")}, {"closure", t.at("closure")}, {"rng", t.at("rng")}};
  }

  // Full config plus the command and its arguments.
  Json command_view(const std::string& command, const Json& args = Json::object()) const {
    Json v = cfg_.tree();
    v["command"] = Json{{"name", command}, {"args", args}};
    return v;
  }

  static Json reduced_to_json(const ReducedModel& rm, const XStarEstimate& xs) {
    const auto& pv = rm.provenance;
    return Json{{"order", rm.order},
                {"l_l_used", rm.order == 1},
                {"x_star", rm.x_star[0]},
                {"x_star_vector", vector_json(rm.x_star)},
                {"x_star_standard_error", xs.standard_error},
                {"x_star_mixing", xs.mixing},
                {"z_bar_star", rm.z_bar_star[0]},
                {"z_bar_star_vector", vector_json(rm.z_bar_star)},
                {"closure_matrix", matrix_json(rm.c_mat)},
                {"l_l", matrix_json(rm.l_l)},
                {"provenance",
                 {{"t_corr", pv.t_corr},
                  {"dt_lag", pv.dt_lag},
                  {"centered", pv.centered},
                  {"x_star_run", pv.x_star_run},
                  {"z_bar_run", pv.z_bar_run},
                  {"correlation_run", pv.correlation_run}}}};
  }

  static ReducedModel reduced_from_json(const Json& p, std::string hash) {
    ReducedModel rm;
    rm.order = p.at("order").get<int>();
    rm.x_star = vector_from_json(p.at("x_star_vector"));
    rm.z_bar_star = vector_from_json(p.at("z_bar_star_vector"));
    rm.c_mat = matrix_from_json(p.at("closure_matrix"));
    rm.l_l = matrix_from_json(p.at("l_l"));
    const Json& pv = p.at("provenance");
    rm.provenance.t_corr = pv.at("t_corr").get<double>();
    rm.provenance.dt_lag = pv.at("dt_lag").get<double>();
    rm.provenance.centered = pv.at("centered").get<bool>();
    rm.provenance.x_star_run = pv.at("x_star_run").get<double>();
    rm.provenance.z_bar_run = pv.at("z_bar_run").get<double>();
    rm.provenance.correlation_run = pv.at("correlation_run").get<double>();
    rm.provenance.config_hash = std::move(hash);
    return rm;
  }

 private:
  ExperimentConfig cfg_;
  ArtifactStore store_;
  std::ostream& out_;
  std::ostream& log_;
};

// ---------------------------------------------------------------- stats

struct SystemStats {
  Histogram1D ddf;
  AutocorrelationCurve autocorrelation;
  double mean = 0.0;
  double stddev = 0.0;
};

template <VectorField Field>
SystemStats long_run_stats(const ExperimentConfig& cfg, const Field& field, NodeLayout layout, double dt,
                           std::uint64_t seed) {
  Rng rng(seed);
  StateVector x = random_state(field.dimension(), rng, InitialDraw::standard_normal);
  const double spinup = cfg.num("stats.spinup");
  if (spinup > 0.0) x = integrate_final(field, std::move(x), 0.0, spinup, dt);
  Histogram1D h(cfg.num("stats.bins.lo"), cfg.num("stats.bins.hi"), cfg.count("stats.bins.count"));
  LaggedProductAccumulator lagged(layout.n_x, cfg.count("stats.max_lag"));
  ScalarMoments moments;
  const double dt_sample = cfg.num("stats.dt_sample");
  integrate_observed(field, ForcingProfile::none(), {}, std::move(x), 0.0, cfg.num("stats.run_length"), dt, dt_sample,
                     [&](double, const StateVector& s) {
                       const auto slow = s.head(layout.n_x);
                       for (Index i = 0; i < layout.n_x; ++i) {
                         h.add(slow[i]);
                         moments.add(slow[i]);
                       }
                       lagged.add(slow);
                     });
  return {std::move(h), lagged.curve(dt_sample), moments.mean(), moments.stddev()};
}

struct StatsResult {
  std::vector<std::string> systems;
  std::map<std::string, SystemStats> per_system;
  std::vector<std::tuple<std::string, double, double>> metrics;  // comparison, js, em
};

inline StatsResult compute_stats(Session& s, const std::vector<std::string>& systems, bool noise_floor) {
  StatsResult r;
  r.systems = systems;
  for (const auto& name : systems) {
    s.with_system(name, [&](const auto& field, NodeLayout layout, double dt, std::uint64_t idx) {
      r.per_system.emplace(name, long_run_stats(s.config(), field, layout, dt,
                                                Rng::derive(s.config().seed(), stream::stats + idx)));
      if (name == "multiscale" && noise_floor)
        r.per_system.emplace("multiscale_b", long_run_stats(s.config(), field, layout, dt,
                                                            Rng::derive(s.config().seed(), stream::noise_floor)));
    });
  }
  if (r.per_system.count("multiscale")) {
    const Histogram1D& ref = r.per_system.at("multiscale").ddf;
    for (const std::string other : {"multiscale_b", "reduced0", "reduced1"}) {
      if (!r.per_system.count(other)) continue;
      const Histogram1D& h = r.per_system.at(other).ddf;
      r.metrics.emplace_back(other + "_vs_multiscale", js_metric(h, ref), em_distance(h, ref));
    }
  }
  return r;
}

inline std::vector<std::string> parse_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

inline int cmd_stats(Session& s, const std::string& which) {
  const std::vector<std::string> systems = which == "all" ? system_names() : parse_list(which);
  if (systems.empty()) throw ConfigError("no systems selected");
  for (const auto& n : systems) system_index(n);
  const bool noise = s.config().flag("stats.noise_floor") &&
                     std::find(systems.begin(), systems.end(), "multiscale") != systems.end();
  const StatsResult r = compute_stats(s, systems, noise);
  const Json view = s.command_view("stats", {{"systems", systems}});

  std::vector<std::string> columns;
  for (const auto& n : systems) columns.push_back(n);
  if (noise) columns.push_back("multiscale_b");

  std::vector<std::string> header{"bin_center"};
  header.insert(header.end(), columns.begin(), columns.end());
  CsvTable ddf(header);
  const Histogram1D& geom = r.per_system.at(columns.front()).ddf;
  for (Index b = 0; b < geom.n_bins(); ++b) {
    std::vector<double> row;
    for (const auto& c : columns) row.push_back(r.per_system.at(c).ddf.density(b));
    ddf.row(fmt(geom.center(b)), row);
  }

  header[0] = "lag";
  CsvTable ac(header);
  const AutocorrelationCurve& first = r.per_system.at(columns.front()).autocorrelation;
  for (std::size_t k = 0; k < first.values.size(); ++k) {
    std::vector<double> row;
    for (const auto& c : columns) row.push_back(r.per_system.at(c).autocorrelation.values[k]);
    ac.row(fmt(first.lag(k)), row);
  }

  CsvTable summary({"system", "mean", "std", "out_of_range_fraction"});
  for (const auto& c : columns) {
    const SystemStats& st = r.per_system.at(c);
    summary.row(c, {st.mean, st.stddev, st.ddf.out_of_range_fraction()});
  }

  s.save(csv_artifact("stats-ddf", view, ddf.text()));
  s.save(csv_artifact("stats-autocorrelation", view, ac.text()));
  s.save(csv_artifact("stats-summary", view, summary.text()));
  if (!r.metrics.empty()) {
    CsvTable metrics({"comparison", "js_metric", "em_distance"});
    for (const auto& [name, js, em] : r.metrics) metrics.row(name, {js, em});
    s.save(csv_artifact("stats-metrics", view, metrics.text()));
    s.out() << metrics.text();
  }
  return kOk;
}

// ---------------------------------------------------------------- response

struct ResponseRun {
  std::vector<std::string> candidates;                 // "system:operator", in output order
  std::map<std::string, MeanResponseCurve> curves;
  std::map<std::string, ResponseOperator> operators;   // "system:ideal" / "system:quasi_gaussian"
  double alpha = 0.0;
};

inline ForcingProfile configured_forcing(const ExperimentConfig& cfg, double alpha) {
  const Index node = cfg.count("response.forcing.node");
  const ModelParams p = cfg.regime();
  if (node < 0 || node >= p.n_x) throw ConfigError("response.forcing.node outside the slow nodes");
  const StateVector dir = unit_vector(p.n_x, node);
  return cfg.text("response.forcing.kind") == "ramp" ? ForcingProfile::ramp(dir, alpha)
                                                      : ForcingProfile::heaviside(dir, alpha);
}

// Operators are built from node-0 probes; convolve applies their circulant
// completion, so any forcing node works.
inline ResponseRun compute_response(Session& s) {
  const ExperimentConfig& cfg = s.config();
  const auto systems = cfg.texts("response.systems");
  const auto ops = cfg.texts("response.operators");
  if (systems.empty() || ops.empty()) throw ConfigError("response needs at least one system and one operator");
  ResponseRun run;
  const ModelParams p = cfg.regime();
  const double horizon = cfg.num("response.horizon");
  const double dt_out = cfg.num("response.dt_out");
  bool have_alpha = false;

  for (const auto& name : systems) {
    s.with_system(name, [&](const auto& field, NodeLayout layout, double dt, std::uint64_t idx) {
      ResponseSettings rs;
      rs.horizon = horizon;
      rs.dt = dt;
      rs.dt_out = dt_out;
      rs.slow = {0, p.n_x};
      rs.max_excluded_fraction = cfg.num("response.max_excluded_fraction");

      const bool needs_ensemble = std::find(ops.begin(), ops.end(), "direct") != ops.end() ||
                                  std::find(ops.begin(), ops.end(), "ideal") != ops.end() || !have_alpha;
      std::optional<Ensemble> ens;
      if (needs_ensemble) {
        Rng rng(Rng::derive(cfg.seed(), stream::ensemble + idx));
        ens = draw_ensemble(field, layout, random_state(field.dimension(), rng, InitialDraw::standard_normal),
                            cfg.count("ensemble.base_count"), cfg.num("ensemble.spacing"),
                            cfg.num("ensemble.spinup"), dt, cfg.flag("ensemble.rotations"), name);
        s.log() << "ensemble " << name << ": " << ens->size() << " members\n";
      }
      if (!have_alpha) {
        // One forcing magnitude for every system, from the first one listed.
        run.alpha = forcing_magnitude(field, *ens, cfg.num("response.forcing.fraction"), rs.slow);
        have_alpha = true;
      }
      const ForcingProfile forcing = configured_forcing(cfg, run.alpha);

      for (const auto& op : ops) {
        const std::string cand = name + ":" + op;
        if (op == "direct") {
          run.curves.emplace(cand, mean_response(field, *ens, forcing, rs));
        } else if (op == "ideal") {
          std::vector<double> amps;
          for (double a : cfg.nums("response.probe_amplitudes")) amps.push_back(a * run.alpha);
          ResponseOperator r = ideal_response(field, *ens, amps, rs);
          run.curves.emplace(cand, convolve(r, forcing, horizon));
          run.operators.emplace(cand, std::move(r));
        } else {
          Rng rng(Rng::derive(cfg.seed(), stream::qg_series + idx));
          StateVector x = random_state(field.dimension(), rng, InitialDraw::standard_normal);
          x = integrate_final(field, std::move(x), 0.0, cfg.num("ensemble.spinup"), dt);
          const Matrix series =
              integrate(field, ForcingProfile::none(), {}, std::move(x), 0.0, cfg.num("response.qg_run"), dt, dt_out)
                  .samples()
                  .topRows(p.n_x);
          ResponseOperator r = quasi_gaussian_operator(series, dt_out, horizon, dt_out);
          run.curves.emplace(cand, convolve(r, forcing, horizon));
          run.operators.emplace(cand, std::move(r));
        }
        run.candidates.push_back(cand);
        s.log() << "response " << cand << " done\n";
      }
    });
  }
  return run;
}

inline std::string curve_csv(const Matrix& values, double dt) {
  std::vector<std::string> header{"time"};
  for (Index i = 0; i < values.rows(); ++i) header.push_back("x" + std::to_string(i));
  CsvTable t(header);
  for (Index k = 0; k < values.cols(); ++k) {
    std::vector<double> row(static_cast<std::size_t>(values.rows()));
    for (Index i = 0; i < values.rows(); ++i) row[static_cast<std::size_t>(i)] = values(i, k);
    t.row(fmt(dt * static_cast<double>(k)), row);
  }
  return t.text();
}

inline std::string slug(std::string cand) {
  std::replace(cand.begin(), cand.end(), ':', '-');
  std::replace(cand.begin(), cand.end(), '_', '-');
  return cand;
}

inline int cmd_response(Session& s) {
  const ExperimentConfig& cfg = s.config();
  const std::string reference = cfg.text("response.reference");
  ResponseRun run = compute_response(s);
  if (!run.curves.count(reference))
    throw ConfigError("response.reference '" + reference + "' is not among the computed candidates");
  const Json view = s.command_view("response");
  std::vector<Artifact> out;

  for (const auto& cand : run.candidates)
    out.push_back(csv_artifact("response-" + slug(cand), view,
                               curve_csv(run.curves.at(cand).values, run.curves.at(cand).dt_out)));
  for (const auto& [cand, op] : run.operators)
    out.push_back(csv_artifact("operator-" + slug(cand), view, curve_csv(op.kernel, op.dt)));

  const double dt_out = cfg.num("response.dt_out");
  for (double t : cfg.nums("response.snapshot_times")) {
    const auto k = detail::whole_steps(t, dt_out);
    if (!k || static_cast<Index>(*k) >= run.curves.at(reference).size())
      throw ConfigError("snapshot time " + fmt(t) + " is not on the response grid");
    std::vector<std::string> header{"node"};
    header.insert(header.end(), run.candidates.begin(), run.candidates.end());
    CsvTable snap(header);
    for (Index i = 0; i < cfg.regime().n_x; ++i) {
      std::vector<double> row;
      for (const auto& cand : run.candidates) row.push_back(run.curves.at(cand).values(i, static_cast<Index>(*k)));
      snap.row(std::to_string(i), row);
    }
    out.push_back(csv_artifact("response-snapshot-T" + fmt(t), view, snap.text()));
  }

  std::vector<std::string> header{"time"};
  std::vector<std::string> others;
  for (const auto& cand : run.candidates)
    if (cand != reference) {
      others.push_back(cand);
      header.push_back("relative_error:" + cand);
      header.push_back("cosine_similarity:" + cand);
    }
  std::vector<ComparisonCurve> cmp;
  for (const auto& cand : others) cmp.push_back(compare(run.curves.at(cand), run.curves.at(reference)));
  CsvTable table(header);
  const Index n = run.curves.at(reference).size();
  for (Index k = 0; k < n; ++k) {
    std::vector<std::string> row{fmt(dt_out * static_cast<double>(k))};
    for (const auto& c : cmp) {
      row.push_back(fmt(c.relative_error[static_cast<std::size_t>(k)]));
      row.push_back(fmt(c.cosine_similarity[static_cast<std::size_t>(k)]));
    }
    table.row_strings(row);
  }
  out.push_back(csv_artifact("response-comparison", view, table.text()));

  for (const auto& a : out) s.save(a);
  s.out() << "forcing magnitude " << fmt(run.alpha) << "; reference " << reference << "\n";
  for (std::size_t c = 0; c < others.size(); ++c)
    s.out() << others[c] << " at t=" << fmt(dt_out * static_cast<double>(n - 1))
              << ": relative_error=" << fmt(cmp[c].relative_error.back())
              << " cosine_similarity=" << fmt(cmp[c].cosine_similarity.back()) << "\n";
  return kOk;
}

// ---------------------------------------------------------------- other commands

inline int cmd_calibrate(Session& s, std::optional<Index> n, std::optional<double> f) {
  if (n.has_value() != f.has_value()) throw ConfigError("--N and --F must be given together");
  std::vector<std::pair<Index, double>> jobs;
  const ModelParams p = s.config().regime();
  if (n)
    jobs.emplace_back(*n, *f);
  else
    jobs = {{p.n_x, p.f_x}, {p.n_y(), p.f_y}};
  for (auto [size, forcing] : jobs) {
    if (size < 4) throw ConfigError("--N must be at least 4");
    const Calibration c = s.calibration(size, forcing, true);
    s.out() << "N=" << size << " F=" << fmt(forcing) << " mean=" << fmt(c.mean) << " sigma=" << fmt(c.sigma)
              << "\n";
  }
  return kOk;
}

inline int cmd_build_reduced(Session& s, int order) {
  if (order != 0 && order != 1) throw ConfigError("--order must be 0 or 1");
  const ReducedModel rm = s.reduced(order, true);
  s.out() << "order=" << order << " x_star=" << fmt(rm.x_star[0]) << " z_bar_star=" << fmt(rm.z_bar_star[0])
            << " t_corr=" << fmt(rm.provenance.t_corr) << " l_l_00=" << fmt(rm.l_l(0, 0))
            << (order == 0 ? " (l_l unused)" : "") << "\n";
  return kOk;
}

inline int cmd_simulate(Session& s, const std::string& system) {
  const ExperimentConfig& cfg = s.config();
  Matrix slow;
  double dt_rec = cfg.num("simulate.dt_record");
  s.with_system(system, [&](const auto& field, NodeLayout layout, double dt, std::uint64_t idx) {
    Rng rng(Rng::derive(cfg.seed(), stream::simulate + idx));
    StateVector x = random_state(field.dimension(), rng, InitialDraw::standard_normal);
    const double spinup = cfg.num("simulate.spinup");
    if (spinup > 0.0) x = integrate_final(field, std::move(x), 0.0, spinup, dt);
    slow = integrate(field, ForcingProfile::none(), {}, std::move(x), 0.0, cfg.num("simulate.run_length"), dt, dt_rec)
               .samples()
               .topRows(layout.n_x);
  });
  s.save(csv_artifact("trajectory-" + system, s.command_view("simulate", {{"system", system}}), curve_csv(slow, dt_rec)));
  return kOk;
}

inline std::string csv_safe(std::string text) {
  for (char& c : text)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return text;
}

inline int cmd_sweep(Session& s) {
  const ExperimentConfig& base = s.config();
  CsvTable table({"f_x", "f_y", "lambda", "epsilon", "status", "js_reduced0", "em_reduced0", "js_reduced1",
                  "em_reduced1"});
  const Index limit = base.count("sweep.limit");
  Index done = 0;
  for (double fx : base.nums("sweep.f_x"))
    for (double fy : base.nums("sweep.f_y"))
      for (double lam : base.nums("sweep.lambda"))
        for (double eps : base.nums("sweep.epsilon")) {
          if (limit > 0 && done >= limit) continue;
          ++done;
          ExperimentConfig cfg = base;
          ModelParams p = cfg.regime();
          p.f_x = fx;
          p.f_y = fy;
          p.lambda_x = p.lambda_y = lam;
          p.epsilon = eps;
          cfg.set_regime(p);
          Session sub(cfg, s.store().root(), s.out(), s.log());
          std::vector<std::string> row{fmt(fx), fmt(fy), fmt(lam), fmt(eps)};
          s.log() << "sweep regime " << regime_label(p) << "\n";
          try {
            const StatsResult r = compute_stats(sub, system_names(), false);
            row.push_back("ok");
            for (const auto& [name, js, em] : r.metrics) {
              row.push_back(fmt(js));
              row.push_back(fmt(em));
            }
          } catch (const NumericalFailure& e) {
            row.push_back(csv_safe(std::string("numerical_failure: ") + e.what()));
            row.insert(row.end(), 4, "");
          }
          table.row_strings(row);
        }
  s.save(csv_artifact("sweep", s.command_view("sweep"), table.text()));
  s.out() << table.text();
  return kOk;
}

inline int cmd_verify(const ArtifactStore& store, std::ostream& out) {
  int failures = 0;
  const auto names = store.list();
  for (const auto& name : names) {
    const VerifyResult r = verify_artifact_text(name, *store.read(name));
    out << (r.ok ? "ok   " : "FAIL ") << name << (r.ok ? "" : ": " + r.message) << "\n";
    if (!r.ok) ++failures;
  }
  out << names.size() - static_cast<std::size_t>(failures) << " of " << names.size() << " artifacts verified\n";
  return failures ? kStoreConflict : kOk;
}

// ---------------------------------------------------------------- entry point

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Reduced models of the two-scale Lorenz '96 system", "l96"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON config file; missing keys take their defaults");
  app.add_option("--seed", seed, "RNG seed (overrides rng.seed)");
  app.add_option("--out", out_dir, "artifact directory")->capture_default_str();
  app.add_option("--regime", overrides, "KEY=VAL override; KEY is a regime field, 'lambda', or a dotted path")
      ->expected(1, CLI::detail::expected_max_vector_size);

  auto* calibrate_cmd = app.add_subcommand("calibrate", "long-run mean and std of the uncoupled system");
  std::optional<Index> cal_n;
  std::optional<double> cal_f;
  calibrate_cmd->add_option("--N", cal_n, "number of nodes");
  calibrate_cmd->add_option("--F", cal_f, "forcing");

  auto* reduced_cmd = app.add_subcommand("build-reduced", "build the closure and store the reduced model");
  int order = 1;
  reduced_cmd->add_option("--order", order, "0 or 1")->capture_default_str();

  auto* simulate_cmd = app.add_subcommand("simulate", "record a slow-variable trajectory");
  std::string sim_system;
  simulate_cmd->add_option("--system", sim_system, "multiscale, reduced0 or reduced1 (default simulate.system)");

  auto* stats_cmd = app.add_subcommand("stats", "DDFs, autocorrelations and distance metrics");
  std::string stats_system = "all";
  stats_cmd->add_option("--system", stats_system, "all, or a comma list of systems")->capture_default_str();

  auto* response_cmd = app.add_subcommand("response", "mean response, ideal and quasi-Gaussian operators");
  std::string resp_systems, resp_ops, resp_forcing;
  response_cmd->add_option("--system", resp_systems, "comma list of systems (default response.systems)");
  response_cmd->add_option("--operator", resp_ops, "comma list of direct, ideal, quasi_gaussian");
  response_cmd->add_option("--forcing", resp_forcing, "heaviside or ramp");

  auto* sweep_cmd = app.add_subcommand("sweep", "metrics over the regime catalog");
  auto* verify_cmd = app.add_subcommand("verify", "re-hash every artifact in the output directory");
  auto* show_cmd = app.add_subcommand("show-config", "print the effective config");

  std::vector<const char*> argv{"l96"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    ExperimentConfig cfg;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot read config file " + config_path);
      std::ostringstream ss;
      ss << in.rdbuf();
      cfg = ExperimentConfig::parse(ss.str());
    }
    if (seed) cfg.set_seed(*seed);
    for (const auto& o : overrides) cfg.apply_override(o);
    const auto list_json = [](const std::string& text) {
      Json a = Json::array();
      for (const auto& item : parse_list(text)) a.push_back(item);
      return a.dump();
    };
    if (!resp_systems.empty()) cfg.apply_override("response.systems=" + list_json(resp_systems));
    if (!resp_ops.empty()) cfg.apply_override("response.operators=" + list_json(resp_ops));
    if (!resp_forcing.empty()) cfg.apply_override("response.forcing.kind=" + Json(resp_forcing).dump());
    if (!sim_system.empty()) cfg.apply_override("simulate.system=" + Json(sim_system).dump());

    Session session(cfg, out_dir, out, err);
    if (*calibrate_cmd) return cmd_calibrate(session, cal_n, cal_f);
    if (*reduced_cmd) return cmd_build_reduced(session, order);
    if (*simulate_cmd) return cmd_simulate(session, cfg.text("simulate.system"));
    if (*stats_cmd) return cmd_stats(session, stats_system);
    if (*response_cmd) return cmd_response(session);
    if (*sweep_cmd) return cmd_sweep(session);
    if (*verify_cmd) return cmd_verify(session.store(), out);
    if (*show_cmd) {
      out << cfg.emit();
      return kOk;
    }
    return kConfigError;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const InvalidArgument& e) {
    err << "invalid setting: " << e.what() << "\n";
    return kConfigError;
  } catch (const Json::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DegenerateRegime& e) {
    err << "numerical failure (degenerate regime): " << e.what() << "\n";
    return kNumericalFailure;
  } catch (const NotApplicable& e) {
    err << "numerical failure (not applicable): " << e.what() << "\n";
    return kNumericalFailure;
  } catch (const NumericalFailure& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumericalFailure;
  } catch (const StoreConflict& e) {
    err << "store conflict: " << e.what() << "\n";
    return kStoreConflict;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kOtherError;
  }
}

}  // namespace l96::cli
