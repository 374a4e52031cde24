#pragma once

// First-order linear-coupling closure. The fast mean state is expanded about
// the statistical average slow state x*,
//   zbar(x) ~ z* + CC L_x (x - x*),   CC = (int_0^T C(s) ds) C(0)^-1,
// with C(s) the lagged covariance of the fast limiting system frozen at x*.
// The reduced model then carries L_L = L_y CC L_x.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "l96/errors.hpp"
#include "l96/lorenz96.hpp"
#include "l96/ode.hpp"
#include "l96/reduced_model.hpp"
#include "l96/rng.hpp"
#include "l96/statistics.hpp"

namespace l96 {

struct XStarEstimate {
  StateVector x_star;       // uniform vector at `value`
  double value = 0.0;       // node-and-time average
  StateVector node_means;   // per-node time averages
  double standard_error = 0.0;  // batch-means standard error of one node mean
  double slow_std = 0.0;    // pooled standard deviation of the slow variables
  bool mixing = true;       // false when node means disagree by more than 5 standard errors
};

// Recording stride (in steps) that gives roughly `target` time units.
inline double sampling_interval(double dt, double target = 0.1) {
  return dt * std::max(1.0, std::round(target / dt));
}

// Time average of the slow state of the full two-scale system.
inline XStarEstimate estimate_x_star(const ModelParams& p, const Calibration& cal_x, const Calibration& cal_y,
                                     double run_length, double spinup, std::uint64_t seed,
                                     int batches = 20) {
  const TwoScaleField field(p, cal_x, cal_y);
  const double dt = p.epsilon / 10.0;
  const double dt_rec = sampling_interval(dt);
  Rng rng(seed);
  StateVector s = random_state(p.dimension(), rng, InitialDraw::standard_normal);
  if (spinup > 0.0) s = integrate_final(field, std::move(s), 0.0, spinup, dt);

  const double batch_len = run_length / batches;
  Matrix batch_means = Matrix::Zero(p.n_x, batches);
  std::vector<double> batch_counts(static_cast<std::size_t>(batches), 0.0);
  ScalarMoments pooled;
  integrate_observed(field, ForcingProfile::none(), {}, std::move(s), spinup, spinup + run_length, dt, dt_rec,
                     [&](double t, const StateVector& x) {
                       if (t == spinup) return;
                       const int b = std::min(batches - 1, static_cast<int>((t - spinup) / batch_len));
                       batch_means.col(b) += x.head(p.n_x);
                       batch_counts[static_cast<std::size_t>(b)] += 1.0;
                       for (Index i = 0; i < p.n_x; ++i) pooled.add(x[i]);
                     });
  for (int b = 0; b < batches; ++b) {
    if (batch_counts[static_cast<std::size_t>(b)] == 0.0) throw InvalidArgument("x* run too short for batching");
    batch_means.col(b) /= batch_counts[static_cast<std::size_t>(b)];
  }

  XStarEstimate est;
  est.node_means = batch_means.rowwise().mean();
  est.value = pooled.mean();
  est.slow_std = pooled.stddev();
  double se = 0.0;
  for (Index i = 0; i < p.n_x; ++i) {
    const double m = est.node_means[i];
    const double var = (batch_means.row(i).array() - m).square().sum() / (batches - 1);
    se += std::sqrt(var / batches);
  }
  est.standard_error = se / static_cast<double>(p.n_x);
  const double spread = (est.node_means.array() - est.value).abs().maxCoeff();
  est.mixing = spread <= 5.0 * est.standard_error;
  est.x_star = StateVector::Constant(p.n_x, est.value);
  return est;
}

// Time average of the fast limiting system at x*, symmetrized over nodes.
inline StateVector estimate_z_bar_star(const ModelParams& p, const Calibration& cal_y, const StateVector& x_star,
                                       double run_length, double spinup, std::uint64_t seed, double dt = 0.1) {
  const FastLimitingField field(p, cal_y, x_star);
  Rng rng(seed);
  StateVector z = random_state(p.n_y(), rng, InitialDraw::standard_normal);
  if (spinup > 0.0) z = integrate_final(field, std::move(z), 0.0, spinup, dt);
  ScalarMoments pooled;
  integrate_observed(field, ForcingProfile::none(), {}, std::move(z), spinup, spinup + run_length, dt, dt,
                     [&](double t, const StateVector& y) {
                       if (t == spinup) return;
                       for (Index k = 0; k < y.size(); ++k) pooled.add(y[k]);
                     });
  return StateVector::Constant(p.n_y(), pooled.mean());
}

struct LaggedCorrelation {
  double dt_lag = 0.0;
  std::vector<Matrix> values;  // values[k] = C(k * dt_lag)
  bool centered = true;
  StateVector center;          // subtracted mean (zero when uncentered)
  double run_length = 0.0;

  double t_corr() const { return dt_lag * static_cast<double>(values.size() - 1); }
  double lag(std::size_t k) const { return dt_lag * static_cast<double>(k); }
};

// tr C(k)/tr C(0) for k = 0..max_lag of an already centered (dim x time) series.
inline std::vector<double> normalized_trace_autocorrelation(const Matrix& series, Index max_lag) {
  const Index n = series.cols();
  if (n <= max_lag) throw InvalidArgument("series shorter than the requested maximum lag");
  std::vector<double> rho(static_cast<std::size_t>(max_lag + 1));
  double c0 = 0.0;
  for (Index lag = 0; lag <= max_lag; ++lag) {
    const double tr = (series.leftCols(n - lag).array() * series.rightCols(n - lag).array()).sum() /
                      static_cast<double>(n - lag);
    if (lag == 0) c0 = tr;
    rho[static_cast<std::size_t>(lag)] = tr / c0;
  }
  return rho;
}

// First lag after which |rho| stays below `threshold` through the end of
// the probed window; the last lag if it never settles.
inline Index correlation_cutoff(const std::vector<double>& rho, double threshold) {
  Index cut = static_cast<Index>(rho.size()) - 1;
  for (Index k = cut; k >= 1; --k) {
    if (std::abs(rho[static_cast<std::size_t>(k)]) >= threshold) break;
    cut = k;
  }
  return cut;
}

// Replaces m by its average over simultaneous cyclic shifts of rows and
// columns by multiples of `block`, i.e. projects onto block-circulant form.
inline Matrix block_circulant_average(const Matrix& m, Index block) {
  const Index n = m.rows();
  if (m.cols() != n || block < 1 || n % block != 0) throw InvalidArgument("bad block-circulant shape");
  const Index shifts = n / block;
  Matrix out(n, n);
  for (Index a = 0; a < block; ++a) {
    for (Index b = 0; b < n; ++b) {
      double sum = 0.0;
      for (Index r = 0; r < shifts; ++r) sum += m(a + r * block, (b + r * block) % n);
      const double mean = sum / static_cast<double>(shifts);
      for (Index r = 0; r < shifts; ++r) out(a + r * block, (b + r * block) % n) = mean;
    }
  }
  return out;
}

// C(k dt_lag) = mean_t (z(t + k) - c)(z(t) - c)^T for k = 0..max_lag.
inline LaggedCorrelation lagged_correlation_from_series(Matrix series, double dt_lag, Index max_lag,
                                                        bool centered,
                                                        std::optional<StateVector> center = std::nullopt) {
  const Index n = series.cols();
  if (n <= max_lag) throw InvalidArgument("series shorter than the requested maximum lag");
  LaggedCorrelation out;
  out.dt_lag = dt_lag;
  out.centered = centered;
  out.run_length = dt_lag * static_cast<double>(n - 1);
  if (centered) {
    out.center = center ? *center : StateVector(series.rowwise().mean());
    if (out.center.size() != series.rows()) throw InvalidArgument("center has the wrong dimension");
    series.colwise() -= out.center;
  } else {
    out.center = StateVector::Zero(series.rows());
  }
  out.values.reserve(static_cast<std::size_t>(max_lag + 1));
  for (Index lag = 0; lag <= max_lag; ++lag) {
    Matrix c = series.rightCols(n - lag) * series.leftCols(n - lag).transpose();
    c /= static_cast<double>(n - lag);
    out.values.push_back(std::move(c));
  }
  return out;
}

struct CorrelationOptions {
  double run_length = 1.0e4;  // fast time units
  double spinup = 100.0;
  double dt = 0.1;            // integration step in fast time
  double dt_lag = 0.1;
  std::optional<double> t_corr;  // fixed cutoff; adaptive when empty
  double cutoff_threshold = 0.01;
  double cutoff_cap = 50.0;
  bool centered = true;
  bool symmetrize = true;  // pool C(s) over cyclic node shifts
};

inline Matrix record_fast_series(const ModelParams& p, const Calibration& cal_y, const StateVector& x_star,
                                 double run_length, double spinup, double dt, double dt_lag, std::uint64_t seed) {
  const FastLimitingField field(p, cal_y, x_star);
  Rng rng(seed);
  StateVector z = random_state(p.n_y(), rng, InitialDraw::standard_normal);
  if (spinup > 0.0) z = integrate_final(field, std::move(z), 0.0, spinup, dt);
  return integrate(field, ForcingProfile::none(), {}, std::move(z), 0.0, run_length, dt, dt_lag).samples();
}

// Lagged covariance of the fast limiting system at x*, centered on z*.
// Without a fixed t_corr the cutoff is the first lag beyond which the
// normalized trace autocorrelation stays below the threshold (capped).
inline LaggedCorrelation lagged_correlation(const ModelParams& p, const Calibration& cal_y,
                                            const StateVector& x_star, const StateVector& z_bar_star,
                                            const CorrelationOptions& opt, std::uint64_t seed) {
  if (opt.t_corr && opt.run_length < 100.0 * *opt.t_corr)
    throw InvalidArgument("correlation run must be at least 100 T_corr long");
  Matrix series = record_fast_series(p, cal_y, x_star, opt.run_length, opt.spinup, opt.dt, opt.dt_lag, seed);
  Index max_lag = 0;
  if (opt.t_corr) {
    max_lag = static_cast<Index>(std::llround(*opt.t_corr / opt.dt_lag));
  } else {
    const Index cap = static_cast<Index>(std::llround(opt.cutoff_cap / opt.dt_lag));
    const Matrix centered = series.colwise() - z_bar_star;
    max_lag = correlation_cutoff(normalized_trace_autocorrelation(centered, cap), opt.cutoff_threshold);
    if (opt.run_length < 100.0 * static_cast<double>(max_lag) * opt.dt_lag)
      throw InvalidArgument("correlation run must be at least 100 T_corr long (T_corr=" +
                            std::to_string(static_cast<double>(max_lag) * opt.dt_lag) + ")");
  }
  LaggedCorrelation corr =
      lagged_correlation_from_series(std::move(series), opt.dt_lag, max_lag, opt.centered,
                                     opt.centered ? std::optional<StateVector>(z_bar_star) : std::nullopt);
  if (opt.symmetrize)
    for (Matrix& c : corr.values) c = block_circulant_average(c, p.j);
  return corr;
}

// Trapezoidal integral of C(s) over the whole lag grid.
inline Matrix integrated_correlation(const LaggedCorrelation& corr) {
  if (corr.values.empty()) throw InvalidArgument("empty lagged correlation");
  Matrix sum = Matrix::Zero(corr.values.front().rows(), corr.values.front().cols());
  const std::size_t last = corr.values.size() - 1;
  for (std::size_t k = 0; k <= last; ++k) sum += (k == 0 || k == last ? 0.5 : 1.0) * corr.values[k];
  return sum * corr.dt_lag;
}

inline constexpr double kMaxCovarianceCondition = 1e8;

// Inverse of a symmetric covariance through its eigendecomposition; refuses
// (singular, indefinite or condition number above the limit) matrices.
inline Matrix checked_covariance_inverse(const Matrix& cov, const std::string& what,
                                         double max_condition = kMaxCovarianceCondition) {
  const Matrix sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) throw DegenerateRegime(what + ": eigendecomposition failed");
  const auto& ev = eig.eigenvalues();
  const double lo = ev.minCoeff(), hi = ev.maxCoeff();
  if (!(hi > 0.0) || !(lo > 0.0) || hi / lo >= max_condition)
    throw DegenerateRegime(what + " is singular or ill-conditioned (eigenvalues in [" + std::to_string(lo) + ", " +
                           std::to_string(hi) + "])");
  return eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

inline std::string regime_label(const ModelParams& p) {
  return "F_x=" + std::to_string(p.f_x) + " F_y=" + std::to_string(p.f_y) + " lambda_x=" +
         std::to_string(p.lambda_x) + " lambda_y=" + std::to_string(p.lambda_y) + " eps=" + std::to_string(p.epsilon);
}

// CC = (int C) C(0)^-1.
inline Matrix closure_matrix(const LaggedCorrelation& corr, const std::string& regime = "") {
  const Matrix c0_inv = checked_covariance_inverse(corr.values.front(), "C(0) " + regime);
  return integrated_correlation(corr) * c0_inv;
}

inline ReducedModel build_reduced(const ModelParams& p, int order, const LaggedCorrelation& corr,
                                  const StateVector& x_star, const StateVector& z_bar_star) {
  if (order != 0 && order != 1) throw InvalidArgument("reduced model order must be 0 or 1");
  if (x_star.size() != p.n_x || z_bar_star.size() != p.n_y())
    throw InvalidArgument("x* / z* do not match the regime dimensions");
  ReducedModel rm;
  rm.order = order;
  rm.x_star = x_star;
  rm.z_bar_star = z_bar_star;
  rm.c_mat = closure_matrix(corr, "[" + regime_label(p) + "]");
  const CouplingMatrices cm = coupling_matrices(p);
  rm.l_l = cm.l_y * rm.c_mat * cm.l_x;
  if (!rm.c_mat.allFinite() || !rm.l_l.allFinite()) throw NumericalFailure("closure matrix is not finite");
  rm.provenance.t_corr = corr.t_corr();
  rm.provenance.dt_lag = corr.dt_lag;
  rm.provenance.centered = corr.centered;
  rm.provenance.correlation_run = corr.run_length;
  return rm;
}

// Largest deviation of a matrix from circulant structure (each wrapped
// diagonal replaced by its mean), relative to its largest entry.
inline double circulant_deviation(const Matrix& m) {
  const Index n = m.rows();
  if (m.cols() != n) throw InvalidArgument("circulant check needs a square matrix");
  const double scale = m.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  double worst = 0.0;
  for (Index d = 0; d < n; ++d) {
    double mean = 0.0;
    for (Index j = 0; j < n; ++j) mean += m((j + d) % n, j);
    mean /= static_cast<double>(n);
    for (Index j = 0; j < n; ++j) worst = std::max(worst, std::abs(m((j + d) % n, j) - mean));
  }
  return worst / scale;
}

struct ClosureOptions {
  double x_star_run = 5000.0;  // slow time units
  double x_star_spinup = 100.0;
  double z_bar_run = 1.0e4;    // fast time units
  double z_bar_spinup = 100.0;
  CorrelationOptions correlation;
};

struct ClosureBuild {
  XStarEstimate x_star;
  ReducedModel first_order;

  ReducedModel order(int k) const {
    ReducedModel rm = first_order;
    rm.order = k;
    return rm;
  }
};

// Full pipeline: x* from the two-scale system, z* and C(s) from the fast
// limiting system at x*, then CC and L_L.
inline ClosureBuild build_closure(const ModelParams& p, const Calibration& cal_x, const Calibration& cal_y,
                                  const ClosureOptions& opt, std::uint64_t seed) {
  ClosureBuild out;
  out.x_star = estimate_x_star(p, cal_x, cal_y, opt.x_star_run, opt.x_star_spinup, Rng::derive(seed, 0));
  const StateVector z_star = estimate_z_bar_star(p, cal_y, out.x_star.x_star, opt.z_bar_run, opt.z_bar_spinup,
                                                 Rng::derive(seed, 1), opt.correlation.dt);
  const LaggedCorrelation corr =
      lagged_correlation(p, cal_y, out.x_star.x_star, z_star, opt.correlation, Rng::derive(seed, 2));
  out.first_order = build_reduced(p, 1, corr, out.x_star.x_star, z_star);
  out.first_order.provenance.x_star_run = opt.x_star_run;
  out.first_order.provenance.z_bar_run = opt.z_bar_run;
  return out;
}

}  // namespace l96
