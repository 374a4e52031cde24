#pragma once

// Mean-state response of the slow variables to small external forcing:
// direct ensemble experiments, the ideal (least-squares) response operator,
// the quasi-Gaussian fluctuation-dissipation operator, convolution of an
// operator with a forcing history, and curve comparison.
//
// Response operators exploit translation invariance: the stored vector at
// each time is the response of every node to forcing at node 0, and the full
// N x N operator is its circulant completion.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "l96/closure.hpp"
#include "l96/errors.hpp"
#include "l96/lorenz96.hpp"
#include "l96/ode.hpp"
#include "l96/parallel.hpp"
#include "l96/statistics.hpp"

namespace l96 {

// Node structure used to rotate states: n_x slow nodes, each with j fast
// variables (j = 0 for slow-only states).
struct NodeLayout {
  Index n_x = 20;
  Index j = 0;

  Index dimension() const { return n_x * (1 + j); }
};

struct Ensemble {
  Matrix members;  // one member per column
  std::string regime;
  double spacing = 0.0;
  Index base_count = 0;
  Index rotation_multiplicity = 1;  // member b * multiplicity + r is base b rotated by r

  Index size() const { return members.cols(); }
  Index dimension() const { return members.rows(); }
};

// Samples `count` states every `spacing` time units along one trajectory
// after `spinup`, then (with `augment`) appends every cyclic node rotation of
// each sample.
template <VectorField Field>
Ensemble draw_ensemble(const Field& field, NodeLayout layout, StateVector start, Index count, double spacing,
                       double spinup, double dt, bool augment = true, std::string regime = "") {
  if (count < 1) throw InvalidArgument("ensemble needs at least one member");
  if (start.size() != field.dimension() || layout.dimension() != field.dimension())
    throw InvalidArgument("ensemble layout does not match the field dimension");
  StateVector x = std::move(start);
  if (spinup > 0.0) x = integrate_final(field, std::move(x), 0.0, spinup, dt);
  Matrix base(field.dimension(), count);
  base.col(0) = x;
  for (Index b = 1; b < count; ++b) {
    x = integrate_final(field, std::move(x), 0.0, spacing, dt);
    base.col(b) = x;
  }
  Ensemble e;
  e.regime = std::move(regime);
  e.spacing = spacing;
  e.base_count = count;
  e.rotation_multiplicity = augment ? layout.n_x : 1;
  e.members.resize(field.dimension(), count * e.rotation_multiplicity);
  for (Index b = 0; b < count; ++b)
    for (Index r = 0; r < e.rotation_multiplicity; ++r)
      e.members.col(b * e.rotation_multiplicity + r) = rotate_nodes(base.col(b), layout.n_x, layout.j, r);
  return e;
}

// Ensemble mean of slow-state differences, values(:, k) at t = k * dt_out.
struct MeanResponseCurve {
  double dt_out = 0.0;
  Matrix values;  // N_x x time samples
  ForcingProfile forcing;
  Index member_count = 0;
  Index excluded = 0;

  Index size() const { return values.cols(); }
  double time(Index k) const { return dt_out * static_cast<double>(k); }
};

struct ResponseSettings {
  double horizon = 5.0;  // T
  double dt = 0.1;       // integration step
  double dt_out = 0.1;
  Slice slow{0, 20};
  double max_excluded_fraction = 1e-3;
};

namespace detail {

inline Index output_samples(const ResponseSettings& s) {
  const auto steps = whole_steps(s.horizon, s.dt_out);
  if (!steps || *steps < 1) throw InvalidArgument("response horizon must be a positive multiple of dt_out");
  return static_cast<Index>(*steps) + 1;
}

template <VectorField Field>
Matrix slow_history(const Field& field, const ForcingProfile& forcing, const StateVector& x0,
                    const ResponseSettings& s, Index samples) {
  Matrix out(s.slow.count, samples);
  Index k = 0;
  integrate_observed(field, forcing, s.slow, x0, 0.0, s.horizon, s.dt, s.dt_out,
                     [&](double, const StateVector& x) { out.col(k++) = x.segment(s.slow.offset, s.slow.count); });
  return out;
}

}  // namespace detail

// One curve per forcing; all share the same unperturbed runs. A member whose
// unperturbed or any perturbed run blows up is dropped from every curve.
template <VectorField Field>
std::vector<MeanResponseCurve> mean_responses(const Field& field, const Ensemble& ensemble,
                                              const std::vector<ForcingProfile>& forcings,
                                              const ResponseSettings& s) {
  if (forcings.empty()) throw InvalidArgument("no forcings given");
  if (ensemble.dimension() != field.dimension()) throw InvalidArgument("ensemble does not match the field");
  for (const auto& f : forcings)
    if (f.kind() != ForcingKind::none && f.direction().size() != s.slow.count)
      throw InvalidArgument("forcing direction does not match the slow slice");
  const Index samples = detail::output_samples(s);
  const std::size_t nf = forcings.size();
  const Index members = ensemble.size();
  const std::size_t blocks = static_cast<std::size_t>(std::min<Index>(members, 64));

  struct Partial {
    std::vector<Matrix> sums;
    Index used = 0;
    Index excluded = 0;
  };
  std::vector<Partial> partial(blocks);
  parallel_blocks(blocks, [&](std::size_t b) {
    Partial& acc = partial[b];
    acc.sums.assign(nf, Matrix::Zero(s.slow.count, samples));
    const Index lo = members * static_cast<Index>(b) / static_cast<Index>(blocks);
    const Index hi = members * static_cast<Index>(b + 1) / static_cast<Index>(blocks);
    std::vector<Matrix> diffs(nf);
    for (Index m = lo; m < hi; ++m) {
      const StateVector x0 = ensemble.members.col(m);
      try {
        const Matrix base = detail::slow_history(field, ForcingProfile::none(), x0, s, samples);
        for (std::size_t f = 0; f < nf; ++f)
          diffs[f] = detail::slow_history(field, forcings[f], x0, s, samples) - base;
      } catch (const IntegrationBlowup&) {
        ++acc.excluded;
        continue;
      }
      for (std::size_t f = 0; f < nf; ++f) acc.sums[f] += diffs[f];
      ++acc.used;
    }
  });

  std::vector<Matrix> total(nf, Matrix::Zero(s.slow.count, samples));
  Index used = 0, excluded = 0;
  for (const auto& p : partial) {
    for (std::size_t f = 0; f < nf; ++f) total[f] += p.sums[f];
    used += p.used;
    excluded += p.excluded;
  }
  if (static_cast<double>(excluded) > s.max_excluded_fraction * static_cast<double>(members) || used == 0)
    throw NumericalFailure(std::to_string(excluded) + " of " + std::to_string(members) +
                           " ensemble members blew up; exclusion limit exceeded");
  std::vector<MeanResponseCurve> out(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    out[f].dt_out = s.dt_out;
    out[f].values = total[f] / static_cast<double>(used);
    out[f].forcing = forcings[f];
    out[f].member_count = used;
    out[f].excluded = excluded;
  }
  return out;
}

template <VectorField Field>
MeanResponseCurve mean_response(const Field& field, const Ensemble& ensemble, const ForcingProfile& forcing,
                                const ResponseSettings& s) {
  return mean_responses(field, ensemble, std::vector<ForcingProfile>{forcing}, s).front();
}

// fraction * ensemble average of |f_slow(x)|.
template <VectorField Field>
double forcing_magnitude(const Field& field, const Ensemble& ensemble, double fraction, Slice slow) {
  if (ensemble.size() == 0) throw InvalidArgument("empty ensemble");
  StateVector dx(field.dimension());
  double sum = 0.0;
  for (Index m = 0; m < ensemble.size(); ++m) {
    field(0.0, ensemble.members.col(m), dx);
    sum += dx.segment(slow.offset, slow.count).norm();
  }
  return fraction * (sum / static_cast<double>(ensemble.size()));
}

enum class OperatorKind { ideal, quasi_gaussian };

inline const char* to_string(OperatorKind k) { return k == OperatorKind::ideal ? "ideal" : "quasi_gaussian"; }

// Sampled response operator. For `ideal` the stored vectors are the
// Heaviside (step) response per unit amplitude, i.e. the time integral of the
// impulse kernel; for `quasi_gaussian` they are the impulse kernel itself.
struct ResponseOperator {
  OperatorKind kind = OperatorKind::ideal;
  double dt = 0.1;
  Matrix kernel;  // N x time samples, response of each node to node 0

  Index nodes() const { return kernel.rows(); }
  Index size() const { return kernel.cols(); }
  double time(Index k) const { return dt * static_cast<double>(k); }

  // Circulant completion at sample k: entry (i, j) = kernel((i - j) mod N, k).
  Matrix full(Index k) const {
    const Index n = nodes();
    Matrix m(n, n);
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < n; ++i) m(i, j) = kernel((i - j + n) % n, k);
    return m;
  }
};

// Least-squares slope (with intercept) of the response against amplitude at
// every node and time, from Heaviside probes at node 0.
template <VectorField Field>
ResponseOperator ideal_response(const Field& field, const Ensemble& ensemble, const std::vector<double>& amplitudes,
                                const ResponseSettings& s, std::vector<MeanResponseCurve>* probes_out = nullptr) {
  if (amplitudes.size() < 2) throw InvalidArgument("ideal response needs at least two probe amplitudes");
  double mean_a = 0.0;
  for (double a : amplitudes) mean_a += a;
  mean_a /= static_cast<double>(amplitudes.size());
  double saa = 0.0, scale = 0.0;
  for (double a : amplitudes) {
    saa += (a - mean_a) * (a - mean_a);
    scale += a * a;
  }
  if (!(saa > 1e-12 * scale)) throw InvalidArgument("probe amplitudes are rank deficient (all equal)");

  const StateVector e0 = unit_vector(s.slow.count, 0);
  std::vector<ForcingProfile> probes;
  for (double a : amplitudes) probes.push_back(ForcingProfile::heaviside(e0, a));
  std::vector<MeanResponseCurve> curves = mean_responses(field, ensemble, probes, s);

  Matrix mean_r = Matrix::Zero(curves.front().values.rows(), curves.front().values.cols());
  for (const auto& c : curves) mean_r += c.values;
  mean_r /= static_cast<double>(curves.size());
  Matrix sar = Matrix::Zero(mean_r.rows(), mean_r.cols());
  for (std::size_t k = 0; k < curves.size(); ++k) sar += (amplitudes[k] - mean_a) * (curves[k].values - mean_r);

  ResponseOperator op;
  op.kind = OperatorKind::ideal;
  op.dt = s.dt_out;
  op.kernel = sar / saa;
  if (probes_out) *probes_out = std::move(curves);
  return op;
}

// R(t) = <x(tau + t) (x(tau) - xbar)^T> Sigma^-1 from a long unperturbed
// (nodes x time) series sampled every dt_sample, projected onto circulant
// form; lags 0..horizon in steps of dt_lag.
inline ResponseOperator quasi_gaussian_operator(const Matrix& series, double dt_sample, double horizon,
                                                double dt_lag, double max_condition = kMaxCovarianceCondition) {
  const auto stride = detail::whole_steps(dt_lag, dt_sample);
  const auto lags = detail::whole_steps(horizon, dt_lag);
  if (!stride || *stride < 1) throw InvalidArgument("dt_lag must be a multiple of the sampling interval");
  if (!lags) throw InvalidArgument("horizon must be a multiple of dt_lag");
  const Index n = series.cols();
  const Index max_shift = static_cast<Index>(*lags * *stride);
  if (n <= 10 * max_shift) throw InvalidArgument("series too short for the requested response horizon");
  const Index nodes = series.rows();

  const StateVector mean = series.rowwise().mean();
  const Matrix centered = series.colwise() - mean;
  const Matrix sigma = (centered * centered.transpose()) / static_cast<double>(n);
  Matrix sigma_inv;
  try {
    sigma_inv = checked_covariance_inverse(sigma, "covariance Sigma", max_condition);
  } catch (const DegenerateRegime& e) {
    throw NotApplicable(std::string("quasi-Gaussian response is not applicable: ") + e.what());
  }

  ResponseOperator op;
  op.kind = OperatorKind::quasi_gaussian;
  op.dt = dt_lag;
  op.kernel.resize(nodes, static_cast<Index>(*lags) + 1);
  for (Index k = 0; k <= static_cast<Index>(*lags); ++k) {
    const Index shift = k * static_cast<Index>(*stride);
    const Matrix c = centered.rightCols(n - shift) * centered.leftCols(n - shift).transpose() /
                     static_cast<double>(n - shift);
    const Matrix r = c * sigma_inv;
    for (Index d = 0; d < nodes; ++d) {
      double sum = 0.0;
      for (Index j = 0; j < nodes; ++j) sum += r((j + d) % nodes, j);
      op.kernel(d, k) = sum / static_cast<double>(nodes);
    }
  }
  return op;
}

// Impulse-response kernel: stored directly for quasi-Gaussian operators,
// centered time differences of the step response for ideal ones.
inline Matrix impulse_kernel(const ResponseOperator& op) {
  if (op.kind == OperatorKind::quasi_gaussian) return op.kernel;
  const Index n = op.size();
  if (n < 2) throw InvalidArgument("operator needs at least two time samples");
  Matrix d(op.nodes(), n);
  d.col(0) = (op.kernel.col(1) - op.kernel.col(0)) / op.dt;
  d.col(n - 1) = (op.kernel.col(n - 1) - op.kernel.col(n - 2)) / op.dt;
  for (Index k = 1; k + 1 < n; ++k) d.col(k) = (op.kernel.col(k + 1) - op.kernel.col(k - 1)) / (2.0 * op.dt);
  return d;
}

namespace detail {

// (M v)_i with M the circulant completion of `column`.
inline StateVector circulant_apply(const StateVector& column, const StateVector& v) {
  const Index n = column.size();
  StateVector out = StateVector::Zero(n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) out[i] += column[(i - j + n) % n] * v[j];
  return out;
}

}  // namespace detail

// delta<x>(t) = int_0^t R(t - s) delta_f(s) ds by the trapezoidal rule on the
// operator's grid. An ideal operator under step forcing is used directly.
inline MeanResponseCurve convolve(const ResponseOperator& op, const ForcingProfile& forcing, double horizon) {
  const auto steps = detail::whole_steps(horizon, op.dt);
  if (!steps || static_cast<Index>(*steps) >= op.size())
    throw InvalidArgument("operator does not cover the requested horizon");
  const Index n = static_cast<Index>(*steps) + 1;
  MeanResponseCurve out;
  out.dt_out = op.dt;
  out.forcing = forcing;
  out.values = Matrix::Zero(op.nodes(), n);
  if (!forcing.active()) return out;
  if (forcing.direction().size() != op.nodes()) throw InvalidArgument("forcing does not match the operator");
  const StateVector v = forcing.magnitude() * forcing.direction();

  if (op.kind == OperatorKind::ideal && forcing.kind() == ForcingKind::heaviside) {
    const auto delay = detail::whole_steps(forcing.onset(), op.dt);
    if (!delay) throw InvalidArgument("forcing onset must lie on the operator grid");
    for (Index k = static_cast<Index>(*delay); k < n; ++k)
      out.values.col(k) = detail::circulant_apply(op.kernel.col(k - static_cast<Index>(*delay)), v);
    return out;
  }

  const Matrix kernel = impulse_kernel(op);
  for (Index k = 1; k < n; ++k) {
    StateVector column = StateVector::Zero(op.nodes());
    for (Index m = 0; m <= k; ++m) {
      const double w = (m == 0 || m == k) ? 0.5 : 1.0;
      const double g = forcing.profile(op.time(m));
      if (g != 0.0) column += (w * g * op.dt) * kernel.col(k - m);
    }
    out.values.col(k) = detail::circulant_apply(column, v);
  }
  return out;
}

struct ComparisonCurve {
  double dt = 0.0;
  std::vector<std::optional<double>> relative_error;     // |u - v| / |v|, missing where |v| = 0
  std::vector<std::optional<double>> cosine_similarity;  // missing where either norm is 0

  std::size_t size() const { return relative_error.size(); }
};

// Per-time comparison of a candidate u against the reference v.
inline ComparisonCurve compare(const MeanResponseCurve& u, const MeanResponseCurve& v) {
  if (u.values.rows() != v.values.rows() || u.values.cols() != v.values.cols() || u.dt_out != v.dt_out)
    throw InvalidArgument("compared curves must share their time grid and node count");
  ComparisonCurve c;
  c.dt = v.dt_out;
  for (Index k = 0; k < v.size(); ++k) {
    const auto a = u.values.col(k);
    const auto b = v.values.col(k);
    const double nb = b.norm(), na = a.norm();
    c.relative_error.push_back(nb > 0.0 ? std::optional<double>((a - b).norm() / nb) : std::nullopt);
    if (na > 0.0 && nb > 0.0)
      c.cosine_similarity.push_back(std::clamp(a.dot(b) / (na * nb), -1.0, 1.0));
    else
      c.cosine_similarity.push_back(std::nullopt);
  }
  return c;
}

}  // namespace l96
