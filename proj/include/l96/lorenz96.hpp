#pragma once

// Lorenz '96 vector fields: the single-scale system, its rescaled form, the
// rescaled two-scale system with linear coupling, the fast limiting system
// and the slow-only reduced model. Also the calibration of the rescaling
// constants from long uncoupled runs.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>

#include "l96/errors.hpp"
#include "l96/ode.hpp"
#include "l96/reduced_model.hpp"
#include "l96/rng.hpp"
#include "l96/statistics.hpp"

namespace l96 {

struct ModelParams {
  Index n_x = 20;  // slow variables
  Index j = 4;     // fast variables per slow variable
  double f_x = 16.0;
  double f_y = 12.0;
  double lambda_x = 0.4;
  double lambda_y = 0.4;
  double epsilon = 0.1;

  Index n_y() const { return n_x * j; }
  Index dimension() const { return n_x + n_y(); }
  Slice slow() const { return {0, n_x}; }
  Slice fast() const { return {n_x, n_y()}; }

  void validate() const {
    if (n_x < 4) throw InvalidArgument("N_x must be at least 4");
    if (j < 1) throw InvalidArgument("J must be positive");
    if (n_y() < 4) throw InvalidArgument("N_y must be at least 4");
    if (!(lambda_x >= 0.0) || !(lambda_y >= 0.0)) throw InvalidArgument("coupling strengths must be non-negative");
    if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
    if (!std::isfinite(f_x) || !std::isfinite(f_y)) throw InvalidArgument("forcing must be finite");
  }
};

// Long-run mean and standard deviation of the uncoupled system at forcing F.
struct Calibration {
  double forcing = 0.0;
  double mean = 0.0;
  double sigma = 1.0;
  double run_length = 0.0;
  double spinup = 0.0;
  double dt = 0.0;
};

struct CouplingMatrices {
  Matrix l_y;  // N_x x N_y: -lambda_y / J on the J fast variables of node i
  Matrix l_x;  // N_y x N_x: +lambda_x from node i to each of its fast variables
};

inline CouplingMatrices coupling_matrices(const ModelParams& p) {
  CouplingMatrices c{Matrix::Zero(p.n_x, p.n_y()), Matrix::Zero(p.n_y(), p.n_x)};
  for (Index i = 0; i < p.n_x; ++i) {
    for (Index k = 0; k < p.j; ++k) {
      c.l_y(i, i * p.j + k) = -p.lambda_y / static_cast<double>(p.j);
      c.l_x(i * p.j + k, i) = p.lambda_x;
    }
  }
  return c;
}

namespace detail {

inline Index wrap(Index i, Index n) { return i < 0 ? i + n : (i >= n ? i - n : i); }

// (x[i-1] + a)(x[i+1] - x[i-2]) - x[i] * damping + forcing, cyclic indices.
template <class V>
inline double slow_advection(const V& x, Index i, Index n, double a, double damping, double forcing) {
  return (x[wrap(i - 1, n)] + a) * (x[wrap(i + 1, n)] - x[wrap(i - 2, n)]) - x[i] * damping + forcing;
}

// Fast variables advect in the opposite index direction:
// (y[k+1] + a)(y[k-1] - y[k+2]) - y[k] * damping + forcing.
template <class V>
inline double fast_advection(const V& y, Index k, Index n, double a, double damping, double forcing) {
  return (y[wrap(k + 1, n)] + a) * (y[wrap(k - 1, n)] - y[wrap(k + 2, n)]) - y[k] * damping + forcing;
}

// Coefficients of the rescaled equation x = mean + sigma * xhat, t = tau / sigma.
struct RescaledCoefficients {
  double shift;    // mean / sigma
  double damping;  // 1 / sigma
  double forcing;  // (F - mean) / sigma^2

  static RescaledCoefficients from(double forcing_value, const Calibration& cal) {
    if (!(cal.sigma > 0.0)) throw InvalidArgument("calibration sigma must be positive");
    return {cal.mean / cal.sigma, 1.0 / cal.sigma, (forcing_value - cal.mean) / (cal.sigma * cal.sigma)};
  }
};

inline void require_calibrated_at(const Calibration& cal, double forcing, const char* what) {
  if (cal.forcing != forcing)
    throw InvalidArgument(std::string(what) + ": calibration was computed at F=" + std::to_string(cal.forcing) +
                          ", not F=" + std::to_string(forcing));
}

}  // namespace detail

// dx_i/dt = x_{i-1}(x_{i+1} - x_{i-2}) - x_i + F with periodic indices.
class UncoupledField {
 public:
  UncoupledField(Index n, double forcing) : n_(n), forcing_(forcing) {
    if (n < 4) throw InvalidArgument("Lorenz '96 needs N >= 4");
  }

  Index dimension() const { return n_; }
  double forcing() const { return forcing_; }

  void operator()(double, const StateVector& x, StateVector& dx) const {
    for (Index i = 0; i < n_; ++i) dx[i] = detail::slow_advection(x, i, n_, 0.0, 1.0, forcing_);
  }

 private:
  Index n_;
  double forcing_;
};

// Uncoupled system in the rescaled variables and rescaled time.
class RescaledUncoupledField {
 public:
  RescaledUncoupledField(Index n, double forcing, const Calibration& cal)
      : n_(n), coef_(detail::RescaledCoefficients::from(forcing, cal)) {
    if (n < 4) throw InvalidArgument("Lorenz '96 needs N >= 4");
    detail::require_calibrated_at(cal, forcing, "rescaled_uncoupled_field");
  }

  Index dimension() const { return n_; }

  void operator()(double, const StateVector& x, StateVector& dx) const {
    for (Index i = 0; i < n_; ++i) dx[i] = detail::slow_advection(x, i, n_, coef_.shift, coef_.damping, coef_.forcing);
  }

 private:
  Index n_;
  detail::RescaledCoefficients coef_;
};

// Rescaled two-scale system; state is (x, y) with y_{i,j} stored at
// N_x + i*J + j and the fast chain periodic over all N_y entries.
class TwoScaleField {
 public:
  TwoScaleField(const ModelParams& p, const Calibration& cal_x, const Calibration& cal_y)
      : p_(p),
        slow_(detail::RescaledCoefficients::from(p.f_x, cal_x)),
        fast_(detail::RescaledCoefficients::from(p.f_y, cal_y)) {
    p_.validate();
    detail::require_calibrated_at(cal_x, p.f_x, "two_scale_field (slow)");
    detail::require_calibrated_at(cal_y, p.f_y, "two_scale_field (fast)");
  }

  Index dimension() const { return p_.dimension(); }
  const ModelParams& params() const { return p_; }

  void operator()(double, const StateVector& s, StateVector& ds) const {
    const Index nx = p_.n_x, ny = p_.n_y(), J = p_.j;
    const auto x = s.head(nx);
    const auto y = s.tail(ny);
    const double cy = p_.lambda_y / static_cast<double>(J);
    const double inv_eps = 1.0 / p_.epsilon;
    for (Index i = 0; i < nx; ++i) {
      double fast_sum = 0.0;
      for (Index k = 0; k < J; ++k) fast_sum += y[i * J + k];
      ds[i] = detail::slow_advection(x, i, nx, slow_.shift, slow_.damping, slow_.forcing) - cy * fast_sum;
    }
    for (Index k = 0; k < ny; ++k) {
      ds[nx + k] = inv_eps * (detail::fast_advection(y, k, ny, fast_.shift, fast_.damping, fast_.forcing) +
                              p_.lambda_x * x[k / J]);
    }
  }

 private:
  ModelParams p_;
  detail::RescaledCoefficients slow_;
  detail::RescaledCoefficients fast_;
};

// Fast subsystem with the slow state frozen, in fast time (no 1/epsilon).
class FastLimitingField {
 public:
  FastLimitingField(const ModelParams& p, const Calibration& cal_y, StateVector x_frozen)
      : p_(p), fast_(detail::RescaledCoefficients::from(p.f_y, cal_y)), drive_(p.n_y()) {
    p_.validate();
    detail::require_calibrated_at(cal_y, p.f_y, "fast_limiting_field");
    if (x_frozen.size() != p.n_x) throw InvalidArgument("frozen slow state must have dimension N_x");
    for (Index k = 0; k < p.n_y(); ++k) drive_[k] = p.lambda_x * x_frozen[k / p.j];
  }

  Index dimension() const { return p_.n_y(); }

  void operator()(double, const StateVector& z, StateVector& dz) const {
    const Index ny = p_.n_y();
    for (Index k = 0; k < ny; ++k)
      dz[k] = detail::fast_advection(z, k, ny, fast_.shift, fast_.damping, fast_.forcing) + drive_[k];
  }

 private:
  ModelParams p_;
  detail::RescaledCoefficients fast_;
  StateVector drive_;  // L_x x_frozen
};

// Slow-only closure model. Order 0 keeps only the constant term L_y z*.
class ReducedField {
 public:
  ReducedField(const ModelParams& p, const Calibration& cal_x, const ReducedModel& rm)
      : p_(p), slow_(detail::RescaledCoefficients::from(p.f_x, cal_x)), order_(rm.order) {
    p_.validate();
    detail::require_calibrated_at(cal_x, p.f_x, "reduced_field");
    if (rm.order != 0 && rm.order != 1) throw InvalidArgument("reduced model order must be 0 or 1");
    if (rm.x_star.size() != p.n_x || rm.z_bar_star.size() != p.n_y())
      throw InvalidArgument("reduced model does not match the regime dimensions");
    if (rm.order == 1 && (rm.l_l.rows() != p.n_x || rm.l_l.cols() != p.n_x))
      throw InvalidArgument("closure matrix must be N_x x N_x");
    constant_ = coupling_matrices(p).l_y * rm.z_bar_star;
    if (order_ == 1) {
      l_l_ = rm.l_l;
      x_star_ = rm.x_star;
    }
  }

  Index dimension() const { return p_.n_x; }
  int order() const { return order_; }
  const StateVector& coupling_constant() const { return constant_; }

  void operator()(double, const StateVector& x, StateVector& dx) const {
    const Index nx = p_.n_x;
    for (Index i = 0; i < nx; ++i)
      dx[i] = detail::slow_advection(x, i, nx, slow_.shift, slow_.damping, slow_.forcing) + constant_[i];
    if (order_ == 1) dx.noalias() += l_l_ * (x - x_star_);
  }

 private:
  ModelParams p_;
  detail::RescaledCoefficients slow_;
  int order_;
  StateVector constant_;  // L_y z*
  Matrix l_l_;
  StateVector x_star_;
};

// Cyclic node shift of a slow (length n_x) or slow+fast (length n_x(1+J))
// state: slow entries move by `shift`, fast entries by shift * J.
inline StateVector rotate_nodes(const StateVector& s, Index n_x, Index j, Index shift) {
  const Index n_fast = s.size() - n_x;
  if (n_fast != 0 && n_fast != n_x * j) throw InvalidArgument("state is neither slow-only nor slow+fast");
  StateVector out(s.size());
  const Index r = ((shift % n_x) + n_x) % n_x;
  for (Index i = 0; i < n_x; ++i) out[(i + r) % n_x] = s[i];
  for (Index k = 0; k < n_fast; ++k) out[n_x + (k + r * j) % n_fast] = s[n_x + k];
  return out;
}

enum class InitialDraw { uniform_unit, standard_normal };

inline StateVector random_state(Index dim, Rng& rng, InitialDraw draw) {
  StateVector s(dim);
  for (Index i = 0; i < dim; ++i) s[i] = draw == InitialDraw::uniform_unit ? rng.uniform(-1.0, 1.0) : rng.normal();
  return s;
}

// Long-run node-pooled mean and standard deviation of the uncoupled system
// at forcing F, sampled every step after the spinup.
inline Calibration calibrate(Index n, double forcing, double run_length, double spinup, double dt,
                             std::uint64_t seed) {
  if (!(run_length > 0.0) || !(spinup >= 0.0)) throw InvalidArgument("calibration run lengths must be positive");
  const UncoupledField field(n, forcing);
  Rng rng(seed);
  StateVector x = random_state(n, rng, InitialDraw::uniform_unit);
  if (spinup > 0.0) x = integrate_final(field, std::move(x), 0.0, spinup, dt);
  ScalarMoments pooled;
  integrate_observed(field, ForcingProfile::none(), {}, std::move(x), spinup, spinup + run_length, dt, dt,
                     [&](double, const StateVector& s) {
                       for (Index i = 0; i < n; ++i) pooled.add(s[i]);
                     });
  const double sigma = pooled.stddev();
  if (!(sigma >= 1e-8))
    throw DegenerateRegime("uncoupled Lorenz '96 at F=" + std::to_string(forcing) +
                           " collapses to a fixed point (sigma=" + std::to_string(sigma) +
                           "); rescaling is undefined");
  return {forcing, pooled.mean(), sigma, run_length, spinup, dt};
}

}  // namespace l96
