#pragma once

// Fixed-step classical Runge-Kutta integration of autonomous and forced ODE
// systems, with decimated trajectory recording.

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "l96/errors.hpp"

namespace l96 {

using Index = Eigen::Index;
using StateVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// A right-hand side f(t, x). `dx` arrives sized to dimension(); evaluation
// must not touch shared mutable state.
template <class F>
concept VectorField = requires(const F& f, double t, const StateVector& x, StateVector& dx) {
  { f.dimension() } -> std::convertible_to<Index>;
  f(t, x, dx);
};

// Adapter for ad-hoc fields given as callables.
template <class Fn>
class LambdaField {
 public:
  LambdaField(Index dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}
  Index dimension() const { return dim_; }
  void operator()(double t, const StateVector& x, StateVector& dx) const { fn_(t, x, dx); }

 private:
  Index dim_;
  Fn fn_;
};

template <class Fn>
LambdaField<Fn> make_field(Index dim, Fn fn) {
  return LambdaField<Fn>(dim, std::move(fn));
}

// Type-erased field, used where the concrete system is chosen at run time.
class DynamicField {
 public:
  using Fn = std::function<void(double, const StateVector&, StateVector&)>;

  DynamicField() = default;
  DynamicField(Index dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}

  template <VectorField F>
    requires(!std::same_as<std::remove_cvref_t<F>, DynamicField>)
  explicit DynamicField(F field)
      : dim_(field.dimension()),
        fn_([f = std::move(field)](double t, const StateVector& x, StateVector& dx) { f(t, x, dx); }) {}

  Index dimension() const { return dim_; }
  void operator()(double t, const StateVector& x, StateVector& dx) const { fn_(t, x, dx); }

 private:
  Index dim_ = 0;
  Fn fn_;
};

// Contiguous block of components that receive external forcing.
struct Slice {
  Index offset = 0;
  Index count = 0;

  Index end() const { return offset + count; }
};

enum class ForcingKind { none, heaviside, ramp };

// delta_f(t) = g(t) * magnitude * direction, with g a unit step or a unit ramp
// starting at `onset`. The direction is kept at unit Euclidean norm.
class ForcingProfile {
 public:
  ForcingProfile() = default;

  static ForcingProfile none() { return {}; }

  static ForcingProfile heaviside(StateVector direction, double magnitude, double onset = 0.0) {
    return ForcingProfile(ForcingKind::heaviside, std::move(direction), magnitude, onset);
  }

  static ForcingProfile ramp(StateVector direction, double magnitude, double onset = 0.0) {
    return ForcingProfile(ForcingKind::ramp, std::move(direction), magnitude, onset);
  }

  ForcingKind kind() const { return kind_; }
  const StateVector& direction() const { return direction_; }
  double magnitude() const { return magnitude_; }
  double onset() const { return onset_; }

  // Time profile g(t): 0 before onset, then 1 (step) or t - onset (ramp).
  double profile(double t) const {
    if (kind_ == ForcingKind::none || t < onset_) return 0.0;
    return kind_ == ForcingKind::heaviside ? 1.0 : t - onset_;
  }

  double amplitude(double t) const { return magnitude_ * profile(t); }

  bool active() const { return kind_ != ForcingKind::none && magnitude_ != 0.0; }

  ForcingProfile with_magnitude(double magnitude) const {
    ForcingProfile copy = *this;
    copy.magnitude_ = magnitude;
    return copy;
  }

 private:
  ForcingProfile(ForcingKind kind, StateVector direction, double magnitude, double onset)
      : kind_(kind), direction_(std::move(direction)), magnitude_(magnitude), onset_(onset) {
    if (direction_.size() == 0) throw InvalidArgument("forcing direction is empty");
    const double norm = direction_.norm();
    if (!(std::abs(norm - 1.0) < 1e-9))
      throw InvalidArgument("forcing direction must have unit norm, got " + std::to_string(norm));
    if (!std::isfinite(magnitude_) || !std::isfinite(onset_))
      throw InvalidArgument("forcing magnitude and onset must be finite");
  }

  ForcingKind kind_ = ForcingKind::none;
  StateVector direction_;
  double magnitude_ = 0.0;
  double onset_ = 0.0;
};

inline StateVector unit_vector(Index dim, Index i) {
  StateVector e = StateVector::Zero(dim);
  e(i) = 1.0;
  return e;
}

// Uniformly sampled, immutable record of an integration. Samples are stored
// as the columns of a dimension x count matrix.
class Trajectory {
 public:
  Trajectory(double t0, double dt_record, Matrix samples)
      : t0_(t0), dt_record_(dt_record), samples_(std::move(samples)) {
    if (!(dt_record_ > 0.0)) throw InvalidArgument("dt_record must be positive");
    if (samples_.cols() < 1) throw InvalidArgument("trajectory needs at least one sample");
  }

  double t0() const { return t0_; }
  double dt_record() const { return dt_record_; }
  Index size() const { return samples_.cols(); }
  Index dimension() const { return samples_.rows(); }
  double time(Index k) const { return t0_ + static_cast<double>(k) * dt_record_; }
  const Matrix& samples() const { return samples_; }
  auto sample(Index k) const { return samples_.col(k); }
  StateVector back() const { return samples_.col(samples_.cols() - 1); }

 private:
  double t0_;
  double dt_record_;
  Matrix samples_;
};

namespace detail {

// Number of `step`-sized pieces in `span`, or nullopt if not an integer.
inline std::optional<long long> whole_steps(double span, double step) {
  const double ratio = span / step;
  const double rounded = std::round(ratio);
  if (rounded < 0.0 || std::abs(ratio - rounded) > 1e-9 * std::max(1.0, rounded)) return std::nullopt;
  return static_cast<long long>(rounded);
}

}  // namespace detail

// Reusable RK4 stepper with preallocated stage buffers. The forcing is added
// to the components in `slice` and evaluated at each stage time.
template <VectorField Field>
class Rk4Stepper {
 public:
  explicit Rk4Stepper(const Field& field, ForcingProfile forcing = {}, Slice slice = {})
      : field_(field), forcing_(std::move(forcing)), slice_(slice) {
    const Index n = field_.dimension();
    if (forcing_.kind() != ForcingKind::none) {
      if (forcing_.direction().size() != slice_.count)
        throw InvalidArgument("forcing direction dimension does not match the forced slice");
      if (slice_.offset < 0 || slice_.end() > n) throw InvalidArgument("forced slice outside the state");
    }
    k1_.resize(n);
    k2_.resize(n);
    k3_.resize(n);
    k4_.resize(n);
    tmp_.resize(n);
  }

  // Advances `x` from t to t + dt in place.
  void step(double t, StateVector& x, double dt) {
    const double half = 0.5 * dt;
    // A step switches on at a step boundary; stages never see it early.
    step_on_ = forcing_.kind() == ForcingKind::heaviside && t >= forcing_.onset() - 1e-9 * dt;
    rhs(t, x, k1_);
    tmp_ = x + half * k1_;
    rhs(t + half, tmp_, k2_);
    tmp_ = x + half * k2_;
    rhs(t + half, tmp_, k3_);
    tmp_ = x + dt * k3_;
    rhs(t + dt, tmp_, k4_);
    x += (dt / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
    if (!x.allFinite()) throw IntegrationBlowup(t + dt);
  }

  // `steps` consecutive steps starting at t0; step n begins at t0 + n*dt.
  void advance(double t0, StateVector& x, double dt, long long steps) {
    for (long long n = 0; n < steps; ++n) step(t0 + static_cast<double>(n) * dt, x, dt);
  }

 private:
  void rhs(double t, const StateVector& x, StateVector& dx) const {
    field_(t, x, dx);
    if (forcing_.kind() != ForcingKind::none) {
      const double a = forcing_.kind() == ForcingKind::heaviside ? (step_on_ ? forcing_.magnitude() : 0.0)
                                                                 : forcing_.amplitude(t);
      if (a != 0.0) dx.segment(slice_.offset, slice_.count) += a * forcing_.direction();
    }
  }

  const Field& field_;
  ForcingProfile forcing_;
  Slice slice_;
  bool step_on_ = false;
  StateVector k1_, k2_, k3_, k4_, tmp_;
};

template <VectorField Field>
StateVector rk4_step(const Field& field, double t, const StateVector& state, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
  if (state.size() != field.dimension()) throw InvalidArgument("state dimension does not match field");
  if (!state.allFinite()) throw IntegrationBlowup(t);
  StateVector x = state;
  Rk4Stepper<Field> stepper(field);
  stepper.step(t, x, dt);
  return x;
}

// Integrates from t0 to t1 and calls observer(t, x) at t0 and at every
// multiple of dt_record thereafter. Returns the final state.
template <VectorField Field, class Observer>
StateVector integrate_observed(const Field& field, const ForcingProfile& forcing, Slice slice,
                               StateVector state0, double t0, double t1, double dt, double dt_record,
                               Observer&& observer) {
  if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
  if (!(t1 > t0)) throw InvalidArgument("t1 must exceed t0");
  if (state0.size() != field.dimension()) throw InvalidArgument("state dimension does not match field");
  if (!state0.allFinite()) throw IntegrationBlowup(t0);
  const auto steps = detail::whole_steps(t1 - t0, dt);
  const auto stride = detail::whole_steps(dt_record, dt);
  if (!steps) throw InvalidArgument("integration span is not a whole number of steps");
  if (!stride || *stride < 1) throw InvalidArgument("dt_record must be an integer multiple of dt");

  Rk4Stepper<Field> stepper(field, forcing, slice);
  StateVector x = std::move(state0);
  observer(t0, std::as_const(x));
  for (long long n = 0; n < *steps; ++n) {
    stepper.step(t0 + static_cast<double>(n) * dt, x, dt);
    if ((n + 1) % *stride == 0) observer(t0 + static_cast<double>(n + 1) * dt, std::as_const(x));
  }
  return x;
}

template <VectorField Field>
Trajectory integrate(const Field& field, const ForcingProfile& forcing, Slice slice, StateVector state0,
                     double t0, double t1, double dt, double dt_record) {
  const auto stride = detail::whole_steps(dt_record, dt);
  const auto steps = detail::whole_steps(t1 - t0, dt);
  const Index count = (stride && steps && *stride > 0) ? static_cast<Index>(*steps / *stride) + 1 : 1;
  Matrix samples(field.dimension(), count);
  Index k = 0;
  integrate_observed(field, forcing, slice, std::move(state0), t0, t1, dt, dt_record,
                     [&](double, const StateVector& x) { samples.col(k++) = x; });
  return Trajectory(t0, dt_record, std::move(samples));
}

template <VectorField Field>
StateVector integrate_final(const Field& field, StateVector state0, double t0, double t1, double dt) {
  return integrate_observed(field, ForcingProfile::none(), {}, std::move(state0), t0, t1, dt, dt,
                            [](double, const StateVector&) {});
}

// Empirical global order of accuracy: least-squares slope of log(error)
// against log(dt). Without an exact solution the reference is a run at a
// sixteenth of the smallest step.
template <VectorField Field>
double convergence_order(const Field& field, const StateVector& state0, double t1, std::vector<double> dts,
                         std::optional<StateVector> exact = std::nullopt) {
  if (dts.size() < 3) throw InvalidArgument("convergence_order needs at least three step sizes");
  StateVector reference;
  if (exact) {
    reference = *exact;
  } else {
    double finest = dts.front();
    for (double h : dts) finest = std::min(finest, h);
    reference = integrate_final(field, state0, 0.0, t1, finest / 16.0);
  }
  std::vector<double> lx, ly;
  for (double h : dts) {
    const StateVector end = integrate_final(field, state0, 0.0, t1, h);
    const double err = (end - reference).lpNorm<Eigen::Infinity>();
    if (!(err > 0.0)) throw NumericalFailure("convergence_order: error vanished, cannot fit a slope");
    lx.push_back(std::log(h));
    ly.push_back(std::log(err));
  }
  const double n = static_cast<double>(lx.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace l96
