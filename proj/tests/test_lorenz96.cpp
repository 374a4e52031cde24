#include <gtest/gtest.h>

#include <cmath>

#include "l96/lorenz96.hpp"
#include "l96/statistics.hpp"

using namespace l96;

namespace {

// Long-run constants of the uncoupled system, frozen from an independent
// NumPy brute-force RK4 average (dt=0.01, spinup 100, 2e4 time units, two
// initial conditions). See also CalibrateMatchesIndependentLoop below.
constexpr double kMeanF16 = 3.09;
constexpr double kSigmaF16 = 6.32;

const Calibration kCalX{16.0, 3.09, 6.32, 1e4, 100.0, 0.01};
const Calibration kCalY{12.0, 2.77, 5.06, 1e4, 100.0, 0.01};

StateVector random_vector(Index n, std::uint64_t seed) {
  Rng rng(seed);
  return random_state(n, rng, InitialDraw::standard_normal);
}

StateVector eval(const auto& field, const StateVector& x) {
  StateVector dx(field.dimension());
  field(0.0, x, dx);
  return dx;
}

ModelParams regime(double lx = 0.4, double ly = 0.4) {
  ModelParams p;
  p.lambda_x = lx;
  p.lambda_y = ly;
  return p;
}

}  // namespace

TEST(UncoupledField, UniformStateOnlyFeelsDampingAndForcing) {
  const UncoupledField f(20, 16.0);
  const StateVector dx = eval(f, StateVector::Constant(20, 1.7));
  for (Index i = 0; i < 20; ++i) EXPECT_DOUBLE_EQ(dx[i], 16.0 - 1.7);
}

TEST(UncoupledField, OriginIsFixedPointWithoutForcing) {
  EXPECT_TRUE(eval(UncoupledField(8, 0.0), StateVector::Zero(8)).isZero(0.0));
}

TEST(UncoupledField, RotationEquivariance) {
  const UncoupledField f(20, 8.0);
  const StateVector x = random_vector(20, 3);
  for (Index r : {1, 5, 19}) {
    EXPECT_TRUE(eval(f, rotate_nodes(x, 20, 0, r)) == rotate_nodes(eval(f, x), 20, 0, r));
  }
}

TEST(UncoupledField, MatchesHandWrittenStencil) {
  const UncoupledField f(6, 8.0);
  const StateVector x = random_vector(6, 11);
  const StateVector dx = eval(f, x);
  // i = 0 wraps to x[5] and x[4].
  EXPECT_DOUBLE_EQ(dx[0], x[5] * (x[1] - x[4]) - x[0] + 8.0);
  EXPECT_DOUBLE_EQ(dx[3], x[2] * (x[4] - x[1]) - x[3] + 8.0);
}

TEST(RescaledUncoupledField, UniformState) {
  const RescaledUncoupledField f(20, 16.0, kCalX);
  const double c = -0.4;
  const StateVector dx = eval(f, StateVector::Constant(20, c));
  const double expected = -c / kCalX.sigma + (16.0 - kCalX.mean) / (kCalX.sigma * kCalX.sigma);
  for (Index i = 0; i < 20; ++i) EXPECT_NEAR(dx[i], expected, 1e-15);
}

TEST(RescaledUncoupledField, RequiresMatchingCalibration) {
  EXPECT_THROW(RescaledUncoupledField(20, 8.0, kCalX), InvalidArgument);
}

TEST(RescaledUncoupledField, PushforwardOfOriginalDynamics) {
  // x = mean + sigma * xhat and t = tau / sigma map solutions onto solutions.
  const UncoupledField original(20, 16.0);
  const RescaledUncoupledField rescaled(20, 16.0, kCalX);
  const StateVector xhat0 = random_vector(20, 5);
  const StateVector x0 = (kCalX.mean + kCalX.sigma * xhat0.array()).matrix();
  const double tau = 1.0;
  const StateVector xhat = integrate_final(rescaled, xhat0, 0.0, tau, 1e-3);
  const StateVector x = integrate_final(original, x0, 0.0, tau / kCalX.sigma, tau / kCalX.sigma / 1000.0);
  const StateVector mapped = ((x.array() - kCalX.mean) / kCalX.sigma).matrix();
  EXPECT_LT((mapped - xhat).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(RescaledUncoupledField, LongRunHasZeroMeanUnitStd) {
  const Calibration cal = calibrate(20, 16.0, 1e4, 100.0, 0.01, 1);
  const RescaledUncoupledField f(20, 16.0, cal);
  ScalarMoments m;
  integrate_observed(f, ForcingProfile::none(), {}, random_vector(20, 2), 0.0, 1e4, 0.01, 0.1,
                     [&](double t, const StateVector& x) {
                       if (t >= 100.0)
                         for (Index i = 0; i < 20; ++i) m.add(x[i]);
                     });
  EXPECT_NEAR(m.mean(), 0.0, 0.05);
  EXPECT_NEAR(m.stddev(), 1.0, 0.05);
}

TEST(Calibrate, RegressionAtF16) {
  const Calibration cal = calibrate(20, 16.0, 1e4, 100.0, 0.01, 1);
  EXPECT_NEAR(cal.mean, kMeanF16, 0.02 * kSigmaF16);
  EXPECT_NEAR(cal.sigma, kSigmaF16, 0.02 * kSigmaF16);
  EXPECT_EQ(cal.forcing, 16.0);
  EXPECT_EQ(cal.run_length, 1e4);
}

TEST(Calibrate, MatchesIndependentLoop) {
  // Plain arrays, explicit RK4, no library integrator.
  const int n = 20;
  const double F = 16.0, dt = 0.01;
  std::vector<double> x(n), k1(n), k2(n), k3(n), k4(n), tmp(n);
  Rng rng(99);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  auto rhs = [&](const std::vector<double>& s, std::vector<double>& d) {
    for (int i = 0; i < n; ++i)
      d[i] = s[(i + n - 1) % n] * (s[(i + 1) % n] - s[(i + n - 2) % n]) - s[i] + F;
  };
  double sum = 0, sum2 = 0;
  long count = 0;
  for (long step = 0; step < 300000; ++step) {
    rhs(x, k1);
    for (int i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * dt * k1[i];
    rhs(tmp, k2);
    for (int i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * dt * k2[i];
    rhs(tmp, k3);
    for (int i = 0; i < n; ++i) tmp[i] = x[i] + dt * k3[i];
    rhs(tmp, k4);
    for (int i = 0; i < n; ++i) x[i] += dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    if (step >= 10000)
      for (double v : x) {
        sum += v;
        sum2 += v * v;
        ++count;
      }
  }
  const double mean = sum / count, sigma = std::sqrt(sum2 / count - mean * mean);
  const Calibration cal = calibrate(20, 16.0, 2900.0, 100.0, 0.01, 4);
  EXPECT_NEAR(cal.mean, mean, 0.03 * sigma);
  EXPECT_NEAR(cal.sigma, sigma, 0.03 * sigma);
}

TEST(Calibrate, DisjointHalvesAgree) {
  const Calibration first = calibrate(20, 16.0, 5000.0, 100.0, 0.01, 7);
  // The second half continues the same trajectory: spin up through the first.
  const Calibration second = calibrate(20, 16.0, 5000.0, 5100.0, 0.01, 7);
  EXPECT_LT(std::abs(first.mean - second.mean), 0.02 * first.sigma);
}

TEST(Calibrate, IndependentSeedsAgree) {
  const Calibration a = calibrate(20, 16.0, 1e4, 100.0, 0.01, 11);
  const Calibration b = calibrate(20, 16.0, 1e4, 100.0, 0.01, 12);
  EXPECT_LT(std::abs(a.sigma - b.sigma), 0.02 * a.sigma);
  EXPECT_LT(std::abs(a.mean - b.mean), 0.02 * a.sigma);
}

TEST(Calibrate, DecayingRegimeIsDegenerate) {
  EXPECT_THROW(calibrate(20, 0.1, 1000.0, 100.0, 0.01, 1), DegenerateRegime);
}

TEST(CouplingMatrices, Structure) {
  ModelParams p = regime(0.3, 0.8);
  const auto c = coupling_matrices(p);
  ASSERT_EQ(c.l_y.rows(), 20);
  ASSERT_EQ(c.l_y.cols(), 80);
  EXPECT_DOUBLE_EQ(c.l_y(3, 12), -0.8 / 4.0);
  EXPECT_DOUBLE_EQ(c.l_y(3, 15), -0.8 / 4.0);
  EXPECT_EQ(c.l_y(3, 16), 0.0);
  EXPECT_DOUBLE_EQ(c.l_x(13, 3), 0.3);
  EXPECT_EQ(c.l_x(13, 4), 0.0);
  EXPECT_DOUBLE_EQ(c.l_y.sum(), -0.8 * 20);
  EXPECT_DOUBLE_EQ(c.l_x.sum(), 0.3 * 80);
}

TEST(TwoScaleField, DecoupledSlowBlockIsRescaledUncoupled) {
  const ModelParams p = regime(0.0, 0.0);
  const TwoScaleField f(p, kCalX, kCalY);
  const StateVector s = random_vector(100, 21);
  const StateVector slow = eval(RescaledUncoupledField(20, 16.0, kCalX), StateVector(s.head(20)));
  EXPECT_TRUE(eval(f, s).head(20).isApprox(slow, 1e-15));
}

TEST(TwoScaleField, CouplingTerms) {
  const ModelParams p = regime(0.4, 0.4);
  const ModelParams off = regime(0.0, 0.0);
  const StateVector s = random_vector(100, 22);
  const StateVector coupled = eval(TwoScaleField(p, kCalX, kCalY), s);
  const StateVector plain = eval(TwoScaleField(off, kCalX, kCalY), s);
  for (Index i = 0; i < 20; ++i) {
    const double fast_sum = s.segment(20 + 4 * i, 4).sum();
    EXPECT_NEAR(coupled[i] - plain[i], -(0.4 / 4.0) * fast_sum, 1e-13);
  }
  for (Index k = 0; k < 80; ++k) EXPECT_NEAR(coupled[20 + k] - plain[20 + k], 0.4 * s[k / 4] / p.epsilon, 1e-12);
}

TEST(TwoScaleField, JointRotationEquivariance) {
  const TwoScaleField f(regime(), kCalX, kCalY);
  const StateVector s = random_vector(100, 23);
  for (Index r : {1, 7}) {
    const StateVector a = eval(f, rotate_nodes(s, 20, 4, r));
    const StateVector b = rotate_nodes(eval(f, s), 20, 4, r);
    EXPECT_TRUE(a == b);
  }
}

TEST(FastLimitingField, ReducesToRescaledUncoupledFastDynamics) {
  const StateVector z = random_vector(80, 31);
  const double a = kCalY.mean / kCalY.sigma, damp = 1.0 / kCalY.sigma;
  const double forcing = (12.0 - kCalY.mean) / (kCalY.sigma * kCalY.sigma);
  StateVector expected(80);
  for (Index k = 0; k < 80; ++k)
    expected[k] = (z[(k + 1) % 80] + a) * (z[(k + 79) % 80] - z[(k + 2) % 80]) - z[k] * damp + forcing;
  const StateVector x = random_vector(20, 32);
  EXPECT_TRUE(eval(FastLimitingField(regime(0.0, 0.4), kCalY, x), z).isApprox(expected, 1e-14));
  EXPECT_TRUE(eval(FastLimitingField(regime(0.4, 0.4), kCalY, StateVector::Zero(20)), z).isApprox(expected, 1e-14));
}

TEST(FastLimitingField, MatchesFastBlockTimesEpsilon) {
  const ModelParams p = regime();
  const StateVector s = random_vector(100, 33);
  const StateVector full = eval(TwoScaleField(p, kCalX, kCalY), s);
  const StateVector fast = eval(FastLimitingField(p, kCalY, s.head(20)), StateVector(s.tail(80)));
  EXPECT_TRUE((p.epsilon * full.tail(80)).isApprox(fast, 1e-13));
}

namespace {

ReducedModel toy_model(int order, const ModelParams& p) {
  ReducedModel rm;
  rm.order = order;
  rm.x_star = StateVector::Constant(p.n_x, 0.12);
  rm.z_bar_star = StateVector::Constant(p.n_y(), 0.035);
  rm.c_mat = Matrix::Identity(p.n_y(), p.n_y());
  Matrix l_l(p.n_x, p.n_x);
  for (Index i = 0; i < p.n_x; ++i)
    for (Index j = 0; j < p.n_x; ++j) l_l(i, j) = 0.05 * std::cos(static_cast<double>(i - j));
  rm.l_l = l_l;
  return rm;
}

}  // namespace

TEST(ReducedField, ZeroOrderEqualsShiftedForcing) {
  const ModelParams p = regime();
  const ReducedModel rm = toy_model(0, p);
  const ReducedField reduced(p, kCalX, rm);
  Calibration shifted = kCalX;
  shifted.forcing = p.f_x - kCalX.sigma * kCalX.sigma * p.lambda_y * rm.z_bar_star[0];
  const RescaledUncoupledField equivalent(20, shifted.forcing, shifted);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const StateVector x = random_vector(20, 1000 + seed);
    EXPECT_LT((eval(reduced, x) - eval(equivalent, x)).lpNorm<Eigen::Infinity>(), 1e-12);
  }
}

TEST(ReducedField, FirstMinusZeroOrderIsTheLinearCorrection) {
  const ModelParams p = regime();
  const ReducedField zero(p, kCalX, toy_model(0, p));
  const ReducedModel rm1 = toy_model(1, p);
  const ReducedField first(p, kCalX, rm1);
  const StateVector x = random_vector(20, 41);
  const StateVector expected = rm1.l_l * (x - rm1.x_star);
  EXPECT_LT((eval(first, x) - eval(zero, x) - expected).lpNorm<Eigen::Infinity>(), 1e-13);
  EXPECT_TRUE(eval(first, rm1.x_star) == eval(zero, rm1.x_star));
}

TEST(ReducedField, RejectsMismatchedModel) {
  ModelParams p = regime();
  ReducedModel rm = toy_model(1, p);
  rm.x_star = StateVector::Zero(10);
  EXPECT_THROW(ReducedField(p, kCalX, rm), InvalidArgument);
  rm = toy_model(2, p);
  EXPECT_THROW(ReducedField(p, kCalX, rm), InvalidArgument);
}

TEST(RotateNodes, InverseAndComposition) {
  const StateVector s = random_vector(100, 51);
  EXPECT_TRUE(rotate_nodes(rotate_nodes(s, 20, 4, 3), 20, 4, -3) == s);
  EXPECT_TRUE(rotate_nodes(rotate_nodes(s, 20, 4, 3), 20, 4, 5) == rotate_nodes(s, 20, 4, 8));
  EXPECT_TRUE(rotate_nodes(s, 20, 4, 20) == s);
  EXPECT_THROW(rotate_nodes(StateVector::Zero(30), 20, 4, 1), InvalidArgument);
}
