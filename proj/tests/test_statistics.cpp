#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "l96/rng.hpp"
#include "l96/statistics.hpp"

using namespace l96;

namespace {

// Histogram with all mass in explicitly given bins.
Histogram1D spikes(std::initializer_list<std::pair<Index, int>> bins, Index n = 40, double lo = -4, double hi = 4) {
  Histogram1D h(lo, hi, n);
  for (auto [bin, count] : bins)
    for (int c = 0; c < count; ++c) h.add(h.center(bin));
  return h;
}

Histogram1D random_histogram(Rng& rng, Index n = 30) {
  Histogram1D h(-3.0, 3.0, n);
  const int samples = 200 + static_cast<int>(rng.uniform() * 300);
  const double shift = rng.uniform(-1.0, 1.0), scale = rng.uniform(0.3, 1.2);
  for (int i = 0; i < samples; ++i) h.add(shift + scale * rng.normal());
  return h;
}

}  // namespace

TEST(ScalarMoments, MergeMatchesSingleStream) {
  Rng rng(1);
  ScalarMoments all, a, b;
  for (int i = 0; i < 1000; ++i) {
    const double x = 3.0 + rng.normal();
    all.add(x);
    (i < 300 ? a : b).add(x);
  }
  a.merge(b);
  EXPECT_EQ(a.count(), all.count());
  EXPECT_NEAR(a.mean(), all.mean(), 1e-12);
  EXPECT_NEAR(a.variance(), all.variance(), 1e-12);
}

TEST(Ddf, ConstantSeriesFillsOneBin) {
  const std::vector<double> xs(500, 0.33);
  const Histogram1D h = ddf(xs, -4.0, 4.0, 80);
  const Index bin = static_cast<Index>(std::floor((0.33 + 4.0) / 0.1));
  EXPECT_EQ(h.count(bin), 500u);
  EXPECT_DOUBLE_EQ(h.density(bin), 1.0 / h.bin_width());
  for (Index i = 0; i < 80; ++i)
    if (i != bin) EXPECT_EQ(h.density(i), 0.0);
}

TEST(Ddf, StandardNormalMatchesGaussianPdf) {
  Rng rng(2024);
  std::vector<double> xs(1000000);
  for (auto& x : xs) x = rng.normal();
  const Histogram1D h = ddf(xs, -5.0, 5.0, 100);
  double worst = 0.0;
  for (Index i = 0; i < h.n_bins(); ++i) {
    const double c = h.center(i);
    const double pdf = std::exp(-0.5 * c * c) / std::sqrt(2.0 * std::numbers::pi);
    worst = std::max(worst, std::abs(h.density(i) - pdf));
  }
  EXPECT_LT(worst, 0.01);
}

TEST(Ddf, OutOfRangeSamplesAreTallied) {
  const std::vector<double> xs{-10.0, -1.0, 0.0, 1.0, 4.0, 9.0, 4.5};
  const Histogram1D h = ddf(xs, -4.0, 4.0, 8);
  EXPECT_EQ(h.total(), 7u);
  EXPECT_EQ(h.underflow(), 1u);
  EXPECT_EQ(h.overflow(), 2u);
  EXPECT_EQ(h.count(7), 1u);  // x == hi lands in the last bin
  EXPECT_NEAR(h.out_of_range_fraction(), 3.0 / 7.0, 1e-15);
}

TEST(Ddf, DensityIntegratesToInRangeMass) {
  Rng rng(3);
  std::vector<double> xs(20000);
  for (auto& x : xs) x = 1.5 * rng.normal();
  const Histogram1D h = ddf(xs, -4.0, 4.0, 80);
  double mass = 0.0;
  for (double d : h.densities()) mass += d * h.bin_width();
  EXPECT_GT(h.out_of_range_fraction(), 0.0);
  EXPECT_NEAR(mass, 1.0 - h.out_of_range_fraction(), 1e-12);
}

TEST(Ddf, PoolsMatrixRowsAndMerges) {
  Matrix m(3, 4);
  m << 0.1, 0.2, 0.3, 0.4, 1.1, 1.2, 1.3, 1.4, -2.0, -2.0, -2.0, -2.0;
  const Histogram1D h = ddf(m, {0, 2}, -4.0, 4.0, 8);
  EXPECT_EQ(h.total(), 8u);
  EXPECT_EQ(h.count(4), 4u);
  EXPECT_EQ(h.count(5), 4u);
  Histogram1D other(-4.0, 4.0, 8);
  other.add(-2.0);
  Histogram1D merged = h;
  merged.merge(other);
  EXPECT_EQ(merged.total(), 9u);
  EXPECT_EQ(merged.count(2), 1u);
  EXPECT_THROW(merged.merge(Histogram1D(-4.0, 4.0, 9)), InvalidArgument);
  EXPECT_THROW(Histogram1D(1.0, 1.0, 4), InvalidArgument);
  EXPECT_THROW(Histogram1D(0.0, 1.0, 1), InvalidArgument);
}

TEST(Autocorrelation, WhiteNoiseDecorrelates) {
  Rng rng(4);
  const Index nodes = 5, n = 40000;
  Matrix x(nodes, n);
  for (Index t = 0; t < n; ++t)
    for (Index i = 0; i < nodes; ++i) x(i, t) = rng.normal();
  const AutocorrelationCurve ac = autocorrelation(x, {0, nodes}, 10, 1.0);
  EXPECT_EQ(ac.values[0], 1.0);
  const double band = 3.0 / std::sqrt(static_cast<double>(nodes * n));
  for (std::size_t k = 1; k < ac.values.size(); ++k) EXPECT_LT(std::abs(ac.values[k]), band) << "lag " << k;
}

TEST(Autocorrelation, SinusoidGivesCosine) {
  const double omega = 0.7, dt = 0.1;
  const Index nodes = 4, n = 200000;
  Matrix x(nodes, n);
  for (Index t = 0; t < n; ++t)
    for (Index i = 0; i < nodes; ++i) x(i, t) = std::cos(omega * dt * static_cast<double>(t) + 1.3 * static_cast<double>(i));
  const AutocorrelationCurve ac = autocorrelation(x, {0, nodes}, 60, dt);
  for (std::size_t k = 0; k < ac.values.size(); ++k) EXPECT_NEAR(ac.values[k], std::cos(omega * ac.lag(k)), 0.01);
  for (double v : ac.values) EXPECT_LE(std::abs(v), 1.05);
}

TEST(Autocorrelation, StreamingAccumulatorAgreesWithBatch) {
  Rng rng(5);
  const Index nodes = 3, n = 5000;
  Matrix x(nodes, n);
  double prev[3] = {0, 0, 0};
  for (Index t = 0; t < n; ++t)
    for (Index i = 0; i < nodes; ++i) x(i, t) = prev[i] = 0.8 * prev[i] + rng.normal() + 0.5;
  const AutocorrelationCurve batch = autocorrelation(x, {0, nodes}, 15, 0.1);

  LaggedProductAccumulator whole(nodes, 15);
  for (Index t = 0; t < n; ++t) whole.add(x.col(t));
  const AutocorrelationCurve streamed = whole.curve(0.1);
  for (std::size_t k = 0; k < batch.values.size(); ++k) EXPECT_NEAR(streamed.values[k], batch.values[k], 1e-10);

  LaggedProductAccumulator a(nodes, 15), b(nodes, 15);
  for (Index t = 0; t < n; ++t) (t < n / 2 ? a : b).add(x.col(t));
  a.merge(b);
  const AutocorrelationCurve merged = a.curve(0.1);
  EXPECT_EQ(merged.values[0], 1.0);
  for (std::size_t k = 0; k < batch.values.size(); ++k) EXPECT_NEAR(merged.values[k], batch.values[k], 0.01);
}

TEST(Autocorrelation, ConstantSeriesIsDegenerate) {
  const Matrix x = Matrix::Constant(2, 100, 1.0);
  EXPECT_THROW(autocorrelation(x, {0, 2}, 5, 0.1), DegenerateRegime);
  EXPECT_THROW(autocorrelation(x, {0, 2}, 100, 0.1), InvalidArgument);
}

TEST(JsMetric, IdenticalHistogramsAreAtZeroDistance) {
  Rng rng(6);
  const Histogram1D h = random_histogram(rng);
  EXPECT_EQ(js_metric(h, h), 0.0);
}

TEST(JsMetric, DisjointSupportsReachTheBound) {
  const Histogram1D p = spikes({{3, 10}, {4, 5}});
  const Histogram1D q = spikes({{20, 7}});
  // Each Kullback-Leibler term is log 2: (1/sqrt 2) * sqrt(2 log 2).
  const double expected = std::sqrt(2.0 * std::log(2.0)) / std::sqrt(2.0);
  EXPECT_NEAR(js_metric(p, q), expected, 1e-12);
  EXPECT_NEAR(expected, 0.8326, 1e-4);
}

TEST(JsMetric, AxiomsOnRandomPairs) {
  Rng rng(7);
  const double bound = std::sqrt(std::log(2.0));
  for (int trial = 0; trial < 200; ++trial) {
    const Histogram1D p = random_histogram(rng), q = random_histogram(rng);
    const double d = js_metric(p, q);
    EXPECT_EQ(d, js_metric(q, p));
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, bound + 1e-12);
    if (p.counts() != q.counts()) EXPECT_GT(d, 0.0);
  }
}

TEST(JsMetric, ZeroBinConvention) {
  // p has mass where q is empty: that bin contributes p * log 2.
  Histogram1D p(0.0, 2.0, 2), q(0.0, 2.0, 2);
  p.add(0.5);
  p.add(1.5);
  q.add(1.5);
  // bin 0: p=0.5, q=0 -> 0.5 log 2 ; bin 1: p=0.5, q=1.
  const double b1 = 0.5 * std::log(2 * 0.5 / 1.5) + 1.0 * std::log(2 * 1.0 / 1.5);
  EXPECT_NEAR(js_metric(p, q), std::sqrt(0.5 * std::log(2.0) + b1) / std::sqrt(2.0), 1e-14);
  EXPECT_THROW(js_metric(p, Histogram1D(0.0, 2.0, 3)), InvalidArgument);
}

TEST(EmDistance, SpikesAreSeparatedByTheirDistance) {
  const Histogram1D p = spikes({{5, 3}});
  const Histogram1D q = spikes({{27, 9}});
  const double alpha = p.center(5), beta = q.center(27);
  EXPECT_NEAR(em_distance(p, q), std::abs(alpha - beta), p.bin_width());
  EXPECT_EQ(em_distance(p, p), 0.0);
}

TEST(EmDistance, MetricAxiomsOnRandomTriples) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const Histogram1D a = random_histogram(rng), b = random_histogram(rng), c = random_histogram(rng);
    const double ab = em_distance(a, b), bc = em_distance(b, c), ac = em_distance(a, c);
    EXPECT_GE(ab, 0.0);
    EXPECT_EQ(ab, em_distance(b, a));
    EXPECT_LE(ac, ab + bc + 1e-12);
  }
}

TEST(EmDistance, TranslationBehaviour) {
  const Histogram1D p = spikes({{10, 2}, {11, 5}, {12, 2}});
  const Histogram1D q = spikes({{14, 1}, {15, 4}, {16, 1}});
  const double w = p.bin_width();
  const double base = em_distance(p, q);
  for (Index k : {1, 3, 6}) {
    const Histogram1D ps = spikes({{10 + k, 2}, {11 + k, 5}, {12 + k, 2}});
    const Histogram1D qs = spikes({{14 + k, 1}, {15 + k, 4}, {16 + k, 1}});
    EXPECT_NEAR(em_distance(ps, qs), base, 1e-12);
    EXPECT_LE(std::abs(em_distance(ps, q) - base), static_cast<double>(k) * w + 1e-12);
  }
  // Moving p further away from a non-overlapping q adds exactly k bin widths.
  const Histogram1D far = spikes({{7, 2}, {8, 5}, {9, 2}});
  EXPECT_NEAR(em_distance(far, q) - base, 3.0 * w, 1e-12);
}

TEST(Moments, ConstantTrajectoryHasNoCovariance) {
  const Matrix x = Matrix::Constant(4, 50, 2.5);
  const MomentSummary m = moments(x, {0, 4});
  EXPECT_TRUE(m.covariance.isZero(1e-15));
  EXPECT_TRUE(m.mean.isApprox(StateVector::Constant(4, 2.5)));
  EXPECT_EQ(m.sample_count, 50u);
}

TEST(Moments, GaussianAr1RecoversStationaryCovariance) {
  // x_{t+1} = phi x_t + L xi_t has Sigma = L L^T / (1 - phi^2).
  const double phi = 0.5;
  Matrix l(3, 3);
  l << 1.0, 0.0, 0.0, 0.5, 0.8, 0.0, -0.3, 0.2, 0.6;
  const Matrix sigma = l * l.transpose() / (1.0 - phi * phi);
  Rng rng(9);
  const Index n = 400000;
  Matrix x(3, n);
  StateVector s = StateVector::Zero(3), xi(3);
  for (Index t = 0; t < n; ++t) {
    for (Index i = 0; i < 3; ++i) xi[i] = rng.normal();
    s = phi * s + l * xi;
    x.col(t) = s;
  }
  const MomentSummary m = moments(x, {0, 3});
  EXPECT_LT((m.covariance - sigma).norm() / sigma.norm(), 0.05);
  EXPECT_TRUE(m.covariance.isApprox(m.covariance.transpose(), 1e-15));

  MomentAccumulator a(3), b(3);
  for (Index t = 0; t < n; ++t) (t % 3 == 0 ? a : b).add(x.col(t));
  a.merge(b);
  const MomentSummary streamed = a.summary();
  EXPECT_LT((streamed.covariance - m.covariance).norm(), 1e-9);
  EXPECT_LT((streamed.mean - m.mean).norm(), 1e-12);
}
