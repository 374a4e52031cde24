#pragma once

// Long-run statistical diagnostics of slow variables: moments, marginal
// densities by bin counting, pooled autocorrelations and the two distances
// used to compare marginal densities.
//
// Every accumulator supports merge() so that disjoint blocks of a trajectory
// can be processed independently and combined afterwards.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <span>
#include <vector>

#include "l96/errors.hpp"
#include "l96/ode.hpp"

namespace l96 {

// Welford mean/variance of a scalar stream.
class ScalarMoments {
 public:
  void add(double x) {
    ++count_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (x - mean_);
  }

  void merge(const ScalarMoments& other) {
    if (other.count_ == 0) return;
    if (count_ == 0) {
      *this = other;
      return;
    }
    const double na = static_cast<double>(count_), nb = static_cast<double>(other.count_);
    const double n = na + nb;
    const double delta = other.mean_ - mean_;
    mean_ += delta * nb / n;
    m2_ += other.m2_ + delta * delta * na * nb / n;
    count_ += other.count_;
  }

  std::uint64_t count() const { return count_; }
  double mean() const { return mean_; }
  // Population variance (divides by the sample count).
  double variance() const { return count_ > 0 ? m2_ / static_cast<double>(count_) : 0.0; }
  double stddev() const { return std::sqrt(variance()); }

 private:
  std::uint64_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

struct MomentSummary {
  StateVector mean;
  Matrix covariance;
  std::uint64_t sample_count = 0;
};

// Mean vector and covariance matrix (normalized by the sample count, i.e. a
// time average) of a vector stream.
class MomentAccumulator {
 public:
  explicit MomentAccumulator(Index dim) : mean_(StateVector::Zero(dim)), m2_(Matrix::Zero(dim, dim)) {}

  template <class Derived>
  void add(const Eigen::MatrixBase<Derived>& x) {
    ++count_;
    const StateVector delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_.noalias() += delta * (x - mean_).transpose();
  }

  void merge(const MomentAccumulator& other) {
    if (other.mean_.size() != mean_.size()) throw InvalidArgument("moment accumulators differ in dimension");
    if (other.count_ == 0) return;
    if (count_ == 0) {
      *this = other;
      return;
    }
    const double na = static_cast<double>(count_), nb = static_cast<double>(other.count_);
    const double n = na + nb;
    const StateVector delta = other.mean_ - mean_;
    mean_ += delta * (nb / n);
    m2_ += other.m2_ + delta * delta.transpose() * (na * nb / n);
    count_ += other.count_;
  }

  std::uint64_t count() const { return count_; }

  MomentSummary summary() const {
    if (count_ == 0) throw InvalidArgument("no samples accumulated");
    Matrix cov = m2_ / static_cast<double>(count_);
    cov = 0.5 * (cov + cov.transpose()).eval();
    return {mean_, std::move(cov), count_};
  }

 private:
  std::uint64_t count_ = 0;
  StateVector mean_;
  Matrix m2_;
};

// Moments of the `slice` components of column-stored samples.
inline MomentSummary moments(const Matrix& samples, Slice slice) {
  if (slice.count <= 0 || slice.end() > samples.rows()) throw InvalidArgument("moment slice outside the state");
  if (samples.cols() == 0) throw InvalidArgument("no samples");
  const auto block = samples.middleRows(slice.offset, slice.count);
  StateVector mean = block.rowwise().mean();
  const Matrix centered = block.colwise() - mean;
  Matrix cov = (centered * centered.transpose()) / static_cast<double>(block.cols());
  cov = 0.5 * (cov + cov.transpose()).eval();
  return {std::move(mean), std::move(cov), static_cast<std::uint64_t>(block.cols())};
}

inline MomentSummary moments(const Trajectory& traj, Slice slice) { return moments(traj.samples(), slice); }

// Bin-counted density estimate on [lo, hi). A sample equal to hi lands in the
// last bin; everything else outside the range is tallied, not dropped.
class Histogram1D {
 public:
  Histogram1D(double lo, double hi, Index n_bins) : lo_(lo), hi_(hi), counts_(static_cast<std::size_t>(n_bins), 0) {
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw InvalidArgument("histogram needs lo < hi");
    if (n_bins < 2) throw InvalidArgument("histogram needs at least two bins");
  }

  void add(double x) {
    if (std::isnan(x)) throw InvalidArgument("NaN sample in histogram");
    ++total_;
    if (x < lo_) {
      ++underflow_;
      return;
    }
    if (x > hi_) {
      ++overflow_;
      return;
    }
    auto bin = static_cast<Index>(std::floor((x - lo_) / bin_width()));
    bin = std::min(bin, n_bins() - 1);
    ++counts_[static_cast<std::size_t>(bin)];
  }

  void add(std::span<const double> xs) {
    for (double x : xs) add(x);
  }

  void merge(const Histogram1D& other) {
    require_same_geometry(other);
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    underflow_ += other.underflow_;
    overflow_ += other.overflow_;
    total_ += other.total_;
  }

  bool same_geometry(const Histogram1D& other) const {
    return lo_ == other.lo_ && hi_ == other.hi_ && counts_.size() == other.counts_.size();
  }

  void require_same_geometry(const Histogram1D& other) const {
    if (!same_geometry(other)) throw InvalidArgument("histograms have different bin geometry");
  }

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  Index n_bins() const { return static_cast<Index>(counts_.size()); }
  double bin_width() const { return (hi_ - lo_) / static_cast<double>(counts_.size()); }
  double center(Index i) const { return lo_ + (static_cast<double>(i) + 0.5) * bin_width(); }
  std::uint64_t count(Index i) const { return counts_[static_cast<std::size_t>(i)]; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  std::uint64_t total() const { return total_; }
  std::uint64_t underflow() const { return underflow_; }
  std::uint64_t overflow() const { return overflow_; }

  double out_of_range_fraction() const {
    return total_ > 0 ? static_cast<double>(underflow_ + overflow_) / static_cast<double>(total_) : 0.0;
  }

  // counts / (total * bin_width); zero everywhere for an empty histogram.
  double density(Index i) const {
    if (total_ == 0) return 0.0;
    return static_cast<double>(count(i)) / (static_cast<double>(total_) * bin_width());
  }

  std::vector<double> densities() const {
    std::vector<double> d(counts_.size());
    for (Index i = 0; i < n_bins(); ++i) d[static_cast<std::size_t>(i)] = density(i);
    return d;
  }

 private:
  double lo_;
  double hi_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t underflow_ = 0;
  std::uint64_t overflow_ = 0;
  std::uint64_t total_ = 0;
};

inline Histogram1D ddf(std::span<const double> samples, double lo, double hi, Index n_bins) {
  Histogram1D h(lo, hi, n_bins);
  h.add(samples);
  return h;
}

// Marginal density pooled over all components in `slice` (translation
// invariance makes every slow node a sample of the same marginal).
inline Histogram1D ddf(const Matrix& samples, Slice slice, double lo, double hi, Index n_bins) {
  if (slice.count <= 0 || slice.end() > samples.rows()) throw InvalidArgument("ddf slice outside the state");
  Histogram1D h(lo, hi, n_bins);
  for (Index t = 0; t < samples.cols(); ++t)
    for (Index i = slice.offset; i < slice.end(); ++i) h.add(samples(i, t));
  return h;
}

struct AutocorrelationCurve {
  double dt_lag = 0.0;
  std::vector<double> values;  // values[k] at lag k * dt_lag; values[0] == 1
  double variance = 0.0;       // pooled lag-0 (co)variance used to normalize
  bool centered = true;

  double lag(std::size_t k) const { return static_cast<double>(k) * dt_lag; }
};

// Streaming pooled lagged products for a multi-node series. Pairs are only
// formed within one accumulator, so merging blocks drops the (few) pairs that
// straddle a block boundary.
class LaggedProductAccumulator {
 public:
  LaggedProductAccumulator(Index nodes, Index max_lag)
      : nodes_(nodes),
        max_lag_(max_lag),
        products_(static_cast<std::size_t>(max_lag + 1), 0.0),
        lead_(static_cast<std::size_t>(max_lag + 1), 0.0),
        trail_(static_cast<std::size_t>(max_lag + 1), 0.0),
        pairs_(static_cast<std::size_t>(max_lag + 1), 0) {
    if (nodes < 1 || max_lag < 0) throw InvalidArgument("bad lagged accumulator shape");
  }

  template <class Derived>
  void add(const Eigen::MatrixBase<Derived>& x) {
    if (x.size() != nodes_) throw InvalidArgument("sample dimension does not match accumulator");
    history_.emplace_front(x);
    if (static_cast<Index>(history_.size()) > max_lag_ + 1) history_.pop_back();
    for (std::size_t lag = 0; lag < history_.size(); ++lag) {
      const StateVector& past = history_[lag];
      products_[lag] += past.dot(history_.front());
      lead_[lag] += history_.front().sum();
      trail_[lag] += past.sum();
      pairs_[lag] += static_cast<std::uint64_t>(nodes_);
    }
    sum_ += history_.front().sum();
    count_ += static_cast<std::uint64_t>(nodes_);
  }

  void merge(const LaggedProductAccumulator& other) {
    if (other.nodes_ != nodes_ || other.max_lag_ != max_lag_) throw InvalidArgument("lagged accumulators differ");
    for (std::size_t k = 0; k < products_.size(); ++k) {
      products_[k] += other.products_[k];
      lead_[k] += other.lead_[k];
      trail_[k] += other.trail_[k];
      pairs_[k] += other.pairs_[k];
    }
    sum_ += other.sum_;
    count_ += other.count_;
    history_.clear();
  }

  // Normalized curve; with `centered` the pooled mean is subtracted from
  // both factors.
  AutocorrelationCurve curve(double dt_lag, bool centered = true) const {
    if (count_ == 0) throw InvalidArgument("no samples accumulated");
    const double m = centered ? sum_ / static_cast<double>(count_) : 0.0;
    std::vector<double> cov(products_.size(), 0.0);
    for (std::size_t k = 0; k < products_.size(); ++k) {
      if (pairs_[k] == 0) throw InvalidArgument("series shorter than the requested maximum lag");
      const double n = static_cast<double>(pairs_[k]);
      cov[k] = (products_[k] - m * (lead_[k] + trail_[k]) + m * m * n) / n;
    }
    if (!(cov[0] > 0.0)) throw DegenerateRegime("autocorrelation of a constant series is undefined");
    AutocorrelationCurve out;
    out.dt_lag = dt_lag;
    out.centered = centered;
    out.variance = cov[0];
    out.values.resize(cov.size());
    out.values[0] = 1.0;
    for (std::size_t k = 1; k < cov.size(); ++k) out.values[k] = cov[k] / cov[0];
    return out;
  }

 private:
  Index nodes_;
  Index max_lag_;
  std::vector<double> products_, lead_, trail_;
  std::vector<std::uint64_t> pairs_;
  std::deque<StateVector> history_;  // history_[k] is the sample k steps back
  double sum_ = 0.0;
  std::uint64_t count_ = 0;
};

// Pooled autocorrelation of the `slice` rows of a (component x time) series.
inline AutocorrelationCurve autocorrelation(const Matrix& series, Slice slice, Index max_lag, double dt_lag,
                                            bool centered = true) {
  if (slice.count <= 0 || slice.end() > series.rows()) throw InvalidArgument("autocorrelation slice outside state");
  if (series.cols() <= max_lag) throw InvalidArgument("series shorter than the requested maximum lag");
  const auto block = series.middleRows(slice.offset, slice.count);
  const Index n = block.cols();
  const double m = centered ? block.mean() : 0.0;
  const Matrix x = block.array() - m;
  std::vector<double> cov(static_cast<std::size_t>(max_lag + 1));
  for (Index lag = 0; lag <= max_lag; ++lag) {
    const double s = (x.leftCols(n - lag).array() * x.rightCols(n - lag).array()).sum();
    cov[static_cast<std::size_t>(lag)] = s / static_cast<double>((n - lag) * slice.count);
  }
  if (!(cov[0] > 0.0)) throw DegenerateRegime("autocorrelation of a constant series is undefined");
  AutocorrelationCurve out;
  out.dt_lag = dt_lag;
  out.centered = centered;
  out.variance = cov[0];
  out.values.resize(cov.size());
  out.values[0] = 1.0;
  for (std::size_t k = 1; k < cov.size(); ++k) out.values[k] = cov[k] / cov[0];
  return out;
}

// Jensen-Shannon metric with bin sums for the integrals and natural log.
// Bins empty in both histograms contribute nothing; a bin empty in just one
// contributes p*log(2) from the other.
inline double js_metric(const Histogram1D& p, const Histogram1D& q) {
  p.require_same_geometry(q);
  const double w = p.bin_width();
  double sum = 0.0;
  for (Index i = 0; i < p.n_bins(); ++i) {
    // Ordered pair so the sum is symmetric under floating-point contraction.
    const double a = std::min(p.density(i), q.density(i)), b = std::max(p.density(i), q.density(i));
    const double mid = a + b;
    double term_a = 0.0, term_b = 0.0;
    if (a > 0.0) term_a = a * std::log(2.0 * a / mid);
    if (b > 0.0) term_b = b * std::log(2.0 * b / mid);
    sum += (term_a + term_b) * w;
  }
  return std::sqrt(std::max(0.0, sum)) / std::numbers::sqrt2;
}

// Earth mover's distance in one dimension: L1 norm of the CDF difference.
inline double em_distance(const Histogram1D& p, const Histogram1D& q) {
  p.require_same_geometry(q);
  const double w = p.bin_width();
  double cdf_gap = 0.0, sum = 0.0;
  for (Index i = 0; i < p.n_bins(); ++i) {
    cdf_gap += (p.density(i) - q.density(i)) * w;
    sum += std::abs(cdf_gap);
  }
  return sum * w;
}

}  // namespace l96
