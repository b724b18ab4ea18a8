#pragma once

// Empirical distances to N(0,1), standardisation helpers, mergeable moment
// accumulators and log-log rate fitting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "mstein/error.hpp"

namespace mstein {

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
inline double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, ErrorCode::InvalidParameter, "quantile level must lie in (0,1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

/// Sorted Monte-Carlo sample of a functional.
struct EmpiricalSample {
  std::vector<double> values;
  std::size_t replication_count = 0;
  std::uint64_t seed = 0;

  static EmpiricalSample from(std::vector<double> v, std::uint64_t seed = 0) {
    require(v.size() >= 2, ErrorCode::InvalidParameter, "a sample needs at least two values");
    for (double x : v)
      if (!std::isfinite(x)) fail(ErrorCode::NonFiniteFunctionValue, "sample contains a non-finite value");
    std::sort(v.begin(), v.end());
    EmpiricalSample s;
    s.replication_count = v.size();
    s.values = std::move(v);
    s.seed = seed;
    return s;
  }
  std::size_t size() const { return values.size(); }
};

/// Welford accumulator for mean and variance (plus third and fourth central
/// moments). Two accumulators merge exactly, so per-thread partial results
/// can be reduced in any fixed order.
struct MomentAccumulator {
  double n = 0.0, mean = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0;

  void add(double x) {
    const double n1 = n;
    n += 1.0;
    const double delta = x - mean;
    const double dn = delta / n;
    const double dn2 = dn * dn;
    const double t1 = delta * dn * n1;
    mean += dn;
    m4 += t1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * m2 - 4.0 * dn * m3;
    m3 += t1 * dn * (n - 2.0) - 3.0 * dn * m2;
    m2 += t1;
  }

  void merge(const MomentAccumulator& o) {
    if (o.n == 0.0) return;
    if (n == 0.0) {
      *this = o;
      return;
    }
    const double na = n, nb = o.n, nn = na + nb;
    const double d = o.mean - mean, d2 = d * d, d3 = d2 * d, d4 = d2 * d2;
    const double new_m4 = m4 + o.m4 + d4 * na * nb * (na * na - na * nb + nb * nb) / (nn * nn * nn) +
                          6.0 * d2 * (na * na * o.m2 + nb * nb * m2) / (nn * nn) +
                          4.0 * d * (na * o.m3 - nb * m3) / nn;
    const double new_m3 = m3 + o.m3 + d3 * na * nb * (na - nb) / (nn * nn) + 3.0 * d * (na * o.m2 - nb * m2) / nn;
    m2 += o.m2 + d2 * na * nb / nn;
    m3 = new_m3;
    m4 = new_m4;
    mean += d * nb / nn;
    n = nn;
  }

  /// Unbiased variance.
  double variance() const { return n > 1.0 ? m2 / (n - 1.0) : 0.0; }
  /// Standard error of the unbiased variance (large-sample formula).
  double variance_se() const {
    if (n < 2.0) return 0.0;
    const double mu2 = m2 / n, mu4 = m4 / n;
    return std::sqrt(std::max(mu4 - mu2 * mu2, 0.0) / n);
  }
  double mean_se() const { return n > 1.0 ? std::sqrt(variance() / n) : 0.0; }
  double skewness() const { return m2 > 0.0 ? std::sqrt(n) * m3 / std::pow(m2, 1.5) : 0.0; }
};

inline MomentAccumulator moments(const std::vector<double>& v) {
  // Pairwise reduction keeps the rounding profile independent of length.
  if (v.size() <= 64) {
    MomentAccumulator a;
    for (double x : v) a.add(x);
    return a;
  }
  const std::size_t mid = v.size() / 2;
  MomentAccumulator left = moments(std::vector<double>(v.begin(), v.begin() + mid));
  left.merge(moments(std::vector<double>(v.begin() + mid, v.end())));
  return left;
}

/// Centre and scale a sample. By default both the mean and the variance are
/// estimated; a known mean or exact variance replaces the estimate.
inline std::vector<double> standardize(const std::vector<double>& v, std::optional<double> variance = {},
                                       std::optional<double> mean = {}) {
  const MomentAccumulator m = moments(v);
  const double mu = mean.value_or(m.mean);
  const double var = variance.value_or(m.variance());
  if (!(var > 0.0)) fail(ErrorCode::ZeroVariance, "cannot standardise a sample with zero variance");
  const double s = std::sqrt(var);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mu) / s;
  return out;
}

namespace detail {
// Antiderivative of Phi: G(x) = x Phi(x) + phi(x).
inline double phi_antiderivative(double x) { return x * normal_cdf(x) + normal_pdf(x); }
// Integral of |p - Phi(x)| over [a, b].
inline double abs_gap(double p, double a, double b) {
  if (b <= a) return 0.0;
  auto signed_part = [p](double lo, double hi) {  // int (Phi - p)
    return phi_antiderivative(hi) - phi_antiderivative(lo) - p * (hi - lo);
  };
  if (p <= 0.0) return signed_part(a, b);
  if (p >= 1.0) return -signed_part(a, b);
  const double c = normal_quantile(p);
  if (c <= a) return signed_part(a, b);
  if (c >= b) return -signed_part(a, b);
  return -signed_part(a, c) + signed_part(c, b);
}
}  // namespace detail

/// W1(F_n, N(0,1)) = int |F_n - Phi| computed exactly piece by piece.
inline double wasserstein1_std_normal(const EmpiricalSample& s) {
  const auto& x = s.values;
  const std::size_t n = x.size();
  require(n >= 1, ErrorCode::InvalidParameter, "empty sample");
  // Tails: int_{-inf}^{x_1} Phi = G(x_1); int_{x_n}^{inf} (1 - Phi) = G(-x_n).
  double total = detail::phi_antiderivative(x.front()) + detail::phi_antiderivative(-x.back());
  for (std::size_t k = 1; k < n; ++k) {
    if (x[k] > x[k - 1]) total += detail::abs_gap(static_cast<double>(k) / n, x[k - 1], x[k]);
  }
  return total;
}

/// sup_x |F_n(x) - Phi(x)| by the two-sided order-statistic formula.
inline double ks_std_normal(const EmpiricalSample& s) {
  const auto& x = s.values;
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double F = normal_cdf(x[i]);
    d = std::max({d, (i + 1) / n - F, F - i / n});
  }
  return d;
}

struct DistanceReport {
  double w1 = 0.0;
  double ks = 0.0;
  double w1_se = 0.0;  // batch-means estimate
};

/// W1 and KS of a standardised sample plus a batch-means standard error for
/// W1: the sample is cut into `batches` contiguous blocks in replicate order.
inline DistanceReport distances(const std::vector<double>& standardized, std::uint64_t seed = 0,
                                int batches = 10) {
  DistanceReport r;
  const auto s = EmpiricalSample::from(standardized, seed);
  r.w1 = wasserstein1_std_normal(s);
  r.ks = ks_std_normal(s);
  const std::size_t n = standardized.size();
  if (batches >= 2 && n / batches >= 2) {
    MomentAccumulator acc;
    for (int b = 0; b < batches; ++b) {
      const std::size_t lo = n * b / batches, hi = n * (b + 1) / batches;
      acc.add(wasserstein1_std_normal(EmpiricalSample::from(
          std::vector<double>(standardized.begin() + lo, standardized.begin() + hi))));
    }
    r.w1_se = std::sqrt(acc.variance() / batches);
  }
  return r;
}

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least-squares line through (log T, log d).
inline RateFit rate_fit(const std::vector<std::pair<double, double>>& points) {
  require(points.size() >= 3, ErrorCode::NonPositiveInput, "rate fit needs at least three points");
  double sx = 0, sy = 0;
  for (const auto& [T, d] : points) {
    if (!(T > 0.0) || !(d > 0.0)) fail(ErrorCode::NonPositiveInput, "rate fit needs T > 0 and d > 0");
    sx += std::log(T);
    sy += std::log(d);
  }
  const double n = static_cast<double>(points.size());
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& [T, d] : points) {
    const double dx = std::log(T) - mx, dy = std::log(d) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  require(sxx > 0.0, ErrorCode::NonPositiveInput, "rate fit needs at least two distinct T");
  RateFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0.0;
  for (const auto& [T, d] : points) {
    const double e = std::log(d) - (f.intercept + f.slope * std::log(T));
    ss_res += e * e;
  }
  f.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return f;
}

}  // namespace mstein
