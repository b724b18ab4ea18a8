#pragma once

// Levy measures on a bounded support, truncated moments, jump samplers above
// a threshold and the small-jump functional used to test Gaussian substitution.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mstein/error.hpp"
#include "mstein/quadrature.hpp"
#include "mstein/rng.hpp"
#include "mstein/stats_distance.hpp"

namespace mstein {

struct LevyMeasure {
  enum class Kind { Density, Atomic };

  Kind kind = Kind::Density;
  /// Density of nu at x != 0; only consulted on [-a, b].
  std::function<double(double)> density;
  double a = 1.0;
  double b = 1.0;
  /// (location, mass) pairs for the atomic kind.
  std::vector<std::pair<double, double>> atoms;
  /// Free-form description for reports, e.g. "power-law(delta=0.5,a=1,b=1)".
  std::string label;

  double support_max() const { return std::max(a, b); }
};

/// nu(dx) = |x|^{-(2+delta)} dx on [-a, b] \ {0}.
inline LevyMeasure power_law(double delta, double a = 1.0, double b = 1.0) {
  require(a > 0.0 && b > 0.0, ErrorCode::NonPositiveParameter, "support bounds a, b must be positive");
  require(std::isfinite(delta), ErrorCode::InvalidParameter, "delta must be finite");
  LevyMeasure m;
  m.kind = LevyMeasure::Kind::Density;
  m.density = [delta](double x) { return std::pow(std::abs(x), -(2.0 + delta)); };
  m.a = a;
  m.b = b;
  m.label = "power-law(delta=" + std::to_string(delta) + ",a=" + std::to_string(a) + ",b=" + std::to_string(b) + ")";
  return m;
}

inline LevyMeasure atomic(std::vector<std::pair<double, double>> atoms) {
  require(!atoms.empty(), ErrorCode::InvalidParameter, "atomic measure needs at least one atom");
  double lo = 0.0, hi = 0.0;
  for (const auto& [x, w] : atoms) {
    require(x != 0.0 && std::isfinite(x), ErrorCode::InvalidParameter, "atoms must sit at finite nonzero points");
    require(w > 0.0 && std::isfinite(w), ErrorCode::NonPositiveParameter, "atom masses must be positive");
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  LevyMeasure m;
  m.kind = LevyMeasure::Kind::Atomic;
  m.atoms = std::move(atoms);
  m.a = std::max(-lo, std::numeric_limits<double>::min());
  m.b = std::max(hi, std::numeric_limits<double>::min());
  m.label = "atomic(" + std::to_string(m.atoms.size()) + " atoms)";
  return m;
}

inline LevyMeasure from_density(std::function<double(double)> density, double a, double b, std::string label = "density") {
  require(a > 0.0 && b > 0.0, ErrorCode::NonPositiveParameter, "support bounds a, b must be positive");
  LevyMeasure m;
  m.density = std::move(density);
  m.a = a;
  m.b = b;
  m.label = std::move(label);
  return m;
}

namespace detail {

// int_lo^hi g(x) dx for 0 <= lo < hi by Gauss-Legendre in log x, one panel per
// decade. With lo == 0 the decades continue downward until the contributions
// are negligible; a non-shrinking sequence means the integral diverges.
template <class G>
double log_integral(G&& g, double lo, double hi) {
  if (!(hi > lo)) return 0.0;
  auto piece = [&](double x0, double x1) {
    return quad::panel([&](double y) {
      const double x = std::exp(y);
      return g(x) * x;
    }, std::log(x0), std::log(x1), 24);
  };
  double sum = 0.0;
  double upper = hi;
  if (lo > 0.0) {
    while (upper > lo) {
      const double lower = std::max(lo, upper / 10.0);
      sum += piece(lower, upper);
      upper = lower;
    }
    return sum;
  }
  double prev = 0.0;
  for (int k = 0; k < 2000; ++k) {
    const double lower = upper / 10.0;
    const double c = piece(lower, upper);
    if (!std::isfinite(c)) fail(ErrorCode::IntegralDiverged, "integrand is not finite near zero");
    sum += c;
    upper = lower;
    if (k >= 2 && std::abs(c) <= 1e-17 * std::abs(sum)) return sum;
    if (k >= 30 && prev != 0.0 && std::abs(c) >= std::abs(prev))
      fail(ErrorCode::IntegralDiverged, "truncated moment does not converge at zero");
    if (upper < 1e-80) {
      // Deep enough that density values risk overflow; close with the
      // geometric tail implied by the last two decades.
      const double r = prev != 0.0 ? std::abs(c / prev) : 0.0;
      if (r >= 1.0) fail(ErrorCode::IntegralDiverged, "truncated moment does not converge at zero");
      return sum + c * r / (1.0 - r);
    }
    prev = c;
  }
  fail(ErrorCode::IntegralDiverged, "truncated moment does not converge at zero");
}

}  // namespace detail

/// int_{lo < |x| <= hi} |x|^p nu(dx), or the signed version int x^p (p odd)
/// when `signed_moment` is set.
inline double truncated_moment(const LevyMeasure& m, double p, double lo, double hi, bool signed_moment = false) {
  require(lo >= 0.0 && hi >= 0.0, ErrorCode::InvalidParameter, "moment bounds must be non-negative");
  if (hi <= lo) return 0.0;
  if (m.kind == LevyMeasure::Kind::Atomic) {
    double s = 0.0;
    for (const auto& [x, w] : m.atoms) {
      const double ax = std::abs(x);
      if (ax > lo && ax <= hi) s += w * std::pow(ax, p) * (signed_moment && x < 0 ? -1.0 : 1.0);
    }
    return s;
  }
  auto side = [&](double bound, double sign) {
    const double top = std::min(hi, bound);
    if (top <= lo) return 0.0;
    return detail::log_integral([&](double x) { return std::pow(x, p) * m.density(sign * x); }, lo, top);
  };
  const double pos = side(m.b, 1.0);
  const double neg = side(m.a, -1.0);
  return signed_moment ? pos - neg : pos + neg;
}

/// sigma(eps) = sqrt(int_{|x| <= eps} x^2 nu(dx)).
inline double sigma_eps(const LevyMeasure& m, double eps) {
  require(eps >= 0.0, ErrorCode::InvalidParameter, "eps must be non-negative");
  if (eps == 0.0) return 0.0;
  return std::sqrt(truncated_moment(m, 2.0, 0.0, eps));
}

/// nu({|x| > eps}).
inline double tail_mass(const LevyMeasure& m, double eps) {
  require(eps > 0.0, ErrorCode::NonPositiveParameter, "eps must be positive");
  return truncated_moment(m, 0.0, eps, m.support_max());
}

struct SubstitutionReport {
  std::vector<double> eps;
  std::vector<double> ratios;  // sigma(eps) / eps
  bool diverging = false;
  std::string verdict() const { return diverging ? "diverging" : "inconclusive"; }
};

/// sigma(eps)/eps along a decreasing grid; the verdict is `diverging` when the
/// ratios increase strictly.
inline SubstitutionReport gaussian_substitution_valid(const LevyMeasure& m, const std::vector<double>& eps_grid) {
  SubstitutionReport r;
  r.eps = eps_grid;
  for (std::size_t i = 0; i < eps_grid.size(); ++i) {
    require(eps_grid[i] > 0.0, ErrorCode::NonPositiveParameter, "eps grid must be positive");
    if (i > 0) require(eps_grid[i] < eps_grid[i - 1], ErrorCode::InvalidParameter, "eps grid must decrease");
    r.ratios.push_back(sigma_eps(m, eps_grid[i]) / eps_grid[i]);
  }
  r.diverging = r.ratios.size() >= 2;
  for (std::size_t i = 1; i < r.ratios.size(); ++i)
    if (!(r.ratios[i] > r.ratios[i - 1])) r.diverging = false;
  return r;
}

/// int_{|x|<=eps}|x|^3 nu / sigma(eps)^3, times an optional factor carrying the
/// time weight, int |h|^3 / (int h^2)^{3/2}.
inline double third_moment_ratio(const LevyMeasure& m, double eps, double h_factor = 1.0) {
  require(eps > 0.0, ErrorCode::NonPositiveParameter, "eps must be positive");
  const double s = sigma_eps(m, eps);
  if (!(s > 0.0)) fail(ErrorCode::ZeroVariance, "sigma(eps) vanishes; no small jumps below eps");
  return h_factor * truncated_moment(m, 3.0, 0.0, eps) / (s * s * s);
}

/// Sizes of jumps with lo < |x| <= hi drawn from the normalised restriction of
/// the measure, by inverse-CDF tables on a log-spaced grid (one per side).
class JumpSizeTable {
 public:
  static constexpr std::size_t kPoints = 1u << 14;

  JumpSizeTable(const LevyMeasure& m, double lo, double hi) {
    require(lo > 0.0 && hi > lo, ErrorCode::InvalidParameter, "jump table needs 0 < lo < hi");
    if (m.kind == LevyMeasure::Kind::Atomic) {
      for (const auto& [x, w] : m.atoms) {
        const double ax = std::abs(x);
        if (ax > lo && ax <= hi) {
          mass_ += w;
          atom_x_.push_back(x);
          atom_cdf_.push_back(mass_);
        }
      }
      return;
    }
    build_side(m, lo, std::min(hi, m.b), 1.0, pos_);
    build_side(m, lo, std::min(hi, m.a), -1.0, neg_);
    mass_ = pos_.total() + neg_.total();
  }

  double mass() const { return mass_; }

  double draw(Engine& rng) const {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double u = u01(rng) * mass_;
    if (!atom_x_.empty()) {
      const auto it = std::upper_bound(atom_cdf_.begin(), atom_cdf_.end(), u);
      return atom_x_[std::min<std::size_t>(it - atom_cdf_.begin(), atom_x_.size() - 1)];
    }
    if (u < pos_.total()) return pos_.invert(u);
    return -neg_.invert(u - pos_.total());
  }

 private:
  struct Side {
    std::vector<double> x;    // log-spaced |x| grid
    std::vector<double> cdf;  // cumulative mass from x[0]
    double total() const { return cdf.empty() ? 0.0 : cdf.back(); }
    double invert(double u) const {
      const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
      const std::size_t j = std::clamp<std::size_t>(it - cdf.begin(), 1, cdf.size() - 1);
      const double c0 = cdf[j - 1], c1 = cdf[j];
      const double w = c1 > c0 ? (u - c0) / (c1 - c0) : 0.0;
      return x[j - 1] + std::clamp(w, 0.0, 1.0) * (x[j] - x[j - 1]);
    }
  };

  static void build_side(const LevyMeasure& m, double lo, double hi, double sign, Side& s) {
    if (hi <= lo) return;
    s.x.resize(kPoints);
    s.cdf.resize(kPoints);
    const double ratio = std::log(hi / lo);
    for (std::size_t i = 0; i < kPoints; ++i)
      s.x[i] = lo * std::exp(ratio * static_cast<double>(i) / (kPoints - 1));
    s.x.back() = hi;
    s.cdf[0] = 0.0;
    for (std::size_t i = 1; i < kPoints; ++i) {
      const double piece = quad::panel(
          [&](double y) {
            const double x = std::exp(y);
            return m.density(sign * x) * x;
          },
          std::log(s.x[i - 1]), std::log(s.x[i]), 8);
      s.cdf[i] = s.cdf[i - 1] + piece;
    }
  }

  double mass_ = 0.0;
  Side pos_, neg_;
  std::vector<double> atom_x_, atom_cdf_;
};

struct JumpSample {
  std::vector<double> times;
  std::vector<double> sizes;
  bool empty_tail = false;  // set when the measure has no mass above eps
};

/// Compound-Poisson sampler of the jumps with |x| > eps.
class LargeJumpSampler {
 public:
  LargeJumpSampler(const LevyMeasure& m, double eps) : eps_(eps) {
    require(eps > 0.0, ErrorCode::NonPositiveParameter, "eps must be positive");
    if (eps < m.support_max()) table_ = std::make_shared<JumpSizeTable>(m, eps, m.support_max());
  }

  double intensity() const { return table_ ? table_->mass() : 0.0; }
  bool empty_tail() const { return intensity() <= 0.0; }

  JumpSample draw(Engine& rng, double horizon) const {
    require(horizon > 0.0, ErrorCode::NonPositiveParameter, "horizon must be positive");
    JumpSample s;
    if (empty_tail()) {
      s.empty_tail = true;
      return s;
    }
    std::poisson_distribution<long long> pois(horizon * intensity());
    const long long count = pois(rng);
    std::uniform_real_distribution<double> ut(0.0, horizon);
    s.times.resize(count);
    s.sizes.resize(count);
    for (long long j = 0; j < count; ++j) {
      s.times[j] = ut(rng);
      s.sizes[j] = table_->draw(rng);
    }
    return s;
  }

 private:
  double eps_;
  std::shared_ptr<JumpSizeTable> table_;
};

inline JumpSample sample_large_jumps(const LevyMeasure& m, double eps, double horizon, std::uint64_t seed) {
  const LargeJumpSampler sampler(m, eps);
  Engine rng = make_stream(seed, 0);
  return sampler.draw(rng, horizon);
}

/// Options of the small-jump functional sampler.
struct SmallJumpOptions {
  /// Shells whose expected jump count per sample exceeds this are replaced by
  /// a centred Gaussian with the shell's exact variance.
  double max_exact_jumps = 4096.0;
  /// Ratio between consecutive shell boundaries.
  double shell_ratio = 2.0;
  /// Largest tolerated sigma(inner_eps)^2 / sigma(eps)^2.
  double max_discarded_variance = 0.1;
  int time_panels = 64;
};

struct SmallJumpDiagnostics {
  double sigma_eps = 0.0;
  double sigma_inner = 0.0;
  double discarded_variance_fraction = 0.0;
  double h_l2 = 0.0;  // int_0^t h^2
  std::size_t exact_shells = 0;
  std::size_t gaussian_shells = 0;
  /// Largest Lyapunov ratio sum |x|^3 / (sum x^2)^{3/2} over the shells that
  /// were replaced by a Gaussian, computed with per-sample expected counts.
  double max_gaussian_shell_lyapunov = 0.0;
};

/// Samples of F = sigma(eps)^{-1} int_0^t int_{inner < |x| <= eps} h(s) x dN~
/// (compensated). The region is cut into geometric shells; each shell is
/// simulated jump by jump when its expected count is moderate and replaced by
/// a centred Gaussian of the exact variance otherwise.
class SmallJumpSampler {
 public:
  SmallJumpSampler(const LevyMeasure& m, double eps, std::function<double(double)> h, double t, double inner_eps,
                   SmallJumpOptions opt = {})
      : h_(std::move(h)), t_(t) {
    require(t > 0.0, ErrorCode::NonPositiveParameter, "t must be positive");
    require(inner_eps > 0.0 && inner_eps < eps, ErrorCode::InvalidParameter, "need 0 < inner_eps < eps");
    require(opt.shell_ratio > 1.0, ErrorCode::InvalidParameter, "shell ratio must exceed 1");
    diag_.sigma_eps = sigma_eps(m, eps);
    if (!(diag_.sigma_eps > 0.0)) fail(ErrorCode::ZeroVariance, "sigma(eps) vanishes");
    diag_.sigma_inner = sigma_eps(m, inner_eps);
    diag_.discarded_variance_fraction =
        diag_.sigma_inner * diag_.sigma_inner / (diag_.sigma_eps * diag_.sigma_eps);
    if (diag_.discarded_variance_fraction > opt.max_discarded_variance * (1.0 + 1e-9))
      fail(ErrorCode::TruncationTooCoarse,
           "sigma(inner_eps)^2/sigma(eps)^2 = " + std::to_string(diag_.discarded_variance_fraction) +
               " exceeds " + std::to_string(opt.max_discarded_variance));
    h_int_ = quad::composite(h_, 0.0, t, opt.time_panels, 16);
    diag_.h_l2 = quad::composite([this](double s) { return h_(s) * h_(s); }, 0.0, t, opt.time_panels, 16);

    double hi = eps;
    while (hi > inner_eps) {
      const double lo = std::max(inner_eps, hi / opt.shell_ratio);
      Shell s;
      s.lo = lo;
      s.hi = hi;
      s.mass = truncated_moment(m, 0.0, lo, hi);
      s.first = truncated_moment(m, 1.0, lo, hi, true);
      s.second = truncated_moment(m, 2.0, lo, hi);
      const double expected = t * s.mass;
      if (expected > 0.0 && expected <= opt.max_exact_jumps) {
        s.table = std::make_shared<JumpSizeTable>(m, lo, hi);
        ++diag_.exact_shells;
      } else if (expected > 0.0) {
        s.gaussian = true;
        const double third = truncated_moment(m, 3.0, lo, hi);
        diag_.max_gaussian_shell_lyapunov =
            std::max(diag_.max_gaussian_shell_lyapunov, t * third / std::pow(t * s.second, 1.5));
        ++diag_.gaussian_shells;
      }
      shells_.push_back(std::move(s));
      hi = lo;
    }
  }

  const SmallJumpDiagnostics& diagnostics() const { return diag_; }

  /// Exact variance of the returned value: int h^2 times the retained fraction.
  double target_variance() const { return diag_.h_l2 * (1.0 - diag_.discarded_variance_fraction); }

  double draw(Engine& rng) const {
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ut(0.0, t_);
    double total = 0.0;
    for (const Shell& s : shells_) {
      if (s.gaussian) {
        total += std::sqrt(diag_.h_l2 * s.second) * nd(rng);
      } else if (s.table) {
        std::poisson_distribution<long long> pois(t_ * s.mass);
        const long long count = pois(rng);
        double acc = 0.0;
        for (long long j = 0; j < count; ++j) {
          const double tau = ut(rng);
          acc += h_(tau) * s.table->draw(rng);
        }
        total += acc - h_int_ * s.first;
      }
    }
    return total / diag_.sigma_eps;
  }

 private:
  struct Shell {
    double lo = 0.0, hi = 0.0;
    double mass = 0.0, first = 0.0, second = 0.0;
    bool gaussian = false;
    std::shared_ptr<JumpSizeTable> table;
  };

  std::function<double(double)> h_;
  double t_;
  double h_int_ = 0.0;
  std::vector<Shell> shells_;
  SmallJumpDiagnostics diag_;
};

/// `count` samples of the normalised small-jump functional (see
/// SmallJumpSampler), one per stream (seed, r).
inline EmpiricalSample sample_small_jump_functional(const LevyMeasure& m, double eps, std::function<double(double)> h,
                                                    double t, double inner_eps, std::size_t count,
                                                    std::uint64_t seed, SmallJumpOptions opt = {}) {
  const SmallJumpSampler sampler(m, eps, std::move(h), t, inner_eps, opt);
  std::vector<double> v = replicate(count, seed, [&](Engine& rng, std::size_t) { return sampler.draw(rng); });
  return EmpiricalSample::from(std::move(v), seed);
}

}  // namespace mstein
