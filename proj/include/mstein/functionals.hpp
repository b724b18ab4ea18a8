#pragma once

// Time-average functionals built from simulated paths: the normalised integral
// of a subordinated stationary field and the product of two independent OU
// processes, one Gaussian and one pure-jump. Exact variance formulas and the
// closed-form bounds of the product example live here too.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mstein/covmodels.hpp"
#include "mstein/error.hpp"
#include "mstein/gauss_paths.hpp"
#include "mstein/hermite.hpp"
#include "mstein/levy_jumps.hpp"
#include "mstein/rng.hpp"

namespace mstein {

/// Trapezoid rule on a uniform grid.
inline double trapezoid(const std::vector<double>& y, double dt) {
  if (y.size() < 2) return 0.0;
  double s = 0.5 * (y.front() + y.back());
  for (std::size_t k = 1; k + 1 < y.size(); ++k) s += y[k];
  return s * dt;
}

namespace detail {

inline std::size_t steps_for(double T, double dt) {
  require(T > 0.0 && dt > 0.0, ErrorCode::NonPositiveParameter, "T and dt must be positive");
  const double n = T / dt;
  const double r = std::round(n);
  require(r >= 1.0 && std::abs(n - r) <= 1e-9 * n, ErrorCode::GridMismatch,
          "T = " + std::to_string(T) + " is not a multiple of dt = " + std::to_string(dt));
  return static_cast<std::size_t>(r);
}

inline void require_grid(const PathGrid& p, double T, double dt) {
  const std::size_t n = steps_for(T, dt);
  if (p.values.size() != n + 1 || std::abs(p.dt - dt) > 1e-12 * dt)
    fail(ErrorCode::GridMismatch, "path has " + std::to_string(p.values.size()) + " points at dt=" +
                                      std::to_string(p.dt) + ", expected " + std::to_string(n + 1) +
                                      " at dt=" + std::to_string(dt));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subordinated field F_T = Vtilde(T)^{-1/2} int_0^T (f(X_t) - E f(Z)) dt

struct SubordinatedConfig {
  CovarianceModel model;
  std::function<double(double)> f;
  HermiteExpansion expansion;
  /// Whether f is declared even; required when the covariance is integrable.
  bool symmetric = false;
  double T = 100.0;
  double dt = 1.0;
  std::size_t replications = 1000;

  /// Checks membership of f in the admissible class for the model's decay:
  /// a nonzero first Hermite coefficient under power decay, an even f under
  /// an integrable covariance. The expansion has to agree with the
  /// declaration, so a mislabelled odd function is caught too.
  void validate() const {
    require(static_cast<bool>(f), ErrorCode::InvalidParameter, "f is not set");
    require(replications >= 1, ErrorCode::InvalidParameter, "replications must be >= 1");
    detail::steps_for(T, dt);
    require(model.variance_at_zero > 0.0, ErrorCode::InvalidParameter, "model variance must be positive");
    if (model.decay.is_power()) {
      require(std::abs(expansion.first()) > kCoefficientZeroTol, ErrorCode::InvalidParameter,
              "power-decay covariance needs E[f(Z)Z] != 0");
    } else {
      require(symmetric, ErrorCode::InvalidParameter, "integrable covariance needs a symmetric f");
      require(expansion.odd_coefficients_vanish(), ErrorCode::InvalidParameter,
              "f is declared symmetric but has odd Hermite coefficients");
    }
  }
};

/// Builds a config, expanding f to order Q.
inline SubordinatedConfig make_subordinated(CovarianceModel model, std::function<double(double)> f, int Q,
                                            bool symmetric, double T, double dt, std::size_t replications) {
  SubordinatedConfig c;
  c.model = std::move(model);
  c.expansion = expand(f, Q);
  c.f = std::move(f);
  c.symmetric = symmetric;
  c.T = T;
  c.dt = dt;
  c.replications = replications;
  c.validate();
  return c;
}

inline double subordinated_functional(const PathGrid& path, const SubordinatedConfig& cfg) {
  detail::require_grid(path, cfg.T, cfg.dt);
  const double c0 = cfg.expansion.mean();
  // Differences below the rounding of c0 itself are quadrature noise in the
  // mean; snapping them keeps a constant f at exactly zero.
  const double floor = 8.0 * std::numeric_limits<double>::epsilon() * std::abs(c0);
  std::vector<double> y(path.values.size());
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double d = cfg.f(path.values[k]) - c0;
    y[k] = std::abs(d) <= floor ? 0.0 : d;
  }
  return trapezoid(y, cfg.dt) / std::sqrt(vtilde(cfg.model.decay, cfg.T));
}

/// Vtilde(T)^{-1} sum_q c_q^2 q! int int C(t-s)^q over the truncated expansion.
inline double subordinated_variance(const SubordinatedConfig& cfg) {
  double v = 0.0;
  for (int q = 1; q < static_cast<int>(cfg.expansion.coefficients.size()); ++q) {
    const double c = cfg.expansion.c(q);
    if (std::abs(c) <= kCoefficientZeroTol) continue;
    v += c * c * factorial(q) * covariance_power_integral(cfg.model, q, cfg.T);
  }
  return v / vtilde(cfg.model.decay, cfg.T);
}

/// Exact variance of the trapezoid sum that subordinated_functional computes,
/// i.e. the continuous value above with the integrals replaced by the grid
/// sums. Separates discretisation bias from Monte Carlo noise.
inline double subordinated_variance_discrete(const SubordinatedConfig& cfg) {
  const std::size_t n = detail::steps_for(cfg.T, cfg.dt);
  // sum_{i,j} w_i w_j g(|i-j|) with trapezoid weights w (1/2 at both ends):
  // lag 0 carries n - 1/2, lag 0 < k < n carries 2(n - k) and lag n carries 1/2.
  auto lag_weight = [n](std::size_t k) {
    const double nd = static_cast<double>(n);
    if (k == 0) return nd - 0.5;
    if (k == n) return 0.5;
    return 2.0 * (nd - static_cast<double>(k));
  };
  double v = 0.0;
  for (int q = 1; q < static_cast<int>(cfg.expansion.coefficients.size()); ++q) {
    const double c = cfg.expansion.c(q);
    if (std::abs(c) <= kCoefficientZeroTol) continue;
    double s = 0.0;
    for (std::size_t k = 0; k <= n; ++k) s += lag_weight(k) * std::pow(cfg.model(static_cast<double>(k) * cfg.dt), q);
    v += c * c * factorial(q) * s * cfg.dt * cfg.dt;
  }
  return v / vtilde(cfg.model.decay, cfg.T);
}

/// Replicated F_T samples; replicate r draws from stream (seed, r).
inline std::vector<double> simulate_subordinated(const SubordinatedConfig& cfg, std::uint64_t seed,
                                                 Factorization method = Factorization::Auto) {
  cfg.validate();
  const std::size_t n = detail::steps_for(cfg.T, cfg.dt);
  const StationarySampler sampler(cfg.model, n + 1, cfg.dt, method);
  return replicate(cfg.replications, seed, [&](Engine& rng, std::size_t) {
    PathGrid p{0.0, cfg.dt, sampler.draw(rng), seed};
    return subordinated_functional(p, cfg);
  });
}

// ---------------------------------------------------------------------------
// Product OU functional F_T = T^{-1/2} int_0^T Y_t Z_t dt

enum class OuStart {
  FromZero,    // Y_0 = 0: covariance exp(-l|t-s|) - exp(-l(t+s))
  Stationary,  // Y_0 ~ N(0, 1)
};

struct ProductOUConfig {
  double lambda = 1.0;
  LevyMeasure measure;
  double T = 10.0;
  double dt = 0.05;
  std::size_t replications = 1000;
  OuStart start = OuStart::FromZero;

  void validate() const {
    require(lambda > 0.0 && std::isfinite(lambda), ErrorCode::NonPositiveParameter, "lambda must be positive");
    detail::steps_for(T, dt);
    require(replications >= 1, ErrorCode::InvalidParameter, "replications must be >= 1");
    require(lambda * dt <= 0.1 * (1.0 + 1e-12), ErrorCode::UnstableStep,
            "lambda * dt = " + std::to_string(lambda * dt) + " exceeds 0.1");
    if (measure.kind != LevyMeasure::Kind::Atomic)
      fail(ErrorCode::InfiniteActivity, "exact jump simulation needs an atomic measure; truncate first");
    const double m2 = truncated_moment(measure, 2.0, 0.0, measure.support_max());
    require(std::abs(m2 - 1.0) <= 1e-8, ErrorCode::InvalidParameter,
            "the Levy measure must have unit second moment, got " + std::to_string(m2));
    require(std::isfinite(truncated_moment(measure, 4.0, 0.0, measure.support_max())), ErrorCode::IntegralDiverged,
            "the Levy measure needs a finite fourth moment");
  }
};

/// Time step with lambda * dt = 0.05, adjusted down so that it divides T.
inline double default_product_ou_dt(double lambda, double T) {
  require(lambda > 0.0 && T > 0.0, ErrorCode::NonPositiveParameter, "lambda and T must be positive");
  return T / std::ceil(T * lambda / 0.05);
}

/// One (Y, Z) pair on {0, dt, ..., T}. Y follows the exact Gaussian AR(1)
/// recursion; Z decays exactly between jumps, gains sqrt(2 lambda) x at a
/// jump of size x, and carries the compensator drift of the first moment.
inline std::pair<PathGrid, PathGrid> product_ou_paths(const ProductOUConfig& cfg, Engine& gauss, Engine& jumps,
                                                      std::uint64_t seed = 0) {
  cfg.validate();
  const std::size_t n = detail::steps_for(cfg.T, cfg.dt);
  const double l = cfg.lambda, dt = cfg.dt;
  const double decay = std::exp(-l * dt);
  const double noise = std::sqrt(-std::expm1(-2.0 * l * dt));
  const double gain = std::sqrt(2.0 * l);

  std::vector<double> masses;
  double intensity = 0.0, first = 0.0;
  for (const auto& [x, w] : cfg.measure.atoms) {
    masses.push_back(w);
    intensity += w;
    first += w * x;
  }
  // int_{t_k}^{t_k+dt} sqrt(2l) e^{-l(t_k+dt-s)} ds * int x nu(dx)
  const double drift = gain * first * (-std::expm1(-l * dt)) / l;

  std::normal_distribution<double> normal;
  std::poisson_distribution<long> count(intensity * dt);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::discrete_distribution<std::size_t> pick(masses.begin(), masses.end());

  PathGrid Y{0.0, dt, std::vector<double>(n + 1), seed};
  PathGrid Z{0.0, dt, std::vector<double>(n + 1), seed};
  Y.values[0] = cfg.start == OuStart::Stationary ? normal(gauss) : 0.0;
  Z.values[0] = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    Y.values[k + 1] = decay * Y.values[k] + noise * normal(gauss);
    double z = decay * Z.values[k] - drift;
    for (long j = count(jumps); j > 0; --j) {
      const double age = dt * unif(jumps);  // time from the jump to t_{k+1}
      z += gain * cfg.measure.atoms[pick(jumps)].first * std::exp(-l * age);
    }
    Z.values[k + 1] = z;
  }
  return {std::move(Y), std::move(Z)};
}

inline double product_ou_functional(const PathGrid& Y, const PathGrid& Z, double T) {
  require(T > 0.0, ErrorCode::NonPositiveParameter, "T must be positive");
  detail::require_grid(Y, T, Y.dt);
  detail::require_grid(Z, T, Y.dt);
  std::vector<double> prod(Y.values.size());
  for (std::size_t k = 0; k < prod.size(); ++k) prod[k] = Y.values[k] * Z.values[k];
  return trapezoid(prod, Y.dt) / std::sqrt(T);
}

/// Replicated F_T samples. Replicate r uses streams (seed, 2r) for Y and
/// (seed, 2r + 1) for the jumps of Z.
inline std::vector<double> simulate_product_ou(const ProductOUConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<double> out(cfg.replications);
  parallel_for(cfg.replications, [&](std::size_t r) {
    Engine g = make_stream(seed, 2 * r), j = make_stream(seed, 2 * r + 1);
    const auto [Y, Z] = product_ou_paths(cfg, g, j, seed);
    out[r] = product_ou_functional(Y, Z, cfg.T);
  });
  return out;
}

/// Var[F_T] for paths started at zero, T^{-1} int int C(t,s)^2 dt ds:
/// T^{-1}(T/l - 6(1-e^{-2lT})/(4l^2) + 2T e^{-2lT}/l + (1-e^{-2lT})^2/(4l^2)).
inline double product_ou_variance_exact(double lambda, double T) {
  require(lambda > 0.0 && T > 0.0, ErrorCode::NonPositiveParameter, "lambda and T must be positive");
  const double e = std::exp(-2.0 * lambda * T);
  const double one_minus = -std::expm1(-2.0 * lambda * T);
  const double l2 = 4.0 * lambda * lambda;
  return (T / lambda - 6.0 * one_minus / l2 + 2.0 * T * e / lambda + one_minus * one_minus / l2) / T;
}

struct Section43Bounds {
  double first_derivative;   // bound on E||DF||^4, constant in T
  double cube;               // bound on E<|x|, |DF|^3>, ~ T^{-1/2}
  double contraction;        // bound on E||D^2F (x)_1 D^2F||^2, ~ T^{-1}
  double second_derivative;  // bound on E||<x, (D^2F)^2>||^2, ~ T^{-1}
};

/// The four closed-form bounds for the product example, with the moments
/// m3 = int |x|^3 nu and m4 = int x^4 nu read off the measure.
inline Section43Bounds section43_bounds(double lambda, const LevyMeasure& measure, double T) {
  require(lambda > 0.0 && T > 0.0, ErrorCode::NonPositiveParameter, "lambda and T must be positive");
  const double top = measure.support_max();
  const double m3 = truncated_moment(measure, 3.0, 0.0, top);
  const double m4 = truncated_moment(measure, 4.0, 0.0, top);
  Section43Bounds b;
  b.first_derivative = 2.0 * (4.0 + lambda * m4) * std::pow(2.0 / lambda, 2);
  b.cube = 4.0 * std::sqrt(2.0) * m3 / (std::pow(lambda, 1.5) * std::sqrt(T));
  b.contraction = 8.0 / (T * lambda * lambda);
  b.second_derivative = m3 * m3 * 4.0 / (lambda * lambda * T);
  return b;
}

/// Decay exponents d log(bound) / d log T estimated from T and 2T.
inline std::vector<double> section43_exponents(double lambda, const LevyMeasure& measure, double T) {
  const auto a = section43_bounds(lambda, measure, T);
  const auto b = section43_bounds(lambda, measure, 2.0 * T);
  auto e = [](double x, double y) { return std::log(y / x) / std::log(2.0); };
  return {e(a.first_derivative, b.first_derivative), e(a.cube, b.cube), e(a.contraction, b.contraction),
          e(a.second_derivative, b.second_derivative)};
}

}  // namespace mstein
