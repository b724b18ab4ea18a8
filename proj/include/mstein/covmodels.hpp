#pragma once

// Stationary covariance models with decay metadata, the normaliser Vtilde(T)
// and the limit-variance and rate predictions for subordinated time averages.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mstein/error.hpp"
#include "mstein/quadrature.hpp"

namespace mstein {

enum class DecayKind { IntegrableCovariance, PowerDecay };

/// Decay class of a covariance. For PowerDecay, C(T) ~ M T^{-alpha}.
struct DecayClass {
  DecayKind kind = DecayKind::IntegrableCovariance;
  double M = 0.0;
  double alpha = 0.0;

  static DecayClass integrable() { return {}; }
  static DecayClass power(double alpha, double M) {
    require(alpha > 0.0 && alpha < 1.0, ErrorCode::InvalidParameter,
            "power decay needs alpha in (0,1), got " + std::to_string(alpha));
    require(M != 0.0 && std::isfinite(M), ErrorCode::InvalidParameter, "power decay needs M != 0");
    return {DecayKind::PowerDecay, M, alpha};
  }
  bool is_power() const { return kind == DecayKind::PowerDecay; }
};

struct CovarianceModel {
  std::string id;
  std::function<double(double)> eval;  // C(T) for T >= 0
  double variance_at_zero = 1.0;
  DecayClass decay;
  /// Lags where C is not smooth; quadrature splits there.
  std::vector<double> kinks;
  /// Smallest lag at which `eval` is trusted. Zero for exact models; positive
  /// for models that only carry a large-lag expansion.
  double valid_from = 0.0;

  double operator()(double T) const { return eval(std::abs(T)); }
};

inline void require_hurst(double H) {
  if (!(H > 0.0 && H < 1.0))
    fail(ErrorCode::HurstOutOfRange, "Hurst index must lie in (0,1), got " + std::to_string(H));
}

/// Covariance of unit-step fractional Gaussian noise at lag T.
inline double fbm_increment_cov(double H, double T) {
  require_hurst(H);
  T = std::abs(T);
  const double h2 = 2.0 * H;
  if (T < 4.0)
    return 0.5 * (std::pow(T + 1.0, h2) + std::pow(std::abs(T - 1.0), h2) - 2.0 * std::pow(T, h2));
  // The direct form cancels badly at large lags. With x = 1/T it equals
  // T^{2H} sum_{k even >= 2} binom(2H, k) x^k.
  const double x2 = 1.0 / (T * T);
  double binom = h2 * (h2 - 1.0) / 2.0;
  double xk = x2;
  double sum = 0.0;
  for (int k = 2; k < 80; k += 2) {
    const double term = binom * xk;
    sum += term;
    if (std::abs(term) <= 1e-17 * std::abs(sum)) break;
    binom *= (h2 - k) * (h2 - k - 1.0) / ((k + 1.0) * (k + 2.0));
    xk *= x2;
  }
  return std::pow(T, h2) * sum;
}

inline DecayClass fbm_increment_decay(double H) {
  require_hurst(H);
  if (H <= 0.5) return DecayClass::integrable();
  return DecayClass::power(2.0 - 2.0 * H, H * (2.0 * H - 1.0));
}

inline CovarianceModel fbm_increments(double H) {
  require_hurst(H);
  return {"fbm-increments", [H](double T) { return fbm_increment_cov(H, T); }, 1.0,
          fbm_increment_decay(H), {1.0}, 0.0};
}

/// C(T) = exp(-lambda |T|), the stationary OU covariance with unit variance.
inline CovarianceModel ou_exponential(double lambda) {
  require(lambda > 0.0, ErrorCode::NonPositiveParameter, "lambda must be positive");
  return {"ou-exponential", [lambda](double T) { return std::exp(-lambda * std::abs(T)); }, 1.0,
          DecayClass::integrable(), {}, 0.0};
}

/// Large-lag expansion of the fractional OU covariance with N terms:
/// (s^2/2) sum_{n=1..N} lambda^{-2n} prod_{k=0}^{2n-1}(2H-k) T^{2H-2n}.
inline double fou_cov_asymptotic(double H, double lambda, double sigma_t, int N, double T) {
  require_hurst(H);
  require(H != 0.5, ErrorCode::HurstOutOfRange, "the expansion degenerates at H = 1/2");
  require(lambda > 0.0, ErrorCode::NonPositiveParameter, "lambda must be positive");
  require(sigma_t > 0.0, ErrorCode::NonPositiveParameter, "sigma_t must be positive");
  require(N >= 1, ErrorCode::InvalidParameter, "N must be >= 1");
  require(T > 0.0, ErrorCode::NonPositiveParameter, "T must be positive");
  double sum = 0.0;
  double prod = 1.0;
  for (int n = 1; n <= N; ++n) {
    prod *= (2.0 * H - (2 * n - 2)) * (2.0 * H - (2 * n - 1));
    sum += std::pow(lambda, -2.0 * n) * prod * std::pow(T, 2.0 * H - 2.0 * n);
  }
  return 0.5 * sigma_t * sigma_t * sum;
}

/// Fractional OU model carrying only its large-lag expansion (three terms).
/// C(0) is the stationary variance s^2 Gamma(2H+1) / (2 lambda^{2H}). The lag
/// from which `eval` is trusted is where the correction terms fall below 1% of
/// the leading one.
inline CovarianceModel fou(double H, double lambda, double sigma_t, int N = 3) {
  require_hurst(H);
  require(H != 0.5, ErrorCode::HurstOutOfRange, "fou model needs H != 1/2");
  require(lambda > 0.0, ErrorCode::NonPositiveParameter, "lambda must be positive");
  require(sigma_t > 0.0, ErrorCode::NonPositiveParameter, "sigma_t must be positive");
  const double c0 = sigma_t * sigma_t * std::tgamma(2.0 * H + 1.0) / (2.0 * std::pow(lambda, 2.0 * H));
  const double M = H * (2.0 * H - 1.0) * sigma_t * sigma_t / (lambda * lambda);
  const DecayClass decay = H > 0.5 ? DecayClass::power(2.0 - 2.0 * H, M) : DecayClass::integrable();
  // Coefficients a_n of T^{2H-2n}, to locate where the leading term dominates.
  std::vector<double> a;
  double prod = 1.0;
  for (int n = 1; n <= N; ++n) {
    prod *= (2.0 * H - (2 * n - 2)) * (2.0 * H - (2 * n - 1));
    a.push_back(std::pow(lambda, -2.0 * n) * prod);
  }
  double from = 0.0;
  for (int n = 2; n <= N; ++n)
    from = std::max(from, std::pow(std::abs(a[n - 1] / a[0]) / 1e-2, 1.0 / (2.0 * (n - 1))));
  return {"fou",
          [=](double T) { return fou_cov_asymptotic(H, lambda, sigma_t, N, std::max(T, from)); },
          c0,
          decay,
          {},
          from};
}

/// Vtilde(T): T for integrable covariances, the double integral of x^{-alpha}
/// over 0 <= x <= y <= T for power decay.
inline double vtilde(const DecayClass& decay, double T) {
  require(T > 0.0, ErrorCode::NonPositiveParameter, "T must be positive");
  if (!decay.is_power()) return T;
  const double a = decay.alpha;
  require(a > 0.0 && a < 1.0, ErrorCode::InvalidParameter, "alpha must lie in (0,1)");
  return std::pow(T, 2.0 - a) / ((1.0 - a) * (2.0 - a));
}

inline double asymptotic_variance(double M, double c1) { return 2.0 * M * c1 * c1; }

/// Predicted Wasserstein rate: T^{-1/4} for integrable covariances, and
/// max{V(T), T|V'(T)|}^{1/4} with V(T) = T^{-alpha} otherwise.
inline double predicted_rate(const DecayClass& decay, double T) {
  require(T > 0.0, ErrorCode::NonPositiveParameter, "T must be positive");
  if (!decay.is_power()) return std::pow(T, -0.25);
  return std::pow(std::max(1.0, decay.alpha) * std::pow(T, -decay.alpha), 0.25);
}

/// Integral of C(t-s)^q over [0,T]^2, through the reduction
/// 2 int_0^T (T-u) C(u)^q du with graded panels at every kink.
inline double covariance_power_integral(const CovarianceModel& model, int q, double T) {
  require(q >= 1, ErrorCode::InvalidParameter, "q must be >= 1");
  require(T > 0.0, ErrorCode::NonPositiveParameter, "T must be positive");
  auto integrand = [&](double u) { return (T - u) * std::pow(model(u), q); };
  std::vector<double> breaks = model.kinks;
  // Extra breaks every decade keep panels proportionate on long ranges.
  for (double b = 10.0; b < T; b *= 10.0) breaks.push_back(b);
  std::sort(breaks.begin(), breaks.end());
  return 2.0 * quad::piecewise_graded(integrand, 0.0, T, breaks, 40, 16, 8);
}

/// Vtilde(T)^{-1} times the integral above.
inline double normalized_power_integral(const CovarianceModel& model, int q, double T) {
  return covariance_power_integral(model, q, T) / vtilde(model.decay, T);
}

/// Largest |C(T)| / C(0) over `points` log-spaced lags in [lo, hi].
inline double max_correlation(const CovarianceModel& model, double lo, double hi, int points = 1000) {
  require(lo > 0.0 && hi > lo && points >= 2, ErrorCode::InvalidParameter, "bad lag grid");
  double worst = 0.0;
  for (int i = 0; i < points; ++i) {
    const double T = lo * std::pow(hi / lo, static_cast<double>(i) / (points - 1));
    worst = std::max(worst, std::abs(model(T)) / model.variance_at_zero);
  }
  return worst;
}

/// C(T) T^{alpha} at T, which tends to M for a power-decay model.
inline double decay_ratio(const CovarianceModel& model, double T) {
  require(model.decay.is_power(), ErrorCode::InvalidParameter, "model has no power decay");
  return model(T) * std::pow(T, model.decay.alpha);
}

}  // namespace mstein
