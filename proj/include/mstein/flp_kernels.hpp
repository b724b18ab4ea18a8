#pragma once

// Molchan-Golosov and Mandelbrot-Van Ness kernels of fractional Brownian
// motion, their Gram values, and the hybrid fractional Levy simulator
// sigma(eps) B^H_t + sum of kernel-weighted large jumps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "mstein/error.hpp"
#include "mstein/gauss_paths.hpp"
#include "mstein/levy_jumps.hpp"
#include "mstein/quadrature.hpp"
#include "mstein/rng.hpp"

namespace mstein {

enum class KernelKind { MolchanGolosov, MandelbrotVanNess };

struct FractionalKernel {
  double H = 0.7;
  KernelKind kind = KernelKind::MolchanGolosov;
  int quad_points = 32;  // Gauss-Legendre order of each inner panel

  FractionalKernel() = default;
  FractionalKernel(double h, KernelKind k = KernelKind::MolchanGolosov, int points = 32)
      : H(h), kind(k), quad_points(points) {
    require_hurst(H);
    require(H != 0.5, ErrorCode::HurstOutOfRange, "fractional kernels need H != 1/2");
    require(points >= 4, ErrorCode::InvalidParameter, "need at least 4 quadrature points");
  }
};

/// c_H^{(1)} (H < 1/2) or c_H^{(2)} (H > 1/2).
inline double mg_constant(double H) {
  require_hurst(H);
  require(H != 0.5, ErrorCode::HurstOutOfRange, "MG constant undefined at H = 1/2");
  auto beta = [](double x, double y) { return std::exp(std::lgamma(x) + std::lgamma(y) - std::lgamma(x + y)); };
  if (H < 0.5) return std::sqrt(2.0 * H / ((1.0 - 2.0 * H) * beta(1.0 - 2.0 * H, H + 0.5)));
  return std::sqrt(H * (2.0 * H - 1.0) / beta(2.0 - 2.0 * H, H - 0.5));
}

/// C_H = sqrt(2H sin(pi H) Gamma(2H)) / Gamma(H + 1/2), normalised so that
/// Var[B_1^H] = 1.
inline double mvn_constant(double H) {
  require_hurst(H);
  return std::sqrt(2.0 * H * std::sin(std::numbers::pi * H) * std::tgamma(2.0 * H)) / std::tgamma(H + 0.5);
}

namespace detail {

// int_0^V g(v) dv where g changes character near v = knee: one panel below
// the knee, geometric panels (ratio 4) above it.
template <class G>
double knee_integral(G&& g, double V, double knee, int order) {
  if (V <= 0.0) return 0.0;
  knee = std::clamp(knee, 0.0, V);
  double sum = knee > 0.0 ? quad::panel(g, 0.0, knee, order) : 0.0;
  double lo = knee > 0.0 ? knee : V * 1e-300;
  while (lo < V) {
    const double hi = std::min(V, lo * 4.0);
    sum += quad::panel(g, lo, hi, order);
    lo = hi;
  }
  return sum;
}

}  // namespace detail

/// Molchan-Golosov kernel K_H(t, s) for 0 < s < t. The inner integrals are
/// rewritten with v = (u - s)^{H -+ 1/2}, which turns the integrable power
/// singularity at u = s into a smooth integrand.
inline double mg_kernel(const FractionalKernel& k, double t, double s) {
  require(k.kind == KernelKind::MolchanGolosov, ErrorCode::InvalidParameter, "kernel is not Molchan-Golosov");
  if (!(s > 0.0) || !(s < t)) fail(ErrorCode::SingularPoint, "MG kernel needs 0 < s < t");
  const double H = k.H;
  if (H > 0.5) {
    // int_s^t (u-s)^{H-3/2} u^{H-1/2} du = (1/(H-1/2)) int_0^V (s + v^p)^{H-1/2} dv
    const double a = H - 0.5, p = 1.0 / a;
    const double V = std::pow(t - s, a);
    auto g = [=](double v) { return std::pow(s + std::pow(v, p), a); };
    const double inner = detail::knee_integral(g, V, std::pow(s, a), k.quad_points) / a;
    return mg_constant(H) * std::pow(s, 0.5 - H) * inner;
  }
  // int_s^t u^{H-3/2} (u-s)^{H-1/2} du = (1/(H+1/2)) int_0^V (s + v^p)^{H-3/2} dv
  const double b = H + 0.5, p = 1.0 / b;
  const double V = std::pow(t - s, b);
  auto g = [=](double v) { return std::pow(s + std::pow(v, p), H - 1.5); };
  const double inner = detail::knee_integral(g, V, std::pow(s, b), k.quad_points) / b;
  const double first = std::pow(t / s, H - 0.5) * std::pow(t - s, H - 0.5);
  return mg_constant(H) * (first - (H - 0.5) * std::pow(s, 0.5 - H) * inner);
}

/// Mandelbrot-Van Ness kernel C_H((t-s)_+^{H-1/2} - (-s)_+^{H-1/2}), s < t.
inline double mvn_kernel(const FractionalKernel& k, double t, double s) {
  require(s < t, ErrorCode::InvalidParameter, "MvN kernel needs s < t");
  const double a = k.H - 0.5;
  const double first = std::pow(t - s, a);
  const double second = s < 0.0 ? std::pow(-s, a) : 0.0;
  return mvn_constant(k.H) * (first - second);
}

/// Gram value int_0^{min(t,s)} K(t,u) K(s,u) du of the MG kernel.
inline double mg_gram(const FractionalKernel& k, double t, double s, int levels = 40) {
  require(t > 0.0 && s > 0.0, ErrorCode::NonPositiveParameter, "Gram value needs t, s > 0");
  const double lo = std::min(t, s);
  auto f = [&](double u) { return mg_kernel(k, t, u) * mg_kernel(k, s, u); };
  return quad::graded(f, 0.0, lo, true, true, levels, 16, 8);
}

/// fBm covariance (|t|^{2H} + |s|^{2H} - |t-s|^{2H}) / 2.
inline double fbm_cov(double H, double t, double s) {
  return 0.5 * (std::pow(std::abs(t), 2 * H) + std::pow(std::abs(s), 2 * H) - std::pow(std::abs(t - s), 2 * H));
}

/// K(1, r) on a uniform grid in logit(r), with K(t, s) = t^{H-1/2} K(1, s/t).
/// Interpolation is linear in (logit r, log K); both tails are power laws in r
/// and extend linearly in those coordinates.
class MgKernelTable {
 public:
  explicit MgKernelTable(const FractionalKernel& k, std::size_t points = 16385, double logit_range = 30.0)
      : H_(k.H), lo_(-logit_range), step_(2.0 * logit_range / static_cast<double>(points - 1)) {
    require(points >= 3, ErrorCode::InvalidParameter, "table needs at least 3 points");
    log_k_.resize(points);
    for (std::size_t i = 0; i < points; ++i) {
      const double z = lo_ + step_ * static_cast<double>(i);
      const double r = 1.0 / (1.0 + std::exp(-z));
      const double val = mg_kernel(k, 1.0, std::clamp(r, 1e-300, std::nextafter(1.0, 0.0)));
      require(val > 0.0, ErrorCode::InvalidParameter, "MG kernel table expects positive values");
      log_k_[i] = std::log(val);
    }
  }

  /// K(1, r), 0 < r < 1.
  double unit(double r) const {
    const double z = std::log(r) - std::log1p(-r);
    const double x = (z - lo_) / step_;
    const std::size_t last = log_k_.size() - 1;
    std::size_t i;
    if (x <= 0.0) {
      i = 0;
    } else if (x >= static_cast<double>(last)) {
      i = last - 1;
    } else {
      i = static_cast<std::size_t>(x);
    }
    const double w = x - static_cast<double>(i);
    return std::exp(log_k_[i] + w * (log_k_[i + 1] - log_k_[i]));
  }

  /// K(t, s) for 0 < s < t; zero for s >= t.
  double operator()(double t, double s) const {
    if (!(s < t) || !(s > 0.0)) return 0.0;
    return std::pow(t, H_ - 0.5) * unit(s / t);
  }

 private:
  double H_;
  double lo_, step_;
  std::vector<double> log_k_;
};

struct FlpOptions {
  Factorization factorization = Factorization::Auto;
  double symmetry_tol = 1e-9;  // relative to the tail second moment
};

/// Hybrid fLpMG sampler on the grid {0, dt, ..., n dt}: sigma(eps) B^H plus
/// the large-jump part sum_j K(t, tau_j) x_j over jumps with tau_j < t.
class FlpHybridSampler {
 public:
  FlpHybridSampler(const FractionalKernel& k, const LevyMeasure& m, double eps, std::size_t n, double dt,
                   FlpOptions opt = {})
      : table_(std::make_shared<MgKernelTable>(k)),
        fbm_(std::make_shared<FbmSampler>(k.H, n, dt, opt.factorization)),
        jumps_(m, eps),
        sigma_(sigma_eps(m, eps)),
        n_(n),
        dt_(dt) {
    require(k.kind == KernelKind::MolchanGolosov, ErrorCode::InvalidParameter, "hybrid simulation uses the MG kernel");
    require(n >= 1, ErrorCode::InvalidParameter, "need at least one step");
    require(dt > 0.0, ErrorCode::NonPositiveParameter, "dt must be positive");
    time_scale_.resize(n + 1);
    for (std::size_t i = 0; i <= n; ++i) time_scale_[i] = std::pow(static_cast<double>(i) * dt, k.H - 0.5);
    tail_second_ = truncated_moment(m, 2.0, eps, m.support_max());
    const double drift = truncated_moment(m, 1.0, eps, m.support_max(), true);
    const double scale = std::max(truncated_moment(m, 1.0, eps, m.support_max()), 1e-300);
    if (std::abs(drift) > opt.symmetry_tol * scale)
      fail(ErrorCode::AsymmetricMeasure,
           "large-jump compensator int x 1{|x|>eps} dnu = " + std::to_string(drift) + " is not zero");
  }

  double sigma() const { return sigma_; }
  double tail_second_moment() const { return tail_second_; }
  const MgKernelTable& table() const { return *table_; }

  /// One path; `gauss` drives the fBm part and `poisson` the jumps.
  std::vector<double> draw(Engine& gauss, Engine& poisson) const {
    std::vector<double> out = fbm_->draw(gauss);
    for (double& v : out) v *= sigma_;
    const double horizon = static_cast<double>(n_) * dt_;
    const JumpSample js = jumps_.draw(poisson, horizon);
    for (std::size_t j = 0; j < js.sizes.size(); ++j) {
      const double tau = js.times[j], x = js.sizes[j];
      const std::size_t first = static_cast<std::size_t>(std::floor(tau / dt_)) + 1;
      for (std::size_t i = first; i <= n_; ++i) {
        const double t = static_cast<double>(i) * dt_;
        if (tau > 0.0 && tau < t) out[i] += time_scale_[i] * table_->unit(tau / t) * x;
      }
    }
    return out;
  }

 private:
  std::shared_ptr<MgKernelTable> table_;
  std::shared_ptr<FbmSampler> fbm_;
  LargeJumpSampler jumps_;
  double sigma_;
  double tail_second_ = 0.0;
  std::vector<double> time_scale_;  // t_i^{H-1/2}
  std::size_t n_;
  double dt_;
};

/// `count` hybrid paths; path r uses streams (seed, 2r) and (seed, 2r + 1).
inline std::vector<PathGrid> simulate_flp_hybrid(const FractionalKernel& k, const LevyMeasure& m, double eps,
                                                 std::size_t n, double dt, std::size_t count, std::uint64_t seed,
                                                 FlpOptions opt = {}) {
  const FlpHybridSampler sampler(k, m, eps, n, dt, opt);
  std::vector<PathGrid> out(count);
  parallel_for(count, [&](std::size_t r) {
    Engine g = make_stream(seed, 2 * r);
    Engine p = make_stream(seed, 2 * r + 1);
    out[r] = PathGrid{0.0, dt, sampler.draw(g, p), seed};
  });
  return out;
}

/// Writes MG kernel values as `t,s,K` rows on a grid of t and s/t values.
inline void write_kernel_csv(const std::string& path, const FractionalKernel& k, const std::vector<double>& ts,
                             const std::vector<double>& ratios) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) fail(ErrorCode::IoFailure, "cannot open " + path + " for writing");
  std::fputs("t,s,K\n", f);
  for (double t : ts)
    for (double r : ratios) std::fprintf(f, "%.17g,%.17g,%.17g\n", t, r * t, mg_kernel(k, t, r * t));
  if (std::fclose(f) != 0) fail(ErrorCode::IoFailure, "failed writing " + path);
}

}  // namespace mstein
