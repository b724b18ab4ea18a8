#pragma once

// Exact-in-distribution samplers for stationary Gaussian sequences, fBm built
// from its increments, and an Euler scheme for the fractional OU equation.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fftw3.h>

#include "mstein/covmodels.hpp"
#include "mstein/error.hpp"
#include "mstein/rng.hpp"

namespace mstein {

struct PathGrid {
  double t0 = 0.0;
  double dt = 1.0;
  std::vector<double> values;
  std::uint64_t seed = 0;

  double time(std::size_t k) const { return t0 + static_cast<double>(k) * dt; }
};

enum class Factorization {
  Cholesky,   // dense square root, always available for PSD input
  Circulant,  // circulant embedding; NotPSD if the embedding has a negative eigenvalue
  Auto,       // circulant when its embedding is nonnegative, dense otherwise
};

namespace detail {

// FFTW planning is not thread-safe; execution of an existing plan on fresh
// arrays is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class FftPlan {
 public:
  explicit FftPlan(int m) : m_(m) {
    std::vector<fftw_complex> a(m), b(m);
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_1d(m, a.data(), b.data(), FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!plan_) fail(ErrorCode::InvalidParameter, "FFTW could not plan a transform of size " + std::to_string(m));
  }
  ~FftPlan() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;

  void forward(std::vector<std::complex<double>>& in, std::vector<std::complex<double>>& out) const {
    fftw_execute_dft(plan_, reinterpret_cast<fftw_complex*>(in.data()),
                     reinterpret_cast<fftw_complex*>(out.data()));
  }
  int size() const { return m_; }

 private:
  int m_;
  fftw_plan plan_ = nullptr;
};

}  // namespace detail

/// Sampler for a centred stationary sequence X_0..X_{n-1} with
/// Cov(X_i, X_j) = C(|i - j| dt). The factorisation happens once at
/// construction; `draw` is const and may run concurrently with separate engines.
class StationarySampler {
 public:
  StationarySampler(const CovarianceModel& model, std::size_t n, double dt,
                    Factorization method = Factorization::Cholesky)
      : n_(n) {
    require(n >= 1, ErrorCode::InvalidParameter, "need at least one grid point");
    require(dt > 0.0, ErrorCode::NonPositiveParameter, "dt must be positive");
    auto lag = [&](std::size_t k) { return model(static_cast<double>(k) * dt); };
    lags_.resize(n);
    for (std::size_t k = 0; k < n; ++k) lags_[k] = lag(k);
    c0_ = lags_[0];
    require(c0_ >= 0.0, ErrorCode::NotPSD, "C(0) is negative");
    if (method != Factorization::Cholesky && n >= 2 && try_circulant(lag)) return;
    if (method == Factorization::Circulant && n >= 2)
      fail(ErrorCode::NotPSD, "circulant embedding has a negative eigenvalue");
    dense_factor();
  }

  std::size_t size() const { return n_; }
  bool uses_circulant() const { return static_cast<bool>(plan_); }
  /// Dense factor L with L L^T = Sigma; empty on the circulant path.
  const Eigen::MatrixXd& factor() const { return factor_; }

  Eigen::MatrixXd covariance() const {
    Eigen::MatrixXd s(n_, n_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) s(i, j) = lags_[i > j ? i - j : j - i];
    return s;
  }

  std::vector<double> draw(Engine& rng) const {
    std::normal_distribution<double> nd;
    std::vector<double> out(n_);
    if (plan_) {
      const int m = plan_->size();
      std::vector<std::complex<double>> w(m), y(m);
      for (int k = 0; k < m; ++k) {
        const double re = nd(rng);
        const double im = nd(rng);
        w[k] = sqrt_eig_[k] * std::complex<double>(re, im);
      }
      plan_->forward(w, y);
      for (std::size_t k = 0; k < n_; ++k) out[k] = y[k].real();
      return out;
    }
    Eigen::VectorXd z(n_);
    for (std::size_t k = 0; k < n_; ++k) z[k] = nd(rng);
    const Eigen::VectorXd x = triangular_ ? Eigen::VectorXd(factor_.triangularView<Eigen::Lower>() * z)
                                          : Eigen::VectorXd(factor_ * z);
    for (std::size_t k = 0; k < n_; ++k) out[k] = x[k];
    return out;
  }

 private:
  template <class Lag>
  bool try_circulant(Lag&& lag) {
    // Smallest power of two m >= 2(n-1); the circulant's first row needs
    // C at lags 0..m/2, some of which lie past the grid.
    std::size_t m = 1;
    while (m < 2 * (n_ - 1)) m <<= 1;
    const std::size_t half = m / 2;
    std::vector<std::complex<double>> row(m), eig(m);
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t j = k <= half ? k : m - k;
      row[k] = j < n_ ? lags_[j] : lag(j);
    }
    auto plan = std::make_shared<detail::FftPlan>(static_cast<int>(m));
    plan->forward(row, eig);
    const double tol = 1e-9 * c0_ * static_cast<double>(m);
    sqrt_eig_.assign(m, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
      const double lam = eig[k].real();
      if (lam < -tol) return false;
      sqrt_eig_[k] = std::sqrt(std::max(lam, 0.0) / static_cast<double>(m));
    }
    plan_ = std::move(plan);
    return true;
  }

  void dense_factor() {
    const Eigen::MatrixXd sigma = covariance();
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) {
      Eigen::MatrixXd jittered = sigma;
      jittered.diagonal().array() += 1e-10 * c0_;
      llt.compute(jittered);
    }
    if (llt.info() == Eigen::Success) {
      factor_ = llt.matrixL();
      triangular_ = true;
      return;
    }
    // Singular but possibly PSD: pivoted LDL^T tolerates zero pivots.
    Eigen::LDLT<Eigen::MatrixXd> ldlt(sigma);
    const Eigen::VectorXd d = ldlt.vectorD();
    if (d.minCoeff() < -1e-9 * c0_)
      fail(ErrorCode::NotPSD, "covariance matrix has a negative pivot " + std::to_string(d.minCoeff()));
    Eigen::MatrixXd l = ldlt.matrixL();
    for (Eigen::Index j = 0; j < l.cols(); ++j) l.col(j) *= std::sqrt(std::max(d[j], 0.0));
    factor_ = ldlt.transpositionsP().transpose() * l;
    triangular_ = false;
  }

  std::size_t n_;
  double c0_ = 0.0;
  std::vector<double> lags_;
  Eigen::MatrixXd factor_;
  bool triangular_ = false;
  std::shared_ptr<detail::FftPlan> plan_;
  std::vector<double> sqrt_eig_;
};

/// `count` independent centred paths of length n with exact covariance
/// C(|i-j| dt). Path r is drawn from stream (seed, r).
inline std::vector<PathGrid> sample_stationary(const CovarianceModel& model, std::size_t n, double dt,
                                               std::size_t count, std::uint64_t seed,
                                               Factorization method = Factorization::Cholesky) {
  const StationarySampler sampler(model, n, dt, method);
  std::vector<PathGrid> out(count);
  parallel_for(count, [&](std::size_t r) {
    Engine rng = make_stream(seed, r);
    out[r] = PathGrid{0.0, dt, sampler.draw(rng), seed};
  });
  return out;
}

/// Covariance model of fBm increments over steps of length dt.
inline CovarianceModel fgn_model(double H, double dt) {
  require_hurst(H);
  require(dt > 0.0, ErrorCode::NonPositiveParameter, "dt must be positive");
  CovarianceModel m = fbm_increments(H);
  const double scale = std::pow(dt, 2.0 * H);
  m.eval = [H, dt, scale](double T) { return scale * fbm_increment_cov(H, T / dt); };
  m.variance_at_zero = scale;
  m.kinks = {dt};
  return m;
}

/// Sampler of fBm on {0, dt, ..., n dt}: cumulative sums of fGn.
class FbmSampler {
 public:
  FbmSampler(double H, std::size_t n, double dt, Factorization method = Factorization::Cholesky)
      : dt_(dt), increments_(fgn_model(H, dt), n, dt, method) {}

  std::vector<double> draw(Engine& rng) const {
    const std::vector<double> inc = increments_.draw(rng);
    std::vector<double> b(inc.size() + 1, 0.0);
    for (std::size_t k = 0; k < inc.size(); ++k) b[k + 1] = b[k] + inc[k];
    return b;
  }
  double dt() const { return dt_; }

 private:
  double dt_;
  StationarySampler increments_;
};

/// fBm paths with n increments (n + 1 values, B_0 = 0).
inline std::vector<PathGrid> sample_fbm(double H, std::size_t n, double dt, std::size_t count, std::uint64_t seed,
                                        Factorization method = Factorization::Cholesky) {
  require_hurst(H);
  const FbmSampler sampler(H, n, dt, method);
  std::vector<PathGrid> out(count);
  parallel_for(count, [&](std::size_t r) {
    Engine rng = make_stream(seed, r);
    out[r] = PathGrid{0.0, dt, sampler.draw(rng), seed};
  });
  return out;
}

inline std::size_t default_fou_burnin(double lambda, double dt) {
  return static_cast<std::size_t>(std::ceil(10.0 / (lambda * dt)));
}

/// Euler scheme Y_{k+1} = Y_k (1 - lambda dt) + sigma_t dB^H_k started at 0.
/// The first `burnin` steps are discarded; the path holds the next n values.
class FouSampler {
 public:
  FouSampler(double H, double lambda, double sigma_t, std::size_t n, double dt, std::size_t burnin,
             Factorization method = Factorization::Auto)
      : lambda_(lambda), sigma_(sigma_t), n_(n), dt_(dt), burnin_(burnin) {
    require_hurst(H);
    require(lambda > 0.0, ErrorCode::NonPositiveParameter, "lambda must be positive");
    require(sigma_t >= 0.0, ErrorCode::NonPositiveParameter, "sigma_t must be non-negative");
    require(n >= 1, ErrorCode::InvalidParameter, "need at least one grid point");
    require(dt > 0.0, ErrorCode::NonPositiveParameter, "dt must be positive");
    if (lambda * dt >= 1.0)
      fail(ErrorCode::UnstableStep, "lambda*dt = " + std::to_string(lambda * dt) + " must be below 1");
    const std::size_t steps = burnin + n - 1;
    if (steps > 0) noise_ = std::make_shared<StationarySampler>(fgn_model(H, dt), steps, dt, method);
  }

  std::vector<double> draw(Engine& rng) const {
    std::vector<double> out(n_);
    if (!noise_) return out;
    const std::vector<double> inc = noise_->draw(rng);
    const double decay = 1.0 - lambda_ * dt_;
    double y = 0.0;
    std::size_t k = 0;
    for (; k < burnin_; ++k) y = y * decay + sigma_ * inc[k];
    out[0] = y;
    for (std::size_t j = 1; j < n_; ++j, ++k) {
      y = y * decay + sigma_ * inc[k];
      out[j] = y;
    }
    return out;
  }

 private:
  double lambda_, sigma_;
  std::size_t n_;
  double dt_;
  std::size_t burnin_;
  std::shared_ptr<StationarySampler> noise_;
};

inline std::vector<PathGrid> sample_fou(double H, double lambda, double sigma_t, std::size_t n, double dt,
                                        std::size_t burnin, std::size_t count, std::uint64_t seed,
                                        Factorization method = Factorization::Auto) {
  const FouSampler sampler(H, lambda, sigma_t, n, dt, burnin, method);
  std::vector<PathGrid> out(count);
  parallel_for(count, [&](std::size_t r) {
    Engine rng = make_stream(seed, r);
    out[r] = PathGrid{0.0, dt, sampler.draw(rng), seed};
  });
  return out;
}

/// Writes `t,value` CSV, one row per grid point.
inline void write_path_csv(const std::string& path, const PathGrid& grid) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) fail(ErrorCode::IoFailure, "cannot open " + path + " for writing");
  std::fputs("t,value\n", f);
  for (std::size_t k = 0; k < grid.values.size(); ++k) std::fprintf(f, "%.17g,%.17g\n", grid.time(k), grid.values[k]);
  if (std::fclose(f) != 0) fail(ErrorCode::IoFailure, "failed writing " + path);
}

}  // namespace mstein
