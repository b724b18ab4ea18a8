#pragma once

// Gauss rules and composite integrators shared by the analytic modules.

#include <cmath>
#include <cstddef>
#include <map>
#include <mutex>
#include <numbers>
#include <utility>
#include <vector>

#include "mstein/error.hpp"

namespace mstein::quad {

struct Rule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [-1, 1] (Newton on the Legendre recurrence).
inline Rule gauss_legendre(int n) {
  require(n >= 1, ErrorCode::InvalidParameter, "Gauss-Legendre needs n >= 1");
  Rule rule{std::vector<double>(n), std::vector<double>(n)};
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = 0.0;
      for (int k = 1; k <= n; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p2) / k;
      }
      dp = n * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Recompute the derivative at the converged node.
    double p0 = 1.0, p1 = 0.0;
    for (int k = 1; k <= n; ++k) {
      const double p2 = p1;
      p1 = p0;
      p0 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p2) / k;
    }
    dp = n * (x * p0 - p1) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  return rule;
}

/// Cached Gauss-Legendre rule; the cache is process-wide and thread-safe.
inline const Rule& legendre(int n) {
  static std::mutex mutex;
  static std::map<int, Rule> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, gauss_legendre(n)).first;
  return it->second;
}

/// n-point Gauss-Hermite rule for the standard normal weight: the weights sum
/// to one and sum_i w_i g(x_i) approximates E[g(Z)], Z ~ N(0, 1). Exact for
/// polynomials of degree < 2n.
///
/// Nodes are found by Newton iteration on the orthonormal (physicists')
/// Hermite recurrence, which keeps every weight at full relative precision.
inline Rule gauss_hermite(int n) {
  require(n >= 1, ErrorCode::InvalidParameter, "Gauss-Hermite needs n >= 1");
  const double pim4 = std::pow(std::numbers::pi, -0.25);
  Rule rule{std::vector<double>(n), std::vector<double>(n)};
  const int half = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < half; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * rule.nodes[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * rule.nodes[1];
    } else {
      z = 2.0 * z - rule.nodes[i - 2];
    }
    double pp = 0.0;
    for (int iter = 0; iter < 200; ++iter) {
      double p1 = pim4, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double dz = p1 / pp;
      z -= dz;
      if (std::abs(dz) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    double p1 = pim4, p2 = 0.0;
    for (int j = 0; j < n; ++j) {
      const double p3 = p2;
      p2 = p1;
      p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
    }
    pp = std::sqrt(2.0 * n) * p2;
    rule.nodes[i] = z;
    rule.nodes[n - 1 - i] = -z;
    rule.weights[i] = 2.0 / (pp * pp);
    rule.weights[n - 1 - i] = rule.weights[i];
  }
  // Physicists' weight exp(-x^2) -> standard normal density.
  const double inv_sqrt_pi = 1.0 / std::sqrt(std::numbers::pi);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] *= std::numbers::sqrt2;
    rule.weights[i] *= inv_sqrt_pi;
  }
  // Ascending order.
  for (int i = 0, j = n - 1; i < j; ++i, --j) {
    std::swap(rule.nodes[i], rule.nodes[j]);
    std::swap(rule.weights[i], rule.weights[j]);
  }
  return rule;
}

inline const Rule& hermite_rule(int n) {
  static std::mutex mutex;
  static std::map<int, Rule> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, gauss_hermite(n)).first;
  return it->second;
}

/// Gauss-Legendre on a single panel [a, b].
template <class F>
double panel(F&& f, double a, double b, int order = 20) {
  thread_local int cached_order = -1;
  thread_local const Rule* cached = nullptr;
  if (order != cached_order) {
    cached = &legendre(order);
    cached_order = order;
  }
  const Rule& r = *cached;
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  double sum = 0.0;
  for (std::size_t i = 0; i < r.nodes.size(); ++i) sum += r.weights[i] * f(mid + half * r.nodes[i]);
  return sum * half;
}

/// Composite Gauss-Legendre over `panels` equal panels.
template <class F>
double composite(F&& f, double a, double b, int panels, int order = 20) {
  if (b == a) return 0.0;
  const double h = (b - a) / panels;
  double sum = 0.0;
  for (int k = 0; k < panels; ++k) sum += panel(f, a + k * h, a + (k + 1) * h, order);
  return sum;
}

/// Composite Gauss-Legendre with geometric grading toward the chosen
/// endpoints. Integrable power singularities (or kinks) at a graded endpoint
/// are resolved by panels whose width halves `levels` times; the innermost
/// sliver of relative width 2^-levels is dropped.
template <class F>
double graded(F&& f, double a, double b, bool grade_left, bool grade_right, int levels = 48,
              int order = 16, int interior_panels = 8) {
  if (b == a) return 0.0;
  const double len = b - a;
  double lo = a, hi = b;
  double sum = 0.0;
  const double edge = 0.25;  // fraction of the interval graded at each side
  if (grade_left) {
    double right = a + edge * len;
    for (int k = 0; k < levels; ++k) {
      const double left = a + (right - a) * 0.5;
      sum += panel(f, left, right, order);
      right = left;
    }
    lo = a + edge * len;
  }
  if (grade_right) {
    double left = b - edge * len;
    for (int k = 0; k < levels; ++k) {
      const double right = b - (b - left) * 0.5;
      sum += panel(f, left, right, order);
      left = right;
    }
    hi = b - edge * len;
  }
  sum += composite(f, lo, hi, interior_panels, order);
  return sum;
}

/// Integral over [a, b] split at the given interior breakpoints; every piece
/// is graded at both ends.
template <class F>
double piecewise_graded(F&& f, double a, double b, std::vector<double> breaks, int levels = 48,
                        int order = 16, int interior_panels = 8) {
  std::vector<double> pts{a};
  for (double x : breaks)
    if (x > a && x < b) pts.push_back(x);
  pts.push_back(b);
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i)
    sum += graded(f, pts[i], pts[i + 1], true, true, levels, order, interior_panels);
  return sum;
}

}  // namespace mstein::quad
