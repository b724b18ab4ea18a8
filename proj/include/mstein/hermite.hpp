#pragma once

// Probabilists' Hermite polynomials, Gaussian expansion coefficients and the
// covariance series of a subordinated pair f(Z1), f(Z2).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mstein/error.hpp"
#include "mstein/quadrature.hpp"

namespace mstein {

/// H_q(x) with H_0 = 1, H_1 = x, H_{q+1} = x H_q - q H_{q-1}.
inline double hermite(int q, double x) {
  require(q >= 0, ErrorCode::InvalidParameter, "Hermite order must be non-negative");
  if (q == 0) return 1.0;
  double prev = 1.0, cur = x;
  for (int k = 1; k < q; ++k) {
    const double next = x * cur - k * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

/// H_0(x) .. H_Q(x) in one pass of the recurrence.
inline std::vector<double> hermite_all(int Q, double x) {
  std::vector<double> h(static_cast<std::size_t>(Q) + 1);
  h[0] = 1.0;
  if (Q >= 1) h[1] = x;
  for (int k = 1; k < Q; ++k) h[k + 1] = x * h[k] - k * h[k - 1];
  return h;
}

inline double factorial(int q) {
  double f = 1.0;
  for (int k = 2; k <= q; ++k) f *= k;
  return f;
}

/// Threshold below which a coefficient is treated as zero.
inline constexpr double kCoefficientZeroTol = 1e-10;

struct HermiteExpansion {
  std::vector<double> coefficients;  // c_0 .. c_Q
  int truncation_order = 1;
  int quadrature_nodes = 64;

  double c(int q) const {
    return q >= 0 && q < static_cast<int>(coefficients.size()) ? coefficients[q] : 0.0;
  }
  /// E[f(Z)].
  double mean() const { return c(0); }
  /// E[f(Z) Z] = c_1.
  double first() const { return c(1); }
  bool odd_coefficients_vanish(double tol = kCoefficientZeroTol) const {
    for (std::size_t q = 1; q < coefficients.size(); q += 2)
      if (std::abs(coefficients[q]) > tol) return false;
    return true;
  }
};

inline int default_hermite_nodes(int Q) { return std::max(64, 2 * Q); }

/// c_q = E[f(Z) H_q(Z)] / q! by Gauss-Hermite quadrature with `nodes` points.
template <class F>
HermiteExpansion expand(F&& f, int Q, int nodes = 0) {
  require(Q >= 1, ErrorCode::InvalidParameter, "truncation order Q must be >= 1");
  if (nodes == 0) nodes = default_hermite_nodes(Q);
  require(nodes >= 2 * Q, ErrorCode::InvalidParameter, "need at least 2Q quadrature nodes");
  const quad::Rule& rule = quad::hermite_rule(nodes);
  HermiteExpansion out;
  out.truncation_order = Q;
  out.quadrature_nodes = nodes;
  out.coefficients.assign(static_cast<std::size_t>(Q) + 1, 0.0);
  for (int i = 0; i < nodes; ++i) {
    const double x = rule.nodes[i];
    const double fx = f(x);
    if (!std::isfinite(fx))
      fail(ErrorCode::NonFiniteFunctionValue, "f is not finite at node x=" + std::to_string(x));
    const std::vector<double> h = hermite_all(Q, x);
    for (int q = 0; q <= Q; ++q) out.coefficients[q] += rule.weights[i] * fx * h[q];
  }
  double fact = 1.0;
  for (int q = 1; q <= Q; ++q) {
    fact *= q;
    out.coefficients[q] /= fact;
  }
  return out;
}

/// Cov[f(Z1), f(Z2)] for standard normals with correlation rho, as the series
/// sum_{q>=1} c_q^2 q! rho^q truncated at the expansion order.
inline double subordinated_cov(const HermiteExpansion& e, double rho) {
  if (!(std::abs(rho) <= 1.0))
    fail(ErrorCode::RhoOutOfRange, "|rho| must not exceed 1, got " + std::to_string(rho));
  double sum = 0.0, fact = 1.0, power = 1.0;
  for (int q = 1; q < static_cast<int>(e.coefficients.size()); ++q) {
    fact *= q;
    power *= rho;
    sum += e.coefficients[q] * e.coefficients[q] * fact * power;
  }
  return sum;
}

/// sum_{q>=1} c_q^2 q!, i.e. Var[f(Z)] within the truncation.
inline double expansion_variance(const HermiteExpansion& e) { return subordinated_cov(e, 1.0); }

}  // namespace mstein
