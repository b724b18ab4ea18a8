#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "mstein/hermite.hpp"
#include "oracles.hpp"

using namespace mstein;

TEST(HermiteEval, LowOrders) {
  EXPECT_EQ(hermite(0, 7.3), 1.0);
  EXPECT_EQ(hermite(1, -2.5), -2.5);
  // Rodrigues form (-1)^q e^{x^2/2} d^q/dx^q e^{-x^2/2}, expanded symbolically:
  // H2 = x^2 - 1, H3 = x^3 - 3x.
  EXPECT_DOUBLE_EQ(hermite(2, 2.0), 3.0);
  for (double x : {-1.7, 0.0, 0.4, 3.1}) EXPECT_NEAR(hermite(3, x), x * x * x - 3 * x, 1e-12);
}

TEST(HermiteEval, AllMatchesSingle) {
  const auto h = hermite_all(12, 1.3);
  for (int q = 0; q <= 12; ++q) EXPECT_DOUBLE_EQ(h[q], hermite(q, 1.3));
}

TEST(HermiteOrthogonality, QuadratureGivesFactorialDelta) {
  const auto& rule = quad::hermite_rule(64);
  for (int p = 0; p <= 10; ++p) {
    for (int q = 0; q <= 10; ++q) {
      double s = 0.0;
      for (std::size_t i = 0; i < rule.nodes.size(); ++i)
        s += rule.weights[i] * hermite(p, rule.nodes[i]) * hermite(q, rule.nodes[i]);
      const double expected = p == q ? factorial(q) : 0.0;
      EXPECT_NEAR(s, expected, 1e-8) << "p=" << p << " q=" << q;
    }
  }
}

TEST(HermiteExpand, Identity) {
  const auto e = expand([](double x) { return x; }, 3);
  ASSERT_EQ(e.coefficients.size(), 4u);
  EXPECT_NEAR(e.c(0), 0.0, 1e-12);
  EXPECT_NEAR(e.c(1), 1.0, 1e-12);
  EXPECT_NEAR(e.c(2), 0.0, 1e-12);
  EXPECT_NEAR(e.c(3), 0.0, 1e-12);
}

TEST(HermiteExpand, Square) {
  // E[Z^2] = 1 and E[Z^2 H2(Z)] = E[Z^4 - Z^2] = 3 - 1 = 2, so c2 = 2/2! = 1.
  const auto e = expand([](double x) { return x * x; }, 4);
  EXPECT_NEAR(e.c(0), 1.0, 1e-12);
  EXPECT_NEAR(e.c(1), 0.0, 1e-12);
  EXPECT_NEAR(e.c(2), 1.0, 1e-12);
  EXPECT_NEAR(e.c(3), 0.0, 1e-12);
  EXPECT_NEAR(e.c(4), 0.0, 1e-12);
}

TEST(HermiteExpand, CosineHasNoOddCoefficients) {
  const auto e = expand([](double x) { return std::cos(x); }, 6);
  EXPECT_NEAR(e.c(1), 0.0, kCoefficientZeroTol);
  EXPECT_TRUE(e.odd_coefficients_vanish());
  // E[cos Z] = e^{-1/2}.
  EXPECT_NEAR(e.c(0), std::exp(-0.5), 1e-13);
}

TEST(HermiteExpand, CubicPlusLinear) {
  // x^3 + x = H3 + 4 H1.
  const auto e = expand([](double x) { return x * x * x + x; }, 5);
  EXPECT_NEAR(e.c(1), 4.0, 1e-12);
  EXPECT_NEAR(e.c(3), 1.0, 1e-12);
  EXPECT_NEAR(e.c(5), 0.0, 1e-12);
}

TEST(HermiteExpand, Errors) {
  EXPECT_THROW(expand([](double x) { return x; }, 0), Error);
  EXPECT_THROW(expand([](double x) { return x; }, 40, 64), Error);
  try {
    expand([](double x) { return 1.0 / (x - x); }, 3);
    FAIL() << "expected NonFiniteFunctionValue";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteFunctionValue);
  }
}

TEST(SubordinatedCov, Examples) {
  const auto id = expand([](double x) { return x; }, 3);
  EXPECT_NEAR(subordinated_cov(id, 0.3), 0.3, 1e-12);
  const auto sq = expand([](double x) { return x * x; }, 4);
  EXPECT_NEAR(subordinated_cov(sq, 0.0), 0.0, 0.0);
  // Cov[Z1^2, Z2^2] = 2 rho^2, from the 2-D quadrature oracle.
  const double oracle = oracles::bivariate_cov([](double x) { return x * x; }, 0.5);
  EXPECT_NEAR(oracle, 0.5, 1e-12);
  EXPECT_NEAR(subordinated_cov(sq, 0.5), oracle, 1e-12);
  try {
    subordinated_cov(sq, 1.2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RhoOutOfRange);
  }
}

TEST(SubordinatedCov, MatchesBivariateQuadrature) {
  const std::vector<std::function<double(double)>> fs = {
      [](double x) { return x; },
      [](double x) { return x * x; },
      [](double x) { return x * x * x + x; },
      [](double x) { return std::cos(x); },
  };
  for (const auto& f : fs) {
    const auto e = expand(f, 30);
    for (double rho : {-0.9, -0.5, 0.0, 0.5, 0.9}) {
      EXPECT_NEAR(subordinated_cov(e, rho), oracles::bivariate_cov(f, rho), 1e-6) << "rho=" << rho;
    }
  }
}

TEST(SubordinatedCov, TruncationIncrementsShrink) {
  const auto f = [](double x) { return std::cos(x); };
  for (double rho : {-0.9, 0.5, 0.95}) {
    double prev_gap = 1e300;
    for (int Q = 4; Q <= 24; Q += 2) {
      const double gap = std::abs(subordinated_cov(expand(f, Q + 2), rho) - subordinated_cov(expand(f, Q), rho));
      EXPECT_LE(gap, prev_gap + 1e-15) << "Q=" << Q;
      prev_gap = gap;
    }
  }
  // Polynomials are exact once Q reaches their degree.
  const auto p = [](double x) { return x * x * x + x; };
  EXPECT_NEAR(subordinated_cov(expand(p, 3), 0.7), subordinated_cov(expand(p, 9), 0.7), 1e-12);
}
