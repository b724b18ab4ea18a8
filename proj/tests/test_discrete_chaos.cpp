#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>

#include "mstein/chaos_json.hpp"
#include "mstein/discrete_chaos.hpp"
#include "oracles.hpp"

using namespace mstein;
using namespace mstein::chaos;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::InvalidParameter;
}

// Two Gaussian-free jump sizes and a Gaussian part on 2 cells: 6 atoms.
AtomGrid mixed_grid() { return AtomGrid::uniform(1.0, 2, 0.7, {{1.0, 0.8}, {-0.5, 1.5}}); }

// Calls fn(tuple) for every ordered q-tuple of distinct atoms in [0, n).
void for_each_ordered(std::size_t n, std::size_t q, const std::function<void(const std::vector<std::size_t>&)>& fn) {
  std::vector<std::size_t> t;
  std::function<void()> rec = [&] {
    if (t.size() == q) {
      fn(t);
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (std::find(t.begin(), t.end(), i) != t.end()) continue;
      t.push_back(i);
      rec();
      t.pop_back();
    }
  };
  rec();
}

// E[I_p(f) I_q(g)] by expanding both integrals over ordered tuples and taking
// the expectation of each monomial from the atom moments E M = 0, E M^2 = mu.
double isometry_oracle(const AtomGrid& grid, const Kernel& f, const Kernel& g) {
  const std::size_t n = grid.size();
  double total = 0.0;
  for_each_ordered(n, f.order, [&](const std::vector<std::size_t>& a) {
    for_each_ordered(n, g.order, [&](const std::vector<std::size_t>& b) {
      std::map<std::size_t, int> count;
      for (auto i : a) ++count[i];
      for (auto i : b) ++count[i];
      double e = f.at(a) * g.at(b);
      for (const auto& [i, c] : count) e *= c == 2 ? grid[i].weight : 0.0;
      total += e;
    });
  });
  return total;
}

ChaosFunctional random_functional(std::size_t n, std::size_t top, Engine& rng, bool centred = true) {
  ChaosFunctional F(n, top);
  for (std::size_t q = centred ? 1 : 0; q <= top; ++q) F.kernels[q] = random_kernel(n, q, rng);
  return F;
}

}  // namespace

TEST(AtomGrid, ConstructionAndInvariants) {
  const auto g = mixed_grid();
  EXPECT_EQ(g.size(), 6u);
  EXPECT_NEAR(g.total_weight(), 0.7 + 0.8 + 0.25 * 1.5, 1e-14);
  EXPECT_DOUBLE_EQ(g.mesh(), 0.5);
  EXPECT_FALSE(g.pure_jump());
  EXPECT_TRUE(AtomGrid::uniform(1.0, 3, 0.0, {{2.0, 1.0}}).pure_jump());
  EXPECT_EQ(code_of([] { AtomGrid::uniform(1.0, 33, 1.0, {{1.0, 1.0}}); }), ErrorCode::InvalidParameter);
  EXPECT_EQ(code_of([] { AtomGrid::from_atoms({{0.0, 0.0, 0.0, 1.0, false}, {0.0, 0.0, 0.0, 2.0, false}}, 1.0); }),
            ErrorCode::InvalidParameter);
  EXPECT_EQ(code_of([] { AtomGrid::from_atoms({{0.0, 0.0, 1.0, 0.0, true}}, 1.0); }), ErrorCode::InvalidParameter);
}

TEST(Subsets, ColexRanking) {
  std::uint64_t expected = 0;
  for_each_subset(10, 3, [&](Mask m, std::uint64_t rank) {
    EXPECT_EQ(rank, expected++);
    EXPECT_EQ(colex_rank(m), rank);
    EXPECT_EQ(std::popcount(m), 3);
  });
  EXPECT_EQ(expected, 120u);
  EXPECT_EQ(binom(64, 32), 1832624140942590534ULL);
  std::size_t count = 0;
  for_each_subset(64, 63, [&](Mask m, std::uint64_t) {
    EXPECT_EQ(std::popcount(m), 63);
    ++count;
  });
  EXPECT_EQ(count, 64u);
}

TEST(Noise, AtomMoments) {
  const auto g = mixed_grid();
  std::vector<std::vector<double>> vals(g.size());
  for (int r = 0; r < 40000; ++r) {
    Engine rng = make_stream(1, r);
    const auto w = sample_noise(g, rng);
    for (std::size_t i = 0; i < g.size(); ++i) vals[i].push_back(w.values[i]);
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto m = oracles::mean_se(vals[i]);
    EXPECT_NEAR(m.mean, 0.0, 3 * m.se) << i;
    const auto v = oracles::var_se(vals[i], 0.0);
    EXPECT_NEAR(v.var, g[i].weight, 3 * v.se) << i;
  }
}

TEST(MultipleIntegral, LowOrders) {
  const auto g = AtomGrid::uniform(1.0, 1, 2.0);
  ChaosFunctional c = ChaosFunctional::constant(1, 3.5);
  Engine rng = make_stream(2, 0);
  EXPECT_EQ(evaluate(c, sample_noise(g, rng)), 3.5);
  Kernel one(1, 1);
  one.values[0] = 1.0;
  std::vector<double> v;
  for (int r = 0; r < 20000; ++r) {
    Engine e = make_stream(3, r);
    const auto w = sample_noise(g, e);
    const double i1 = multiple_integral(one, w);
    ASSERT_EQ(i1, w.values[0]);
    v.push_back(i1);
  }
  const auto vs = oracles::var_se(v, 0.0);
  EXPECT_NEAR(vs.var, 2.0, 3 * vs.se);
  EXPECT_EQ(code_of([] { Kernel(2, 3); }), ErrorCode::OrderTooLarge);
}

TEST(MultipleIntegral, SymmetrisationInvariance) {
  // I_q of a non-symmetric tuple function equals I_q of its symmetrisation.
  const auto g = mixed_grid();
  auto raw = [](const std::vector<std::size_t>& t) {
    double v = 0.3;
    for (std::size_t k = 0; k < t.size(); ++k) v += std::sin(1.0 + static_cast<double>(t[k] * (k + 2)));
    return v;
  };
  for (std::size_t q = 1; q <= 3; ++q) {
    const Kernel sym = symmetrize(g.size(), q, raw);
    for (int r = 0; r < 5; ++r) {
      Engine rng = make_stream(4, r);
      const auto w = sample_noise(g, rng);
      double brute = 0.0;
      for_each_ordered(g.size(), q, [&](const std::vector<std::size_t>& t) {
        double p = raw(t);
        for (auto i : t) p *= w.values[i];
        brute += p;
      });
      EXPECT_NEAR(multiple_integral(sym, w), brute, 1e-12 * std::max(1.0, std::abs(brute)));
    }
  }
}

TEST(Isometry, AnalyticMatchesOracle) {
  const auto g = AtomGrid::uniform(1.0, 2, 1.3, {{0.7, 2.0}});  // 4 atoms
  Engine rng = make_stream(5, 0);
  for (std::size_t p = 0; p <= 3; ++p)
    for (std::size_t q = 0; q <= 3; ++q) {
      const Kernel f = random_kernel(g.size(), p, rng), h = random_kernel(g.size(), q, rng);
      const double analytic = expectation_product(g, ChaosFunctional::single(f), ChaosFunctional::single(h));
      EXPECT_NEAR(analytic, isometry_oracle(g, f, h), 1e-12) << p << " " << q;
      if (p != q) EXPECT_EQ(analytic, 0.0);
    }
}

TEST(Isometry, MonteCarlo) {
  const auto g = mixed_grid();
  Engine krng = make_stream(6, 0);
  std::vector<Kernel> ks;
  for (std::size_t q = 1; q <= 3; ++q) ks.push_back(random_kernel(g.size(), q, krng));
  const std::size_t reps = 100000;
  std::vector<std::array<double, 3>> vals(reps);
  parallel_for(reps, [&](std::size_t r) {
    Engine e = make_stream(7, r);
    const auto w = sample_noise(g, e);
    for (int q = 0; q < 3; ++q) vals[r][q] = multiple_integral(ks[q], w);
  });
  for (int p = 0; p < 3; ++p)
    for (int q = p; q < 3; ++q) {
      std::vector<double> prod(reps);
      for (std::size_t r = 0; r < reps; ++r) prod[r] = vals[r][p] * vals[r][q];
      const auto m = oracles::mean_se(prod);
      const double exact = expectation_product(g, ChaosFunctional::single(ks[p]), ChaosFunctional::single(ks[q]));
      EXPECT_NEAR(m.mean, exact, 3 * m.se) << p + 1 << " " << q + 1;
    }
}

TEST(Contraction, Examples) {
  const auto g = AtomGrid::uniform(1.0, 3, 0.0, {{1.5, 1.0}, {-0.5, 2.0}});  // pure jump, 6 atoms
  Engine rng = make_stream(8, 0);
  const Kernel f1 = random_kernel(6, 1, rng), g1 = random_kernel(6, 1, rng);
  // r = s = 0: symmetrised tensor product.
  const Kernel t = contraction(g, f1, g1, 0, 0);
  EXPECT_NEAR(t.at({1, 4}), 0.5 * (f1.at({1}) * g1.at({4}) + f1.at({4}) * g1.at({1})), 1e-15);
  // p = q = r: scalar inner product.
  const Kernel f2 = random_kernel(6, 2, rng), g2 = random_kernel(6, 2, rng);
  EXPECT_NEAR(contraction(g, f2, g2, 2, 0).values[0], inner(g, f2, g2), 1e-12);
  // p = q = 1, r = 0, s = 1 on jumps: z -> x f(z) g(z).
  const Kernel sh = contraction(g, f1, g1, 0, 1);
  for (std::size_t z = 0; z < 6; ++z) EXPECT_NEAR(sh.at({z}), g[z].x * f1.at({z}) * g1.at({z}), 1e-15);
  // The shared variable vanishes on Gaussian atoms.
  const auto gw = AtomGrid::uniform(1.0, 3, 1.0);
  const Kernel w1 = random_kernel(3, 1, rng);
  EXPECT_TRUE(contraction(gw, w1, w1, 0, 1).is_zero());
  EXPECT_EQ(code_of([&] { contraction(g, f1, g1, 1, 1); }), ErrorCode::IndexOutOfRange);
}

TEST(Contraction, MixedOrderByHand) {
  // f (x)_1^0 g for p = 2, q = 1 on 3 Gaussian atoms: h(a) = sum_z mu_z f(z,a) g(z).
  const auto g = AtomGrid::from_atoms({{0.0, 0, 0, 0.5, false}, {1.0, 0, 0, 0.25, false}, {2.0, 0, 0, 2.0, false}}, 1.0);
  Kernel f(3, 2), h(3, 1);
  f.set({0, 1}, 1.0);
  f.set({0, 2}, 2.0);
  f.set({1, 2}, -3.0);
  h.set({0}, 0.5);
  h.set({1}, 4.0);
  h.set({2}, -1.0);
  const Kernel c = contraction(g, f, h, 1, 0);
  EXPECT_NEAR(c.at({0}), 0.25 * 1.0 * 4.0 + 2.0 * 2.0 * -1.0, 1e-15);
  EXPECT_NEAR(c.at({1}), 0.5 * 1.0 * 0.5 + 2.0 * -3.0 * -1.0, 1e-15);
  EXPECT_NEAR(c.at({2}), 0.5 * 2.0 * 0.5 + 0.25 * -3.0 * 4.0, 1e-15);
}

TEST(ProductFormula, ExactCasesAndGap) {
  const auto g = mixed_grid();
  Engine rng = make_stream(9, 0);
  const Kernel f2 = random_kernel(6, 2, rng);
  Kernel c(6, 0);
  c.values[0] = -1.7;
  for (int r = 0; r < 5; ++r) {
    Engine e = make_stream(10, r);
    const auto pc = product_formula_check(g, f2, c, sample_noise(g, e));
    EXPECT_NEAR(pc.lhs, pc.rhs, 1e-12 * std::max(1.0, std::abs(pc.lhs)));
  }
  // Single Gaussian atom, f = g = 1: the gap is M^2 - mu with L^2 norm sqrt(2) mu.
  const auto one = AtomGrid::uniform(1.0, 1, 0.6);
  Kernel u(1, 1);
  u.values[0] = 1.0;
  Engine e = make_stream(11, 0);
  const auto w = sample_noise(one, e);
  const auto pc = product_formula_check(one, u, u, w);
  EXPECT_NEAR(pc.lhs - pc.rhs, w.values[0] * w.values[0] - 0.6, 1e-14);
  const auto gap = product_formula_gap(one, u, u, 40000, 12);
  EXPECT_NEAR(gap.l2, std::sqrt(2.0) * 0.6, 3 * gap.se);
  EXPECT_NEAR(gap.mean, 0.0, 3 * gap.mean_se);
}

TEST(ProductFormula, GapShrinksLikeRootMesh) {
  // E gap^2 = 2 sum mu_i^2 for both atom types, so the exponent is 1/2.
  std::vector<std::pair<double, double>> pts;
  for (std::size_t cells : {2u, 4u, 8u, 16u, 32u}) {
    const auto g = AtomGrid::uniform(1.0, cells, 1.0, {{1.0, 1.0}});
    Kernel f(g.size(), 1);
    for (std::size_t i = 0; i < g.size(); ++i) f.values[i] = 1.0 + g[i].t;
    const auto est = product_formula_gap(g, f, f, 4000, 13);
    pts.emplace_back(g.mesh(), est.l2);
  }
  const auto fit = rate_fit(pts);
  EXPECT_NEAR(fit.slope, 0.5, 0.15);
}

TEST(Derivative, FirstAndSecondChaos) {
  const auto g = AtomGrid::uniform(1.0, 3, 1.0);
  Engine rng = make_stream(14, 0);
  const Kernel f1 = random_kernel(3, 1, rng);
  const auto D = malliavin_derivative(ChaosFunctional::single(f1), 1);
  EXPECT_EQ(D.effective_order(), 0u);
  EXPECT_EQ(D.mean(), f1.at({1}));
  // I_2(f) = 2 (f01 M0 M1 + f02 M0 M2 + f12 M1 M2), so D_0 = 2 (f01 M1 + f02 M2).
  const Kernel f2 = random_kernel(3, 2, rng);
  const auto D0 = malliavin_derivative(ChaosFunctional::single(f2), 0);
  for (int r = 0; r < 5; ++r) {
    Engine e = make_stream(15, r);
    const auto w = sample_noise(g, e);
    const double hand = 2.0 * (f2.at({0, 1}) * w.values[1] + f2.at({0, 2}) * w.values[2]);
    EXPECT_NEAR(evaluate(D0, w), hand, 1e-14);
  }
  EXPECT_EQ(code_of([&] { malliavin_derivative(ChaosFunctional::single(f2), 3); }), ErrorCode::UnknownAtom);
}

TEST(Derivative, JumpQuotientIsExact) {
  const auto g = mixed_grid();
  Engine rng = make_stream(16, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const ChaosFunctional F = random_functional(g.size(), 3, rng, false);
    Engine e = make_stream(17, trial);
    const auto w = sample_noise(g, e);
    const auto grad = gradient(F, w);
    for (std::size_t z = 0; z < g.size(); ++z) {
      const double d = evaluate(malliavin_derivative(F, z), w);
      EXPECT_NEAR(grad[z], d, 1e-12 * std::max(1.0, std::abs(d)));
      if (!g[z].jump) continue;
      EXPECT_NEAR(jump_quotient(g, F, w, z), d, 1e-12 * std::max(1.0, std::abs(d))) << z;
    }
  }
  const ChaosFunctional F = random_functional(g.size(), 1, rng);
  Engine e = make_stream(18, 0);
  EXPECT_EQ(code_of([&] { jump_quotient(g, F, sample_noise(g, e), 0); }), ErrorCode::InvalidParameter);
}

TEST(Derivative, ProductRuleOnJumps) {
  // D_z(FG) = D_zF G + F D_zG + x D_zF D_zG, with D_z(FG) as the quotient.
  const auto g = AtomGrid::uniform(1.0, 4, 0.0, {{0.8, 1.0}, {-1.2, 0.5}});
  Engine rng = make_stream(19, 0);
  const auto F = random_functional(g.size(), 1, rng), G = random_functional(g.size(), 1, rng);
  for (int r = 0; r < 5; ++r) {
    Engine e = make_stream(20, r);
    const auto w = sample_noise(g, e);
    const double f = evaluate(F, w), h = evaluate(G, w);
    for (std::size_t z = 0; z < g.size(); ++z) {
      const auto wp = add_jump(g, w, z);
      const double lhs = (evaluate(F, wp) * evaluate(G, wp) - f * h) / g[z].x;
      const double dF = evaluate(malliavin_derivative(F, z), w), dG = evaluate(malliavin_derivative(G, z), w);
      const double rhs = dF * h + f * dG + g[z].x * dF * dG;
      EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(rhs)));
    }
  }
}

TEST(OuOperators, CoefficientMaps) {
  const std::size_t n = 5;
  Engine rng = make_stream(21, 0);
  const auto c = ChaosFunctional::constant(n, 2.5);
  EXPECT_TRUE(ou_generator(c).kernels[0].is_zero());
  EXPECT_TRUE(ou_inverse(c).kernels[0].is_zero());
  const Kernel f2 = random_kernel(n, 2, rng);
  const auto L = ou_generator(ChaosFunctional::single(f2));
  for (std::size_t i = 0; i < f2.values.size(); ++i) EXPECT_EQ(L.kernels[2].values[i], -2.0 * f2.values[i]);
  const auto F = random_functional(n, 3, rng, false);
  const auto LL = ou_generator(ou_inverse(F));
  EXPECT_EQ(LL.mean(), 0.0);
  for (std::size_t q = 1; q <= 3; ++q)
    for (std::size_t i = 0; i < F.kernels[q].values.size(); ++i)
      EXPECT_NEAR(LL.kernels[q].values[i], F.kernels[q].values[i], 1e-15);
  const auto T0 = ou_semigroup(F, 0.0);
  for (std::size_t q = 0; q <= 3; ++q) EXPECT_EQ(T0.kernels[q].values, F.kernels[q].values);
  const auto a = ou_semigroup(ou_semigroup(F, 0.3), 0.5), b = ou_semigroup(F, 0.8);
  for (std::size_t q = 0; q <= 3; ++q)
    for (std::size_t i = 0; i < a.kernels[q].values.size(); ++i)
      EXPECT_NEAR(a.kernels[q].values[i], b.kernels[q].values[i], 1e-15);
}

TEST(Skorohod, ExamplesAndAdjoint) {
  const auto g = mixed_grid();
  const std::size_t n = g.size();
  Engine rng = make_stream(22, 0);
  // Deterministic integrand: delta(h) = I_1(h).
  const Kernel h = random_kernel(n, 1, rng);
  std::vector<ChaosFunctional> u(n);
  for (std::size_t z = 0; z < n; ++z) u[z] = ChaosFunctional::constant(n, h.at({z}));
  const auto d1 = skorohod(u);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(d1.kernels[1].values[i], h.values[i], 1e-15);
  // u(z) = I_1(f(z, .)) with f symmetric: delta(u) = I_2(f).
  const Kernel f = random_kernel(n, 2, rng);
  for (std::size_t z = 0; z < n; ++z) {
    ChaosFunctional uz(n, 1);
    for (std::size_t a = 0; a < n; ++a)
      if (a != z) uz.kernels[1].set({a}, f.at({z, a}));
    u[z] = uz;
  }
  const auto d2 = skorohod(u);
  for (std::size_t i = 0; i < f.values.size(); ++i) EXPECT_NEAR(d2.kernels[2].values[i], f.values[i], 1e-15);
  // Adjointness with random integrands of mixed order against random G.
  for (int trial = 0; trial < 5; ++trial) {
    for (std::size_t z = 0; z < n; ++z) u[z] = random_functional(n, 2, rng, false);
    const auto G = random_functional(n, 3, rng, false);
    const double lhs = expectation_product(g, skorohod(u), G);
    const double rhs = expected_pairing(g, u, G);
    EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(rhs)));
  }
}

TEST(Skorohod, AdjointMonteCarlo) {
  const auto g = AtomGrid::uniform(1.0, 2, 1.0, {{1.0, 1.0}});
  const std::size_t n = g.size();
  Engine rng = make_stream(23, 0);
  std::vector<ChaosFunctional> u(n);
  for (std::size_t z = 0; z < n; ++z) u[z] = random_functional(n, 1, rng, false);
  ChaosFunctional G(n, 2);
  G.kernels[2] = random_kernel(n, 2, rng);
  G.kernels[1] = random_kernel(n, 1, rng);
  const auto du = skorohod(u);
  std::vector<double> a(100000), b(100000);
  parallel_for(a.size(), [&](std::size_t r) {
    Engine e = make_stream(24, r);
    const auto w = sample_noise(g, e);
    a[r] = evaluate(du, w) * evaluate(G, w);
    const auto grad = gradient(G, w);
    double s = 0.0;
    for (std::size_t z = 0; z < n; ++z) s += g[z].weight * evaluate(u[z], w) * grad[z];
    b[r] = s;
  });
  const double exact = expected_pairing(g, u, G);
  const auto ma = oracles::mean_se(a), mb = oracles::mean_se(b);
  EXPECT_NEAR(ma.mean, exact, 3 * ma.se);
  EXPECT_NEAR(mb.mean, exact, 3 * mb.se);
}

TEST(Poincare, Examples) {
  const auto g = mixed_grid();
  const std::size_t n = g.size();
  Engine rng = make_stream(25, 0);
  const Kernel f1 = random_kernel(n, 1, rng), f2 = random_kernel(n, 2, rng), f3 = random_kernel(n, 3, rng);
  auto r1 = poincare_report(g, ChaosFunctional::single(f1), 200, 1);
  EXPECT_TRUE(r1.poincare_equality);
  EXPECT_NEAR(r1.variance, r1.derivative_norm, 1e-12);
  EXPECT_NEAR(r1.mc_gamma_gap, 0.0, 1e-12);  // G_F is deterministic in the first chaos
  auto r2 = poincare_report(g, ChaosFunctional::single(f2), 200, 2);
  EXPECT_NEAR(r2.inverse_derivative_norm / r2.derivative_norm, 0.25, 1e-12);
  EXPECT_FALSE(r2.poincare_equality);
  ChaosFunctional F13(n, 3);
  F13.kernels[1] = f1;
  F13.kernels[3] = f3;
  auto r3 = poincare_report(g, F13, 200, 3);
  EXPECT_TRUE(r3.poincare_holds);
  EXPECT_FALSE(r3.poincare_equality);
  const double n1 = inner(g, f1, f1), n3 = inner(g, f3, f3);
  EXPECT_NEAR(r3.variance, n1 + 6.0 * n3, 1e-12 * r3.variance);
  EXPECT_NEAR(r3.derivative_norm, n1 + 18.0 * n3, 1e-12 * r3.derivative_norm);
  EXPECT_LT(r3.gamma_identity_error, 1e-12 * r3.variance);
  EXPECT_GT(r3.mc_jump_term, 0.0);
  EXPECT_EQ(code_of([&] { poincare_report(g, ChaosFunctional::constant(n, 1.0), 10, 1); }), ErrorCode::NotCentered);
}

TEST(Poincare, RandomKernels) {
  const auto g = mixed_grid();
  Engine rng = make_stream(26, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t top = 1 + trial % 3;
    const auto F = random_functional(g.size(), top, rng);
    const auto r = poincare_report(g, F, 0, 0);
    EXPECT_TRUE(r.poincare_holds);
    EXPECT_TRUE(r.inverse_bound_holds);
    EXPECT_EQ(r.poincare_equality, top == 1) << trial;
    EXPECT_LT(r.gamma_identity_error, 1e-12 * r.variance);
  }
}

TEST(ChaosJson, GridAndFunctional) {
  const auto j = nlohmann::json::parse(R"({
    "grid": {"uniform": {"horizon": 2, "cells": 2, "sigma2": 0.5, "jumps": [[1.0, 0.25]]}},
    "functional": {"kernels": [{"order": 1, "values": [1, 2, 3, 4]},
                               {"order": 2, "entries": [[[3, 0], 0.5], [[1, 2], -1]]}]}})");
  const auto g = grid_from_json(j["grid"]);
  EXPECT_EQ(g.size(), 4u);
  EXPECT_NEAR(g.total_weight(), 0.5 * 2 + 0.25 * 2, 1e-15);
  const auto F = functional_from_json(j["functional"], g.size());
  EXPECT_EQ(F.kernels[1].at({2}), 3.0);
  EXPECT_EQ(F.kernels[2].at({0, 3}), 0.5);
  EXPECT_EQ(F.kernels[2].at({2, 1}), -1.0);
  EXPECT_EQ(F.kernels[2].at({0, 1}), 0.0);
  const auto again = functional_from_json(to_json(F), g.size());
  for (std::size_t q = 0; q < F.kernels.size(); ++q) EXPECT_EQ(again.kernels[q].values, F.kernels[q].values);
  const auto explicit_grid = grid_from_json(nlohmann::json::parse(
      R"({"mesh": 1, "atoms": [{"t": 0, "weight": 0.5}, {"t": 0, "x": -2, "intensity": 0.25}]})"));
  EXPECT_EQ(explicit_grid[1].weight, 1.0);
  EXPECT_EQ(code_of([] { functional_from_json(nlohmann::json::parse(R"({"kernels": [{"order": 1, "values": [1]}]})"), 3); }),
            ErrorCode::InvalidParameter);
  EXPECT_EQ(code_of([] {
              functional_from_json(nlohmann::json::parse(R"({"kernels": [{"order": 2, "entries": [[[1, 1], 1]]}]})"), 3);
            }),
            ErrorCode::InvalidParameter);
}
