#include "bandro/oracle.hpp"

#include <gtest/gtest.h>

#include "bandro/band_kde.hpp"
#include "bandro/dro.hpp"
#include "bandro/problems.hpp"
#include "test_oracles.hpp"

namespace bandro::oracle {
namespace {

DensityBand constant_band(double a, double b, double l, double u) {
  return make_explicit_band(Box::interval(a, b), std::max(u, 1e-9),
                            [l, u](std::span<const double>) { return BandValue{l, u}; });
}

GridBand hand_grid(const Vec& l, const Vec& u, const Vec& w) {
  GridBand gb;
  for (std::size_t c = 0; c < l.size(); ++c) gb.cells.push_back({{static_cast<double>(c)}, w[c], l[c], u[c]});
  return gb;
}

TEST(DiscretizeTest, UniformBandCells) {
  const GridBand gb = discretize(constant_band(0, 1, 1, 1), 10);
  ASSERT_EQ(gb.size(), 10u);
  for (std::size_t c = 0; c < 10; ++c) {
    EXPECT_NEAR(gb.cells[c].centre[0], 0.05 + 0.1 * c, 1e-15);
    EXPECT_DOUBLE_EQ(gb.cells[c].lower, 1.0);
    EXPECT_DOUBLE_EQ(gb.cells[c].upper, 1.0);
  }
  EXPECT_NEAR(gb.lower_mass(), 1.0, 1e-15);
  EXPECT_TRUE(discretize(constant_band(0, 1, 0, 2), 10).feasible());
  EXPECT_THROW(discretize(constant_band(0, 1, 0, 2), 4), InvalidParameter);
}

TEST(DiscretizeTest, TwoDimensionalGrid) {
  const DensityBand band = make_explicit_band(Box({0, 0}, {2, 1}), 1.0, [](std::span<const double> x) {
    return BandValue{0.0, x[0] < 1.0 ? 1.0 : 0.0};
  });
  const GridBand gb = discretize(band, 20);
  EXPECT_EQ(gb.size(), 400u);
  EXPECT_NEAR(gb.upper_mass(), 1.0, 1e-12);
  EXPECT_TRUE(gb.feasible());
}

TEST(DiscretizeTest, KdeBandBracketsUnitMass) {
  Rng rng(3);
  Vec v(60);
  for (double& x : v) x = rng.normal();
  kde::KdeParams p;
  p.h = 0.5;
  p.delta = 0.05;
  const GridBand gb = discretize(kde::build_kde_band(SampleSet::univariate(v), p), 2000);
  EXPECT_LE(gb.lower_mass(), 1.0);
  EXPECT_GE(gb.upper_mass(), 1.0);
}

TEST(InnerSupTest, ThreeCellExample) {
  const GridBand gb = hand_grid({0.1, 0.1, 0.1}, {0.6, 0.6, 0.6}, {1, 1, 1});
  const Vec f{3, 2, 1};
  const InnerSup g = inner_sup(gb, f);
  EXPECT_NEAR(g.density[0], 0.6, 1e-15);
  EXPECT_NEAR(g.density[1], 0.3, 1e-15);
  EXPECT_NEAR(g.density[2], 0.1, 1e-15);
  EXPECT_NEAR(g.value, 2.5, 1e-15);
  EXPECT_NEAR(inner_sup_lp(gb, f).value, 2.5, 1e-12);
}

TEST(InnerSupTest, NoSlackGivesLowerEnvelope) {
  const GridBand gb = hand_grid({0.25, 0.5, 0.25}, {0.25, 0.5, 0.25}, {1, 1, 1});
  EXPECT_NEAR(inner_sup(gb, Vec{1, 5, -2}).value, 0.25 + 2.5 - 0.5, 1e-15);
  EXPECT_NEAR(inner_sup(gb, Vec{-2, 5, 1}).value, 0.25 + 2.5 - 0.5, 1e-15);
}

TEST(InnerSupTest, TiesFillLowerIndexFirst) {
  const GridBand gb = hand_grid({0, 0, 0}, {1, 1, 1}, {0.5, 0.5, 0.5});
  const InnerSup g = inner_sup(gb, Vec{1, 1, 1});
  EXPECT_EQ(g.density, (Vec{1, 1, 0}));
}

TEST(InnerSupTest, PermutationCovariance) {
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    const std::size_t g = 12;
    Vec l(g), u(g), w(g), f(g);
    for (std::size_t c = 0; c < g; ++c) {
      l[c] = rng.uniform(0, 0.5);
      u[c] = l[c] + rng.uniform(0, 1);
      w[c] = 0.2;
      f[c] = rng.normal();  // distinct values almost surely
    }
    std::vector<std::size_t> perm(g);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    Vec lp(g), up(g), wp(g), fp(g);
    for (std::size_t c = 0; c < g; ++c) {
      lp[c] = l[perm[c]];
      up[c] = u[perm[c]];
      wp[c] = w[perm[c]];
      fp[c] = f[perm[c]];
    }
    const GridBand a = hand_grid(l, u, w), b = hand_grid(lp, up, wp);
    if (!a.feasible()) continue;
    const InnerSup ra = inner_sup(a, f), rb = inner_sup(b, fp);
    EXPECT_NEAR(ra.value, rb.value, 1e-12);
    for (std::size_t c = 0; c < g; ++c) EXPECT_NEAR(rb.density[c], ra.density[perm[c]], 1e-12);
  }
}

GridBand random_grid(Rng& rng, std::size_t g) {
  GridBand gb;
  Vec w(g);
  double wsum = 0.0;
  for (double& v : w) wsum += (v = rng.uniform(0.5, 1.5));
  // Random l, u then rescaled so that sum l w < 1 < sum u w.
  Vec l(g), u(g);
  double lm = 0.0;
  for (std::size_t c = 0; c < g; ++c) {
    w[c] /= wsum;
    l[c] = rng.uniform() < 0.2 ? 0.0 : rng.uniform(0, 1);
    u[c] = l[c] + (rng.uniform() < 0.1 ? 0.0 : rng.uniform(0, 2));
    lm += l[c] * w[c];
  }
  const double target_l = rng.uniform(0.0, 0.95), target_u = rng.uniform(1.05, 3.0);
  for (std::size_t c = 0; c < g; ++c) {
    const double slack = u[c] - l[c];
    l[c] *= lm > 0 ? target_l / lm : 1.0;
    u[c] = l[c] + slack;
  }
  double um2 = 0.0;
  for (std::size_t c = 0; c < g; ++c) um2 += u[c] * w[c];
  if (um2 < target_u) {
    for (std::size_t c = 0; c < g; ++c) u[c] += target_u - um2;
  }
  for (std::size_t c = 0; c < g; ++c) gb.cells.push_back({{static_cast<double>(c)}, w[c], l[c], u[c]});
  return gb;
}

TEST(InnerSupTest, GreedyMatchesLpOnRandomInstances) {
  Rng rng(2024);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t g = 1 + rng.index(200);
    const GridBand gb = random_grid(rng, g);
    ASSERT_TRUE(gb.feasible());
    Vec f(g);
    for (double& v : f) v = rng.uniform() < 0.3 ? std::round(rng.normal() * 2) : rng.normal();
    const InnerSup a = inner_sup(gb, f), b = inner_sup_lp(gb, f);
    EXPECT_NEAR(a.value, b.value, 1e-9) << "instance " << t;
    double mass = 0.0;
    for (std::size_t c = 0; c < g; ++c) {
      EXPECT_GE(a.density[c], gb.cells[c].lower - 1e-12);
      EXPECT_LE(a.density[c], gb.cells[c].upper + 1e-12);
      mass += a.density[c] * gb.cells[c].width;
    }
    EXPECT_NEAR(mass, 1.0, 1e-10);
  }
}

TEST(InnerSupTest, SmallInstancesMatchVertexEnumeration) {
  Rng rng(12);
  for (int t = 0; t < 200; ++t) {
    const std::size_t g = 1 + rng.index(5);
    const GridBand gb = random_grid(rng, g);
    Vec f(g), c(g);
    std::vector<testing::Halfspace> hs;
    Vec mass(g);
    for (std::size_t k = 0; k < g; ++k) {
      f[k] = rng.normal();
      c[k] = f[k] * gb.cells[k].width;
      mass[k] = gb.cells[k].width;
      Vec e(g, 0.0);
      e[k] = 1.0;
      hs.push_back({e, gb.cells[k].upper});
      e[k] = -1.0;
      hs.push_back({e, -gb.cells[k].lower});
    }
    hs.push_back({mass, 1.0, true});
    const auto ref = testing::vertex_enumerate(c, hs, true);
    ASSERT_TRUE(ref.feasible);
    EXPECT_NEAR(inner_sup(gb, f).value, ref.best, 1e-9);
  }
}

TEST(InnerSupTest, MonotoneInUpperBand) {
  Rng rng(31);
  for (int t = 0; t < 200; ++t) {
    GridBand gb = random_grid(rng, 30);
    Vec f(30);
    for (double& v : f) v = rng.normal();
    const double before = inner_sup(gb, f).value;
    gb.cells[rng.index(30)].upper += rng.uniform(0, 1);
    EXPECT_GE(inner_sup(gb, f).value, before - 1e-12);
  }
}

TEST(InnerSupTest, InfeasibleBandRejected) {
  const GridBand low = hand_grid({0, 0}, {0.2, 0.2}, {1, 1});
  EXPECT_THROW(inner_sup(low, Vec{1, 2}), InvalidParameter);
  const GridBand high = hand_grid({0.8, 0.8}, {1, 1}, {1, 1});
  EXPECT_THROW(inner_sup_lp(high, Vec{1, 2}), InvalidParameter);
  EXPECT_THROW(inner_sup(high, Vec{1}), InvalidParameter);
}

TEST(RobustValueTest, ConstantObjective) {
  ProblemSpec p;
  p.dim_x = 1;
  p.evaluate = [](std::span<const double>, std::span<const double>) { return 3.25; };
  const Vec x{0.0};
  EXPECT_NEAR(robust_value_oracle(p, constant_band(0, 1, 0.2, 3.0), x, 100), 3.25, 1e-12);
}

TEST(RobustValueTest, MonotoneObjectiveSaturatesHighSide) {
  ProblemSpec p;
  p.dim_x = 1;
  p.evaluate = [](std::span<const double>, std::span<const double> xi) { return xi[0]; };
  const DensityBand band = constant_band(0, 1, 0.5, 2.0);
  const GridBand gb = discretize(band, 100);
  const Vec x{0.0};
  const InnerSup r = inner_sup(gb, cell_values(p, x, gb));
  // l = 0.5 everywhere, then 0.5 extra mass at density 1.5 excess on the top third.
  for (std::size_t c = 0; c < 100; ++c) {
    const double expect = c >= 67 ? 2.0 : (c == 66 ? 0.5 + 1.5 * (1.0 / 3.0 - 0.33) / 0.01 : 0.5);
    EXPECT_NEAR(r.density[c], expect, 1e-9) << c;
  }
}

TEST(RobustValueTest, NewsvendorMatchesDualMinimum) {
  const ProblemSpec p = problems::make_newsvendor({19.0, 1.0, 1.0});
  const DensityBand band = constant_band(0, 1, 1, 1);
  const Vec x{0.95};
  const double v = robust_value_oracle(p, band, x, 2000);
  EXPECT_NEAR(v, 0.475, 1e-6);
  const double dual = dro::min_dual_objective(x, band, p, 2000).value;
  EXPECT_NEAR(dual, v, 1e-3 * std::abs(v));
}

}  // namespace
}  // namespace bandro::oracle
