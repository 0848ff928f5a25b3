#include "bandro/band_kde.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

#include "test_oracles.hpp"

namespace bandro::kde {
namespace {

SampleSet normal_data(std::size_t n, std::size_t m, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  Vec v(n * m);
  for (double& x : v) x = rng.normal(0.0, sd);
  return SampleSet(m, std::move(v));
}

TEST(KernelTest, ValuesAtOrigin) {
  const SampleSet one = SampleSet::univariate({0.3});
  EXPECT_DOUBLE_EQ(kde_eval(one, Kernel(KernelName::Boxcar, 1), 1.0, 0.3), 0.5);
  EXPECT_NEAR(kde_eval(one, Kernel(KernelName::Gaussian, 1), 1.0, 0.3), 1.0 / std::sqrt(2.0 * std::numbers::pi),
              1e-15);
  EXPECT_DOUBLE_EQ(kde_eval(one, Kernel(KernelName::Epanechnikov, 1), 1.0, 0.3), 0.75);
}

TEST(KernelTest, UnitBallVolumes) {
  EXPECT_DOUBLE_EQ(unit_ball_volume(1), 2.0);
  EXPECT_NEAR(unit_ball_volume(2), std::numbers::pi, 1e-14);
  EXPECT_NEAR(unit_ball_volume(3), 4.0 / 3.0 * std::numbers::pi, 1e-14);
}

// Radial normalisation: integral of K over R^m equals m V_m int kappa t^{m-1}.
TEST(KernelTest, IntegratesToOneInEveryDimension) {
  for (KernelName name : {KernelName::Boxcar, KernelName::Gaussian, KernelName::Epanechnikov}) {
    for (std::size_t m = 1; m <= 10; ++m) {
      const Kernel k(name, m);
      const double md = static_cast<double>(m);
      EXPECT_NEAR(md * unit_ball_volume(m) * kernel_moment(k, md - 1.0), 1.0, 1e-8)
          << to_string(name) << " m=" << m;
    }
  }
}

TEST(KernelTest, MomentsMatchClosedForms) {
  for (std::size_t m = 1; m <= 10; ++m) {
    const Kernel g(KernelName::Gaussian, m), e(KernelName::Epanechnikov, m), b(KernelName::Boxcar, m);
    for (double s : {0.5, 1.0, 2.0, 3.5, static_cast<double>(m) + 1.0}) {
      const double gq = std::pow(2.0 * std::numbers::pi, -0.5 * m) * std::pow(2.0, 0.5 * (s - 1.0)) *
                        std::tgamma(0.5 * (s + 1.0));
      EXPECT_NEAR(kernel_moment(g, s), gq, 1e-9 * std::max(1.0, gq));
      const double eq = e.kappa(0.0) * (1.0 / (s + 1.0) - 1.0 / (s + 3.0));
      EXPECT_NEAR(kernel_moment(e, s), eq, 1e-9);
      EXPECT_DOUBLE_EQ(kernel_moment(b, s), b.kappa(0.0) / (s + 1.0));
    }
  }
}

TEST(KernelTest, ProfilesAreNonincreasing) {
  for (KernelName name : {KernelName::Boxcar, KernelName::Gaussian, KernelName::Epanechnikov}) {
    const Kernel k(name, 3);
    for (double t = 0.0; t < 5.0; t += 0.01) EXPECT_GE(k.kappa(t), k.kappa(t + 0.01));
  }
}

TEST(KernelTest, SamplerMatchesSecondMoment) {
  // E|V|^2 = m V_m int kappa t^{m+1}.
  for (KernelName name : {KernelName::Boxcar, KernelName::Gaussian, KernelName::Epanechnikov}) {
    for (std::size_t m : {1u, 2u, 5u}) {
      const Kernel k(name, m);
      Rng rng(17);
      Vec v(m);
      const int n = 100000;
      double s = 0.0, s2 = 0.0;
      for (int i = 0; i < n; ++i) {
        k.sample(rng, v);
        double r2 = 0.0;
        for (double x : v) r2 += x * x;
        s += r2;
        s2 += r2 * r2;
        if (k.support_radius() < INFINITY) ASSERT_LE(r2, 1.0 + 1e-12);
      }
      const double mean = s / n, sd = std::sqrt(s2 / n - mean * mean);
      const double md = static_cast<double>(m);
      const double expect = md * unit_ball_volume(m) * kernel_moment(k, md + 1.0);
      EXPECT_NEAR(mean, expect, 4.0 * sd / std::sqrt(n)) << to_string(name) << " m=" << m;
    }
  }
}

TEST(KdeEvalTest, IntegratesToOneByQuadrature) {
  const SampleSet data = normal_data(50, 1, 4);
  for (KernelName name : {KernelName::Boxcar, KernelName::Gaussian, KernelName::Epanechnikov}) {
    const Kernel k(name, 1);
    const double h = 0.4;
    const int nodes = 100000;
    const double a = -10.0, b = 10.0, w = (b - a) / nodes;
    double s = 0.0;
    for (int i = 0; i < nodes; ++i) s += kde_eval(data, k, h, a + (i + 0.5) * w) * w;
    EXPECT_NEAR(s, 1.0, 1e-3) << to_string(name);
  }
}

TEST(KdeEvalTest, TranslationEquivariance) {
  const SampleSet data = normal_data(30, 2, 8);
  const Vec shift{3.5, -1.25};
  Vec moved(data.flat().begin(), data.flat().end());
  for (std::size_t i = 0; i < moved.size(); ++i) moved[i] += shift[i % 2];
  const SampleSet shifted(2, moved);
  const Kernel k(KernelName::Gaussian, 2);
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const Vec q{rng.normal(), rng.normal()};
    const Vec qs{q[0] + shift[0], q[1] + shift[1]};
    EXPECT_NEAR(kde_eval(data, k, 0.5, q), kde_eval(shifted, k, 0.5, qs), 1e-13);
  }
}

TEST(KdeEvalTest, SinglePointBoxcarDecreasesInBandwidth) {
  for (std::size_t m : {1u, 2u, 3u}) {
    const SampleSet one(m, Vec(m, 0.0));
    const Kernel k(KernelName::Boxcar, m);
    const Vec origin(m, 0.0);
    double prev = INFINITY;
    for (double h = 0.1; h < 3.0; h += 0.1) {
      const double v = kde_eval(one, k, h, origin);
      EXPECT_NEAR(v, k.kappa(0.0) / std::pow(h, m), 1e-12 * v);
      EXPECT_LT(v, prev);
      prev = v;
    }
  }
}

TEST(KdeEvalTest, RejectsBadArguments) {
  const SampleSet data = normal_data(5, 2, 1);
  const Kernel k(KernelName::Boxcar, 2);
  const Vec q{0.0, 0.0}, q1{0.0};
  EXPECT_THROW(kde_eval(data, k, 0.0, q), InvalidParameter);
  EXPECT_THROW(kde_eval(data, k, 1.0, q1), InvalidParameter);
  EXPECT_THROW(parse_kernel("triangle"), InvalidParameter);
  EXPECT_EQ(parse_kernel("epanechnikov"), KernelName::Epanechnikov);
}

TEST(DeltaTest, BoxcarConstantsInOneDimension) {
  const Kernel k(KernelName::Boxcar, 1);
  const DeltaConstants d = delta_constants(1.0, 1.0, 1.0, k);
  EXPECT_NEAR(d.c1, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(d.c2, 32.0 / 3.0 * std::sqrt(2.0) + 32.0, 1e-12);
  EXPECT_NEAR(d.c2, 47.08494, 1e-5);
}

TEST(DeltaTest, LinearInHolderConstant) {
  const Kernel k(KernelName::Gaussian, 2);
  const std::size_t n = 1000;
  const double alpha = 0.1, h = 0.5;
  const double d1 = delta_theoretical(1.0, 0.7, 0.3, k, n, alpha, h);
  const double d2 = delta_theoretical(2.0, 0.7, 0.3, k, n, alpha, h);
  const DeltaConstants c = delta_constants(1.0, 0.7, 0.3, k);
  const DeltaConstants c2 = delta_constants(2.0, 0.7, 0.3, k);
  EXPECT_NEAR(c2.c1, 2.0 * c.c1, 1e-14);
  EXPECT_EQ(c2.c2, c.c2);
  EXPECT_NEAR(d2 - d1, c.c1 * std::pow(h, 0.7), 1e-12);
}

TEST(DeltaTest, DecreasesInNAndVanishesAtBalancedBandwidth) {
  const Kernel k(KernelName::Boxcar, 1);
  double prev = INFINITY;
  for (std::size_t n : {100u, 1000u, 10000u, 100000u}) {
    const double d = delta_theoretical(1.0, 1.0, 1.0, k, n, 0.2, 0.5);
    EXPECT_LT(d, prev);
    prev = d;
  }
  double big = INFINITY;
  for (double n : {1e3, 1e6, 1e9, 1e12}) {
    const std::size_t nn = static_cast<std::size_t>(n);
    const double d = delta_theoretical(1.0, 1.0, 1.0, k, nn, 0.2, balanced_bandwidth(nn, 0.2, 1.0, 1));
    EXPECT_LT(d, big);
    big = d;
  }
  EXPECT_LT(big, 0.1);
}

TEST(DeltaTest, BandwidthPreconditionEnforced) {
  const Kernel k(KernelName::Boxcar, 1);
  const double hmin = min_theoretical_bandwidth(100, 0.2, 1);
  EXPECT_NEAR(hmin, std::log(500.0) / 100.0, 1e-15);
  EXPECT_THROW(delta_theoretical(1.0, 1.0, 1.0, k, 100, 0.2, hmin), InvalidParameter);
  EXPECT_NO_THROW(delta_theoretical(1.0, 1.0, 1.0, k, 100, 0.2, hmin * 1.01));
  EXPECT_THROW(delta_theoretical(1.0, 1.5, 1.0, k, 100, 0.2, 1.0), InvalidParameter);
  EXPECT_THROW(delta_theoretical(0.0, 1.0, 1.0, k, 100, 0.2, 1.0), InvalidParameter);
}

TEST(KdeBandTest, SandwichAndWidthAlgebra) {
  const SampleSet data = normal_data(40, 1, 3);
  KdeParams p;
  p.h = 0.5;
  p.delta = 0.05;
  const DensityBand band = build_kde_band(data, p);
  EXPECT_EQ(band.kind(), BandKind::KDE);
  const auto* model = band.model_as<KdeBandModel>();
  ASSERT_NE(model, nullptr);
  const Box& box = band.box();
  for (int i = 0; i <= 500; ++i) {
    const double x = box.lower()[0] + box.width(0) * i / 500.0;
    const BandValue v = band.eval(x);
    const double ph = kde_eval(data, Kernel(KernelName::Boxcar, 1), 0.5, x);
    EXPECT_LE(v.lower, ph);
    EXPECT_LE(ph, v.upper);
    EXPECT_NEAR(v.lower, std::max(0.0, v.upper - 2.0 * p.delta), 1e-15);
    EXPECT_LE(v.upper, band.cap());
  }
}

TEST(KdeBandTest, ZeroDeltaIsDegenerate) {
  const SampleSet data = normal_data(20, 2, 5);
  KdeParams p;
  p.kernel = KernelName::Epanechnikov;
  p.h = 0.8;
  const DensityBand band = build_kde_band(data, p);
  Rng rng(2);
  Vec q(2);
  for (int i = 0; i < 100; ++i) {
    band.box().sample_uniform(rng, q);
    const BandValue v = band.eval(q);
    EXPECT_EQ(v.lower, v.upper);
  }
}

TEST(KdeBandTest, DefaultBoxIsPaddedByThreeBandwidths) {
  const SampleSet data = SampleSet::univariate({1.0, 2.0, 4.0});
  KdeParams p;
  p.h = 0.5;
  p.delta = 0.1;
  const DensityBand band = build_kde_band(data, p);
  EXPECT_DOUBLE_EQ(band.box().lower()[0], -0.5);
  EXPECT_DOUBLE_EQ(band.box().upper()[0], 5.5);
  EXPECT_EQ(band.eval(6.0).upper, 0.0);
  EXPECT_EQ(band.eval(-1.0).upper, 0.0);
  EXPECT_GT(band.eval(5.0).upper, 0.0);
}

TEST(KdeBandTest, RejectsDataOutsideBoxAndBadParameters) {
  const SampleSet data = SampleSet::univariate({1.0, 2.0, 4.0});
  KdeParams p;
  p.h = 0.5;
  p.box = Box::interval(0.0, 3.0);
  EXPECT_THROW(build_kde_band(data, p), InvalidParameter);
  p.box.reset();
  p.h = -1.0;
  EXPECT_THROW(build_kde_band(data, p), InvalidParameter);
  p.h = 1.0;
  p.delta = -0.1;
  EXPECT_THROW(build_kde_band(data, p), InvalidParameter);
}

TEST(KdeBandTest, SamplerDrawsFromEstimate) {
  // Histogram of draws against bin integrals of p_h (Gaussian kernel, 1-D).
  const SampleSet data = normal_data(25, 1, 12);
  KdeParams p;
  p.kernel = KernelName::Gaussian;
  p.h = 0.4;
  const DensityBand band = build_kde_band(data, p);
  const auto* model = band.model_as<KdeBandModel>();
  Rng rng(3);
  const int n = 200000, bins = 20;
  const double a = -3.0, b = 3.0, w = (b - a) / bins;
  std::vector<int> hist(bins, 0);
  Vec x(1);
  for (int i = 0; i < n; ++i) {
    model->sample(rng, x);
    const int j = static_cast<int>(std::floor((x[0] - a) / w));
    if (j >= 0 && j < bins) ++hist[j];
  }
  for (int j = 0; j < bins; ++j) {
    const double lo = a + j * w;
    const double prob = testing::simpson([&](double t) { return model->estimate(std::span<const double>(&t, 1)); },
                                         lo, lo + w, 200);
    const double se = std::sqrt(prob * (1.0 - prob) / n);
    EXPECT_NEAR(static_cast<double>(hist[j]) / n, prob, 4.0 * se + 1e-6) << "bin " << j;
  }
}

TEST(KdeBandTest, GridCsvLayout) {
  const SampleSet data = normal_data(10, 2, 1);
  KdeParams p;
  p.h = 1.0;
  p.delta = 0.01;
  const DensityBand band = build_kde_band(data, p);
  std::ostringstream os;
  const Vec xs{0.0, 0.5}, ys{-1.0, 0.0, 1.0};
  write_band_grid_csv(os, band, xs, ys);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "xi1,xi2,l,u");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 6);
  const DensityBand one_d = build_kde_band(SampleSet::univariate({0.0, 1.0}), p);
  EXPECT_THROW(write_band_grid_csv(os, one_d, xs, ys), InvalidParameter);
}

// Two-dimensional coverage at a fixed width: one batch of 200 repetitions
// fixes the attained level 1 - alpha, a fresh batch must reach 1 - alpha - 0.05.
TEST(KdeBandTest, TwoDimensionalCoverageIsReproducible) {
  auto coverage = [](std::uint64_t base) {
    int hit = 0;
    for (int r = 0; r < 200; ++r) {
      const SampleSet data = normal_data(200, 2, base + r);
      KdeParams p;
      p.h = 0.7;
      p.delta = 0.06;
      const DensityBand band = build_kde_band(data, p);
      bool ok = true;
      for (int i = 0; i <= 20 && ok; ++i) {
        for (int j = 0; j <= 20 && ok; ++j) {
          const double pt[2] = {-2.0 + 0.2 * i, -2.0 + 0.2 * j};
          const double truth = std::exp(-0.5 * (pt[0] * pt[0] + pt[1] * pt[1])) / (2.0 * std::numbers::pi);
          const BandValue v = band.eval(pt);
          ok = v.lower <= truth && truth <= v.upper;
        }
      }
      hit += ok;
    }
    return hit / 200.0;
  };
  const double attained = coverage(10000);
  EXPECT_GT(attained, 0.5);
  EXPECT_GE(coverage(20000), attained - 0.05);
}

}  // namespace
}  // namespace bandro::kde
