#include "bandro/core.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

namespace bandro {
namespace {

TEST(RngTest, SameSeedAndStreamReproduce) {
  Rng a(42, 7), b(42, 7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform(), b.uniform());
}

TEST(RngTest, DerivedStreamsIgnoreParentConsumption) {
  Rng parent(9);
  const Rng before = derive_stream(parent, "sgd");
  for (int i = 0; i < 10; ++i) parent.uniform();
  Rng after = derive_stream(parent, "sgd");
  Rng again = before;
  for (int i = 0; i < 20; ++i) EXPECT_EQ(after.uniform(), again.uniform());
}

TEST(RngTest, DistinctLabelsGiveDistinctStreams) {
  Rng parent(9);
  std::set<std::uint64_t> streams;
  for (const char* label : {"a", "b", "band", "sgd", "holdout", "trial-0", "trial-1"})
    streams.insert(derive_stream(parent, label).stream());
  EXPECT_EQ(streams.size(), 7u);
  Rng x = derive_stream(parent, "a"), y = derive_stream(parent, "b");
  int same = 0;
  for (int i = 0; i < 50; ++i) same += x.uniform() == y.uniform();
  EXPECT_EQ(same, 0);
}

TEST(RngTest, DistributionsHaveExpectedMoments) {
  Rng r(3);
  double s = 0.0, g = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    s += r.normal(2.0, 3.0);
    g += r.gamma(4.0);
  }
  EXPECT_NEAR(s / n, 2.0, 4.0 * 3.0 / std::sqrt(n));
  EXPECT_NEAR(g / n, 4.0, 4.0 * 2.0 / std::sqrt(n));
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform(-2.0, 5.0);
    EXPECT_GE(u, -2.0);
    EXPECT_LT(u, 5.0);
    EXPECT_LT(r.index(7), 7u);
  }
}

TEST(SampleSetTest, StoresPointsRowMajor) {
  const SampleSet s = SampleSet::from_points({{1, 2}, {3, 4}, {5, 6}}, 11);
  EXPECT_EQ(s.dim(), 2u);
  EXPECT_EQ(s.size(), 3u);
  EXPECT_EQ(s.seed(), 11u);
  EXPECT_EQ(s.point(1)[0], 3.0);
  EXPECT_EQ(s.column(1), (Vec{2, 4, 6}));
  const std::vector<std::size_t> idx{2, 0};
  const SampleSet t = s.subset(idx);
  EXPECT_EQ(t.column(0), (Vec{5, 1}));
}

TEST(SampleSetTest, RejectsMalformedInput) {
  EXPECT_THROW(SampleSet(2, Vec{1, 2, 3}), InvalidParameter);
  EXPECT_THROW(SampleSet(1, Vec{}), InvalidParameter);
  EXPECT_THROW(SampleSet(0, Vec{1}), InvalidParameter);
  EXPECT_THROW(SampleSet::univariate({1.0, NAN}), InvalidParameter);
  EXPECT_THROW(SampleSet::from_points({{1, 2}, {3}}), InvalidParameter);
}

TEST(BoxTest, VolumeContainsAndSampling) {
  const Box b({0, -1}, {2, 3});
  EXPECT_DOUBLE_EQ(b.volume(), 8.0);
  const Vec in{1, 0}, out{1, 4}, edge{2, 3};
  EXPECT_TRUE(b.contains(in));
  EXPECT_FALSE(b.contains(out));
  EXPECT_TRUE(b.contains(edge));
  Rng r(1);
  Vec p(2);
  for (int i = 0; i < 1000; ++i) {
    b.sample_uniform(r, p);
    EXPECT_TRUE(b.contains(p));
  }
  EXPECT_THROW(Box({0}, {0}), InvalidParameter);
  EXPECT_THROW(Box({0, 0}, {1}), InvalidParameter);
  EXPECT_THROW(Box({0}, {INFINITY}), InvalidParameter);
}

TEST(BoxTest, BoundingBoxIsPadded) {
  const SampleSet s = SampleSet::from_points({{0, 5}, {2, 1}});
  const Box b = Box::bounding(s, 0.5);
  EXPECT_EQ(b.lower(), (Vec{-0.5, 0.5}));
  EXPECT_EQ(b.upper(), (Vec{2.5, 5.5}));
  const Box degenerate = Box::bounding(SampleSet::univariate({3.0}), 0.0);
  EXPECT_GT(degenerate.volume(), 0.0);
}

TEST(DensityBandTest, ZeroOutsideBox) {
  const DensityBand band = make_explicit_band(Box::interval(0, 1), 2.0, [](std::span<const double>) {
    return BandValue{0.5, 1.5};
  });
  EXPECT_EQ(band.kind(), BandKind::Explicit);
  EXPECT_EQ(band.eval(0.5).upper, 1.5);
  EXPECT_EQ(band.eval(1.5).upper, 0.0);
  EXPECT_EQ(band.eval(-0.5).lower, 0.0);
  EXPECT_STREQ(to_string(BandKind::KDE), "kde");
  EXPECT_THROW(make_explicit_band(Box::interval(0, 1), 0.0, nullptr), InvalidParameter);
}

TEST(CsvTest, RoundTripsExactly) {
  const SampleSet s = SampleSet::from_points({{0.1, 1e-300}, {-2.5, 1.0 / 3.0}}, 5);
  std::ostringstream os;
  write_dataset_csv(os, s);
  EXPECT_EQ(os.str().substr(0, 17), "# m=2 N=2 seed=5\n");
  std::istringstream is(os.str());
  const SampleSet t = parse_dataset_csv(is);
  EXPECT_EQ(t.dim(), 2u);
  EXPECT_EQ(std::vector<double>(t.flat().begin(), t.flat().end()),
            std::vector<double>(s.flat().begin(), s.flat().end()));
}

TEST(CsvTest, SkipsCommentsAndRejectsGarbage) {
  std::istringstream ok("# header\n\n1, 2\r\n3,4\n");
  EXPECT_EQ(parse_dataset_csv(ok).size(), 2u);
  std::istringstream bad("1,x\n");
  EXPECT_THROW(parse_dataset_csv(bad), InvalidParameter);
  std::istringstream ragged("1,2\n3\n");
  EXPECT_THROW(parse_dataset_csv(ragged), InvalidParameter);
  std::istringstream empty("# nothing\n");
  EXPECT_THROW(parse_dataset_csv(empty), InvalidParameter);
  EXPECT_THROW(read_dataset_csv("/nonexistent/file.csv"), InvalidParameter);
}

TEST(ProblemSpecTest, MeanCostAveragesOverPoints) {
  ProblemSpec p;
  p.dim_x = 1;
  p.evaluate = [](std::span<const double> x, std::span<const double> xi) { return x[0] * xi[0]; };
  const Vec x{2.0};
  EXPECT_DOUBLE_EQ(mean_cost(p, x, SampleSet::univariate({1, 2, 3})), 4.0);
}

}  // namespace
}  // namespace bandro
