#include "clifford/bench.hpp"

#include <gtest/gtest.h>

using namespace clifford;
using namespace clifford::bench;

namespace {

std::vector<ScalingPoint> points(const std::vector<double>& ratios) {
  std::vector<ScalingPoint> out;
  Index n = 256;
  for (double r : ratios) {
    ScalingPoint p;
    p.tokens = n;
    p.ratio = r;
    out.push_back(p);
    n *= 2;
  }
  return out;
}

ShiftPoint shift_point(std::size_t k, double ratio) {
  ShiftPoint p;
  p.shift_count = k;
  p.interact_ratio = ratio;
  return p;
}

}  // namespace

TEST(Bench, DoublingGrids) {
  const auto grids = doubling_grids();
  ASSERT_EQ(grids.size(), 7u);
  EXPECT_EQ(grids.front().first * grids.front().second, 256);
  EXPECT_EQ(grids.back().first * grids.back().second, 16384);
  for (std::size_t i = 1; i < grids.size(); ++i) {
    EXPECT_EQ(grids[i].first * grids[i].second, 2 * grids[i - 1].first * grids[i - 1].second);
  }
}

TEST(Bench, DoublingCheckGatesLargeGridsOnly) {
  // Small grids are overhead-dominated and not gated.
  EXPECT_TRUE(check_doubling(points({0, 1.1, 1.3, 1.9, 2.1, 2.0, 1.95})).passed);
  const auto bad = check_doubling(points({0, 2.0, 2.0, 2.0, 2.0, 3.1, 2.0}));
  EXPECT_FALSE(bad.passed);
  EXPECT_DOUBLE_EQ(bad.worst_ratio, 3.1);
  EXPECT_NE(bad.detail.find("8192"), std::string::npos) << bad.detail;
  EXPECT_FALSE(check_doubling(points({0, 2.0})).passed);
}

TEST(Bench, ShiftGrowthBand) {
  EXPECT_TRUE(check_shift_growth({shift_point(1, 1.0), shift_point(2, 2.0), shift_point(5, 4.8)}).passed);
  EXPECT_FALSE(check_shift_growth({shift_point(1, 1.0), shift_point(5, 1.2)}).passed);
  EXPECT_FALSE(check_shift_growth({shift_point(1, 1.0), shift_point(5, 9.0)}).passed);
  EXPECT_FALSE(check_shift_growth({shift_point(1, 1.0)}).passed);
}

TEST(Bench, TinySweepRuns) {
  BlockConfig cfg;
  cfg.dim = 16;
  ScalingOptions opts;
  opts.block = cfg;
  opts.grids = {{4, 4}, {4, 8}};
  opts.repeats = 1;
  const auto pts = block_scaling(opts);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[1].tokens, 32);
  EXPECT_GT(pts[0].seconds, 0.0);
  EXPECT_GT(pts[1].ratio, 0.0);
  const auto sweep = shift_sweep(cfg, {ShiftSet({1}), ShiftSet({1, 2, 4})}, 4, 4, 1, 0);
  ASSERT_EQ(sweep.size(), 2u);
  EXPECT_EQ(sweep[1].shift_count, 3u);
  EXPECT_DOUBLE_EQ(sweep[0].interact_ratio, 1.0);
}
