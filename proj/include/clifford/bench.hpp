#pragma once

// Wall-clock scaling of the block forward pass in the token count N and in
// the number of shifts |S|. Every timing is the minimum over repeats of an
// eval-mode forward with graph recording off.

#include "clifford/network.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace clifford::bench {

inline constexpr double kDoublingRatioMin = 1.6;
inline constexpr double kDoublingRatioMax = 2.6;
inline constexpr Index kGatedTokens = 4096;
inline constexpr double kShiftRatioMin = 3.5;
inline constexpr double kShiftRatioMax = 6.5;

struct ScalingPoint {
  Index height = 0;
  Index width = 0;
  Index tokens = 0;
  double seconds = 0.0;
  double ns_per_token = 0.0;
  double ratio = 0.0;  // seconds / seconds of the previous point; 0 for the first
};

/// (h, w) grids with N = 256, 512, ..., 16384.
std::vector<std::pair<Index, Index>> doubling_grids();

struct ScalingOptions {
  BlockConfig block;
  std::vector<std::pair<Index, Index>> grids = doubling_grids();
  int repeats = 5;
  std::uint64_t seed = 0;
};

std::vector<ScalingPoint> block_scaling(const ScalingOptions& options);

struct ShiftPoint {
  std::size_t shift_count = 0;
  double interact_seconds = 0.0;
  double block_seconds = 0.0;
  double interact_ratio = 0.0;  // against the first entry
};

std::vector<ShiftPoint> shift_sweep(const BlockConfig& base, const std::vector<ShiftSet>& sets, Index height,
                                    Index width, int repeats, std::uint64_t seed);

struct RatioCheck {
  bool passed = true;
  double worst_ratio = 0.0;
  std::string detail;
};

/// Ratios of points with tokens >= kGatedTokens must lie in the doubling band.
RatioCheck check_doubling(const std::vector<ScalingPoint>& points);
/// Last-to-first interaction ratio must lie in the shift band.
RatioCheck check_shift_growth(const std::vector<ShiftPoint>& points);

}  // namespace clifford::bench
