#include "clifford/bench.hpp"

#include "clifford/error.hpp"
#include "clifford/experiment.hpp"
#include "clifford/geometry.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <random>
#include <sstream>

namespace clifford::bench {

namespace {

template <typename F>
double min_time(int repeats, F&& f) {
  f();  // warm-up
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < std::max(1, repeats); ++i) {
    const auto start = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  return best;
}

Tensor<float> random_field(Index h, Index w, Index d, std::mt19937_64& rng) {
  Tensor<float> t({1, h, w, d});
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = n(rng);
  return t;
}

}  // namespace

std::vector<std::pair<Index, Index>> doubling_grids() {
  return {{16, 16}, {16, 32}, {32, 32}, {32, 64}, {64, 64}, {64, 128}, {128, 128}};
}

std::vector<ScalingPoint> block_scaling(const ScalingOptions& options) {
  options.block.validate();
  retain_heap();
  NoGradGuard no_grad;
  std::mt19937_64 rng(options.seed);
  BlockParams<float> params = init_block<float>(options.block, rng);
  std::vector<ScalingPoint> points;
  for (auto [h, w] : options.grids) {
    const Tensor<float> x = random_field(h, w, options.block.dim, rng);
    ScalingPoint p;
    p.height = h;
    p.width = w;
    p.tokens = h * w;
    p.seconds = min_time(options.repeats, [&] { (void)clifford_block(x, params, options.block, ForwardOptions{}); });
    p.ns_per_token = 1e9 * p.seconds / static_cast<double>(p.tokens);
    p.ratio = points.empty() ? 0.0 : p.seconds / points.back().seconds;
    points.push_back(p);
  }
  return points;
}

std::vector<ShiftPoint> shift_sweep(const BlockConfig& base, const std::vector<ShiftSet>& sets, Index height,
                                    Index width, int repeats, std::uint64_t seed) {
  retain_heap();
  NoGradGuard no_grad;
  std::mt19937_64 rng(seed);
  const Tensor<float> h = random_field(height, width, base.dim, rng);
  const Tensor<float> c = random_field(height, width, base.dim, rng);
  std::vector<ShiftPoint> points;
  for (const auto& shifts : sets) {
    BlockConfig cfg = base;
    cfg.shifts = shifts;
    cfg.validate();
    BlockParams<float> params = init_block<float>(cfg, rng);
    ShiftPoint p;
    p.shift_count = shifts.size();
    p.interact_seconds = min_time(repeats, [&] { (void)clifford_interact(h, c, shifts, cfg.cli_mode); });
    p.block_seconds = min_time(repeats, [&] { (void)clifford_block(h, params, cfg, ForwardOptions{}); });
    p.interact_ratio = points.empty() ? 1.0 : p.interact_seconds / points.front().interact_seconds;
    points.push_back(p);
  }
  return points;
}

RatioCheck check_doubling(const std::vector<ScalingPoint>& points) {
  RatioCheck out;
  int gated = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    const auto& p = points[i];
    if (p.tokens < kGatedTokens) continue;
    ++gated;
    const bool ok = p.ratio >= kDoublingRatioMin && p.ratio <= kDoublingRatioMax;
    const double dist = std::abs(p.ratio - 2.0);
    if (gated == 1 || dist > std::abs(out.worst_ratio - 2.0)) out.worst_ratio = p.ratio;
    if (!ok) {
      out.passed = false;
      std::ostringstream msg;
      msg << "ratio " << p.ratio << " at N=" << p.tokens << " outside [" << kDoublingRatioMin << ", "
          << kDoublingRatioMax << "]";
      if (!out.detail.empty()) out.detail += "; ";
      out.detail += msg.str();
    }
  }
  if (gated == 0) {
    out.passed = false;
    out.detail = "no doubling step with N >= " + std::to_string(kGatedTokens);
  }
  return out;
}

RatioCheck check_shift_growth(const std::vector<ShiftPoint>& points) {
  RatioCheck out;
  if (points.size() < 2) {
    out.passed = false;
    out.detail = "need at least two shift sets";
    return out;
  }
  out.worst_ratio = points.back().interact_ratio;
  out.passed = out.worst_ratio >= kShiftRatioMin && out.worst_ratio <= kShiftRatioMax;
  if (!out.passed) {
    std::ostringstream msg;
    msg << "|S| " << points.front().shift_count << " -> " << points.back().shift_count << " interaction ratio "
        << out.worst_ratio << " outside [" << kShiftRatioMin << ", " << kShiftRatioMax << "]";
    out.detail = msg.str();
  }
  return out;
}

}  // namespace clifford::bench
