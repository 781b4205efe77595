#pragma once

// Self-contained invariant suite: the rolling operators against the dense
// product, their algebraic identities, the gamma = 0 identity, and
// finite-difference gradient checks.
//
// The interaction kernels are injectable so tests can feed deliberately
// broken implementations and watch the matching property fail.

#include "clifford/network.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace clifford::verify {

struct PropertyResult {
  std::string name;
  bool passed = false;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;
  std::string detail;
};

std::string format_result(const PropertyResult& result);

using InteractionKernel = std::function<Tensor<float>(const Tensor<float>& h, const Tensor<float>& c, Index s)>;

struct InteractionKernels {
  InteractionKernel dot;
  InteractionKernel wedge;
};

InteractionKernels reference_kernels();
/// wedge computed as h*T_s(c) + c*T_s(h).
InteractionKernels sign_flip_kernels();
/// Both operators roll by -s instead of +s.
InteractionKernels reversed_roll_kernels();

inline constexpr double kOracleTolerance = 1e-6;
inline constexpr double kGradientToleranceFloat = 1e-3;
inline constexpr double kGradientToleranceDouble = 1e-6;
/// Step of the fourth-order central difference.
inline constexpr double kFiniteDifferenceStep = 1e-3;
/// Gradients identically zero by construction (a conv bias feeding a
/// training-mode batch norm) are measured against this fraction of the
/// largest gradient norm instead of their own.
inline constexpr double kGradientFloor = 1e-2;

/// For D in {4, 8, 16}, every s in [1, D) and `tokens` random pairs.
PropertyResult check_oracle_equivalence(const InteractionKernels& kernels, std::uint64_t seed, int tokens = 100);
/// Exact equality W_s(h, c) == -W_s(c, h) over `cases` random draws.
PropertyResult check_anti_symmetry(const InteractionKernels& kernels, std::uint64_t seed, int cases = 1000);
/// Exact W_s(h, h) == 0.
PropertyResult check_self_annihilation(const InteractionKernels& kernels, std::uint64_t seed, int cases = 1000);
/// W_0 and W_D vanish identically.
PropertyResult check_zero_shift(const InteractionKernels& kernels, std::uint64_t seed);

/// Every block of every preset with gamma = 0 returns its input bitwise,
/// in eval and in training mode.
PropertyResult check_identity(std::uint64_t seed, Index grid = 8);

/// |a - n| / max(|a|, |n|, floor), norms taken over the whole tensor.
double relative_error(const Array<double>& analytic, const Array<double>& numeric, double floor = 0.0);

struct GradientReport {
  double max_error = 0.0;
  std::string worst_tensor;
};

/// One block (B=2, 4x4 grid) with randomized parameters; central differences
/// evaluated in double precision are the reference for both precisions.
GradientReport block_gradient_error(const BlockConfig& config, bool single_precision, std::uint64_t seed);

/// Two-block model on 8x8 images with cross-entropy loss.
GradientReport model_gradient_error(const ModelConfig& config, bool single_precision, std::uint64_t seed);

/// D = 8 block over all cli_modes, ctx_modes and beta in {0, 1}.
PropertyResult check_block_gradients(bool single_precision, std::uint64_t seed);
PropertyResult check_model_gradients(bool single_precision, std::uint64_t seed);

std::vector<PropertyResult> run_suite(std::uint64_t seed);

}  // namespace clifford::verify
