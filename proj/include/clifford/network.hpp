#pragma once

// CliffordNet blocks and whole-model assembly.
//
// A block evolves a (B, h, w, D) field with one gated Euler step:
//
//   x_ln   = LayerNorm(x)
//   z_det  = Linear_det(x_ln)
//   z_ctx  = LocalContext(x_ln)            (minus z_det in diff mode)
//   g      = Linear_proj(clifford_interact(z_det, z_ctx))
//            [+ Linear_glo(clifford_interact(x_ln, mean(x_ln)))  when beta = 1]
//   alpha  = sigmoid(Linear_gate([x_ln | g]))
//   x'     = x + DropPath(gamma * (silu(x_ln) + alpha * g))
//
// There is no feed-forward sub-block.

#include "clifford/geometry.hpp"
#include "clifford/ops.hpp"
#include "clifford/tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace clifford {

enum class CtxMode {
  diff,  // context minus detail stream
  abs,   // raw local context
};

std::string_view to_string(CtxMode mode);
CtxMode parse_ctx_mode(std::string_view name);

struct BlockConfig {
  Index dim = 128;
  ShiftSet shifts{{1, 2}};
  CliMode cli_mode = CliMode::full;
  CtxMode ctx_mode = CtxMode::diff;
  int beta = 0;  // 1 enables the global (mean-field) branch
  double layerscale_init = 1e-2;
  /// Drop-path rate of the deepest block; shallower blocks ramp linearly from 0.
  double drop_path_rate = 0.1;
  /// One DWConv -> BN -> SiLU instead of the two-stage stack.
  bool single_conv_context = false;

  void validate() const;
};

struct ModelConfig {
  std::string variant_name = "custom";
  Index patch_size = 2;
  Index image_size = 32;
  Index in_channels = 3;
  Index depth = 12;
  Index num_classes = 100;
  BlockConfig block;

  Index dim() const { return block.dim; }
  Index grid() const { return image_size / patch_size; }
  /// Drop-path rate of block `index` (0-based).
  double drop_path_rate(Index index) const;
  void validate() const;
};

/// Sets one field by key: "patch_size", "depth", "block.shifts", ...
/// Throws ConfigError for unknown keys or unparsable values.
void set_config_field(ModelConfig& config, std::string_view key, std::string_view value);
/// Every settable field as (key, value) in a fixed order; values round-trip
/// through set_config_field exactly.
std::vector<std::pair<std::string, std::string>> config_fields(const ModelConfig& config);

/// Learnable tensors of one block, in serialization order.
template <typename Scalar>
struct BlockParams {
  Tensor<Scalar> norm_gain, norm_bias;
  Tensor<Scalar> det_weight, det_bias;                // Linear_det: D x D
  Tensor<Scalar> ctx1_kernel, ctx1_bias;              // depthwise [D, 3, 3]
  Tensor<Scalar> bn1_gain, bn1_bias;
  BatchNormState<Scalar> bn1;
  Tensor<Scalar> ctx2_kernel, ctx2_bias;              // undefined in single-conv mode
  Tensor<Scalar> bn2_gain, bn2_bias;
  BatchNormState<Scalar> bn2;
  Tensor<Scalar> proj_weight, proj_bias;              // Linear_proj: (k|S|D) x D
  Tensor<Scalar> glo_proj_weight, glo_proj_bias;      // only when beta = 1
  Tensor<Scalar> gate_weight, gate_bias;              // Linear_gate: 2D x D
  Tensor<Scalar> gamma;                               // LayerScale: D
};

template <typename Scalar>
struct Model {
  ModelConfig config;
  Tensor<Scalar> embed_weight, embed_bias;  // [P, P, 3, D], [D]
  Tensor<Scalar> stem_norm_gain, stem_norm_bias;
  std::vector<BlockParams<Scalar>> blocks;
  Tensor<Scalar> final_norm_gain, final_norm_bias;
  Tensor<Scalar> head_weight, head_bias;    // [D, classes], [classes]
};

/// How a parameter participates in weight decay.
enum class ParamKind { weight, bias, norm, layerscale };

template <typename Scalar>
using ParamVisitor = std::function<void(const std::string& name, Tensor<Scalar>& tensor, ParamKind kind)>;
template <typename Scalar>
using BufferVisitor = std::function<void(const std::string& name, Array<Scalar>& buffer)>;

/// Visits every learnable tensor in the fixed order: embed, stem norm,
/// blocks in index order (fields in BlockParams order), final norm, head.
template <typename Scalar>
void for_each_parameter(Model<Scalar>& model, const ParamVisitor<Scalar>& visit);

/// Visits batch-norm running statistics, block by block.
template <typename Scalar>
void for_each_buffer(Model<Scalar>& model, const BufferVisitor<Scalar>& visit);

template <typename Scalar>
std::int64_t param_count(Model<Scalar>& model);

/// Fresh parameters: truncated normal (std 0.02) weights, zero biases,
/// unit/zero norm affine, gamma = layerscale_init.
template <typename Scalar>
Model<Scalar> init_model(const ModelConfig& config, std::uint64_t seed);

template <typename Scalar>
BlockParams<Scalar> init_block(const BlockConfig& config, std::mt19937_64& rng);

/// Presets: nano, lite, net32, net64, nano-mini, each also with a
/// "-gffng" suffix that turns the global branch on.
ModelConfig variant_config(std::string_view name);
std::vector<std::string> variant_names();

/// Published learnable-scalar count of a preset, when one exists.
std::optional<std::int64_t> reference_param_count(std::string_view variant);

template <typename Scalar>
Model<Scalar> build_variant(std::string_view name, std::uint64_t seed) {
  return init_model<Scalar>(variant_config(name), seed);
}

// Forward pieces --------------------------------------------------------------

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // drop-path sampling; required when training with drop path
};

template <typename Scalar>
Tensor<Scalar> local_context(const Tensor<Scalar>& x, BlockParams<Scalar>& params, const BlockConfig& config,
                             bool training);

template <typename Scalar>
Tensor<Scalar> make_context(const Tensor<Scalar>& z_det, const Tensor<Scalar>& z_ctx, CtxMode mode);

/// Global branch: interaction of x with its spatial mean, projected to D.
template <typename Scalar>
Tensor<Scalar> gffn_g(const Tensor<Scalar>& x, const BlockParams<Scalar>& params, const BlockConfig& config);

/// Per-sample residual-branch keep factors (0 or 1/(1-rate)).
template <typename Scalar>
std::vector<Scalar> sample_drop_path(Index batch, double rate, std::mt19937_64& rng);

template <typename Scalar>
Tensor<Scalar> clifford_block(const Tensor<Scalar>& x, BlockParams<Scalar>& params, const BlockConfig& config,
                              const ForwardOptions& options, double drop_path_rate = 0.0);

/// Patch embedding and stem norm: images (B, H, W, 3) -> tokens (B, h, w, D).
template <typename Scalar>
Tensor<Scalar> embed(const Tensor<Scalar>& images, Model<Scalar>& model);

/// Final norm, pooling and classifier: tokens -> logits (B, classes).
template <typename Scalar>
Tensor<Scalar> head(const Tensor<Scalar>& tokens, Model<Scalar>& model);

template <typename Scalar>
Tensor<Scalar> model_forward(const Tensor<Scalar>& images, Model<Scalar>& model, const ForwardOptions& options);

}  // namespace clifford
