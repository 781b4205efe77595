#pragma once

// Differentiable operators over Tensor<Scalar>. Feature maps are
// (B, h, w, D) with channels innermost; "rows" below means the product of
// every axis except the last.

#include "clifford/tensor.hpp"

#include <span>
#include <vector>

namespace clifford {

/// Elementwise a + b. Shapes must match, or one operand is a rank-1
/// vector whose length equals the other's last axis (channel broadcast).
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
/// Hadamard product, same broadcasting rule as add.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar k);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape);

/// a[M, K] * b[K, N].
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
/// x[..., K] * weight[K, N] + bias[N]; bias may be undefined.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias);

/// out[..., c] = x[..., (c + s) mod D]. Backward rolls by -s.
template <typename Scalar>
Tensor<Scalar> roll_channels(const Tensor<Scalar>& x, Index s);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> silu(const Tensor<Scalar>& x);

inline constexpr double kNormEpsilon = 1e-5;

/// Normalizes each row over the channel axis, then applies gain/bias [D].
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& bias);

template <typename Scalar>
struct BatchNormState {
  Array<Scalar> running_mean;
  Array<Scalar> running_var;
  Scalar momentum = Scalar(0.1);

  BatchNormState() = default;
  explicit BatchNormState(Index channels)
      : running_mean(Array<Scalar>::Zero(channels)), running_var(Array<Scalar>::Ones(channels)) {}
};

/// Per-channel normalization over all rows. Training mode uses batch
/// statistics and updates `state`; eval mode is the affine map given by the
/// running statistics.
template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& bias, BatchNormState<Scalar>& state, bool training);

/// Depthwise 3x3 convolution, stride 1, zero padding 1. kernels [D, 3, 3],
/// bias [D] (may be undefined). x is (B, h, w, D).
template <typename Scalar>
Tensor<Scalar> dw_conv3x3(const Tensor<Scalar>& x, const Tensor<Scalar>& kernels,
                          const Tensor<Scalar>& bias);

/// Non-overlapping patch projection: x (B, H, W, C), weight [P, P, C, D],
/// bias [D]. Returns (B, H/P, W/P, D).
template <typename Scalar>
Tensor<Scalar> conv_patch_embed(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                                const Tensor<Scalar>& bias, Index patch);

/// (B, h, w, D) -> (B, D).
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x);
/// (B, D) -> (B, h, w, D), copying each sample's vector to every token.
template <typename Scalar>
Tensor<Scalar> broadcast_tokens(const Tensor<Scalar>& v, Index h, Index w);

/// Concatenates along the last axis; all other axes must agree.
template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<Tensor<Scalar>>& xs);

/// Multiplies sample b (first axis) by factors[b].
template <typename Scalar>
Tensor<Scalar> scale_samples(const Tensor<Scalar>& x, std::span<const Scalar> factors);

/// Mean over the batch of -log softmax(logits)[label].
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels);

}  // namespace clifford
