#pragma once

// Dense row-major tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to shared storage. Every differentiable op
// appends a node to the implicit computation graph; nodes carry a
// monotonically increasing sequence number, and backward() replays the
// reachable nodes in strictly decreasing sequence order. Feature maps use
// the (B, h, w, D) layout with channels innermost.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace clifford {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename Scalar>
using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

namespace detail {

template <typename Scalar>
struct Node;

template <typename Scalar>
struct TensorImpl {
  Shape shape;
  Array<Scalar> values;
  Array<Scalar> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node<Scalar>> node;  // null for leaves
};

template <typename Scalar>
struct Node {
  std::uint64_t seq = 0;
  std::string_view op;
  std::vector<std::shared_ptr<TensorImpl<Scalar>>> inputs;
  // Receives d(loss)/d(output) and accumulates into the inputs' grads.
  std::function<void(const Array<Scalar>&)> backward;
};

std::uint64_t next_node_seq();

}  // namespace detail

/// Whether ops currently record graph nodes (thread-local, default on).
bool grad_enabled();

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;
  using Impl = detail::TensorImpl<Scalar>;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Array<Scalar> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar value);
  static Tensor from_values(Shape shape, std::initializer_list<Scalar> values);
  static Tensor scalar(Scalar value) { return full({}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  Index rank() const { return static_cast<Index>(impl_->shape.size()); }
  /// Size of axis i; negative i counts from the end.
  Index dim(Index i) const;
  Index size() const { return impl_->values.size(); }

  const Array<Scalar>& values() const { return impl_->values; }
  /// Mutable storage. Only for parameter updates between steps and for
  /// filling freshly created inputs.
  Array<Scalar>& values() { return impl_->values; }
  Scalar item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return impl_->grad.size() != 0; }
  const Array<Scalar>& grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.resize(0); }

  /// Same values, no graph history, not tracking gradients.
  Tensor detach() const;
  /// Deep copy of values and the requires_grad flag; no history.
  Tensor clone() const;

  bool is_leaf() const { return impl_->node == nullptr; }
  const std::shared_ptr<Impl>& impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<Impl> impl) { return Tensor(std::move(impl)); }

 private:
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<Impl> impl_;
};

/// Builds an op output; attaches a graph node when grad mode is on and any
/// input tracks gradients. `backward` is invoked with d(loss)/d(output).
template <typename Scalar>
Tensor<Scalar> make_op_result(Shape shape, Array<Scalar> values, std::string_view op,
                              const std::vector<const Tensor<Scalar>*>& inputs,
                              std::function<void(const Array<Scalar>&)> backward);

/// Gradient buffer of a tensor (zero-filled on first use), or nullptr when it
/// does not track gradients. Used by op backward closures.
template <typename Scalar>
Array<Scalar>* grad_sink(detail::TensorImpl<Scalar>& impl);

/// Populates grads of every tracked tensor reachable from the scalar `loss`.
/// Leaf grads accumulate across calls; intermediate grads do not persist.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace clifford
