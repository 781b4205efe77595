#include "clifford/tensor.hpp"

#include "clifford/error.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace clifford {

Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

namespace detail {

std::uint64_t next_node_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

namespace {
thread_local bool grad_mode = true;
}

bool grad_enabled() { return grad_mode; }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape) : impl_(std::make_shared<Impl>()) {
  const Index n = shape_size(shape);
  impl_->shape = std::move(shape);
  impl_->values = Array<Scalar>::Zero(n);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array<Scalar> values) : impl_(std::make_shared<Impl>()) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value) {
  const Index n = shape_size(shape);
  return Tensor(std::move(shape), Array<Scalar>::Constant(n, value));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_values(Shape shape, std::initializer_list<Scalar> values) {
  Array<Scalar> a(static_cast<Index>(values.size()));
  std::copy(values.begin(), values.end(), a.data());
  return Tensor(std::move(shape), std::move(a));
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index i) const {
  const Index r = rank();
  const Index k = i < 0 ? r + i : i;
  if (k < 0 || k >= r) {
    throw DimensionError("axis " + std::to_string(i) + " out of range for shape " +
                         shape_string(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(k)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) {
    throw UsageError("item() on tensor of shape " + shape_string(shape()));
  }
  return impl_->values[0];
}

template <typename Scalar>
Tensor<Scalar>& Tensor<Scalar>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return Tensor(impl_->shape, impl_->values);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone() const {
  Tensor copy(impl_->shape, impl_->values);
  copy.impl_->requires_grad = impl_->requires_grad;
  return copy;
}

template <typename Scalar>
Tensor<Scalar> make_op_result(Shape shape, Array<Scalar> values, std::string_view op,
                              const std::vector<const Tensor<Scalar>*>& inputs,
                              std::function<void(const Array<Scalar>&)> backward) {
#ifndef NDEBUG
  if (!values.allFinite()) {
    const bool inputs_finite = std::all_of(inputs.begin(), inputs.end(), [](const Tensor<Scalar>* t) {
      return t->values().allFinite();
    });
    if (inputs_finite) {
      throw NumericError(std::string(op) + " produced a non-finite value from finite inputs");
    }
  }
#endif
  Tensor<Scalar> out(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  const bool tracked =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor<Scalar>* t) { return t->requires_grad(); });
  if (!tracked) return out;

  auto node = std::make_shared<detail::Node<Scalar>>();
  node->seq = detail::next_node_seq();
  node->op = op;
  node->inputs.reserve(inputs.size());
  for (const Tensor<Scalar>* t : inputs) node->inputs.push_back(t->impl());
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

template <typename Scalar>
Array<Scalar>* grad_sink(detail::TensorImpl<Scalar>& impl) {
  if (!impl.requires_grad) return nullptr;
  if (impl.grad.size() == 0) impl.grad = Array<Scalar>::Zero(impl.values.size());
  return &impl.grad;
}

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (loss.size() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  using Impl = detail::TensorImpl<Scalar>;
  std::vector<std::shared_ptr<Impl>> order;
  std::unordered_set<const Impl*> seen;
  std::vector<std::shared_ptr<Impl>> stack{loss.impl()};
  while (!stack.empty()) {
    auto impl = std::move(stack.back());
    stack.pop_back();
    if (!impl->node || !seen.insert(impl.get()).second) continue;
    for (const auto& in : impl->node->inputs) stack.push_back(in);
    order.push_back(std::move(impl));
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->node->seq > b->node->seq; });

  *grad_sink(*loss.impl()) += Scalar(1);
  for (const auto& impl : order) {
    if (impl->grad.size() == 0) continue;
    impl->node->backward(impl->grad);
    impl->grad.resize(0);
  }
}

template class Tensor<float>;
template class Tensor<double>;

#define CLIFFORD_INSTANTIATE(S)                                                              \
  template Tensor<S> make_op_result<S>(Shape, Array<S>, std::string_view,                    \
                                       const std::vector<const Tensor<S>*>&,                 \
                                       std::function<void(const Array<S>&)>);                \
  template Array<S>* grad_sink<S>(detail::TensorImpl<S>&);                                   \
  template void backward<S>(const Tensor<S>&);

CLIFFORD_INSTANTIATE(float)
CLIFFORD_INSTANTIATE(double)

#undef CLIFFORD_INSTANTIATE

}  // namespace clifford
