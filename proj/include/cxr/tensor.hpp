#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cxr/error.hpp"

namespace cxr {

std::size_t numel_of(const Shape& shape);

// One value in the gradient graph. Leaves have no inputs; interior nodes keep
// their inputs alive and know how to push their gradient back into them.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first touched
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Dense row-major tensor handle. Copies share the underlying node.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value) { return from({}, {value}); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }

  std::span<const T> data() const { return node_->value; }
  // Parameter updates and checkpoint loading write through this.
  std::span<T> mutable_data() { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Zero-filled when the tensor never received a gradient.
  std::span<const T> grad() const { return node_->grad_buffer(); }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  T item() const;
  T at(std::size_t flat_index) const { return node_->value.at(flat_index); }

  // Fresh leaf with a copy of the values and no history.
  Tensor detach(bool requires_grad = false) const;

  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Recording is on by default; NoGradGuard switches it off for the current
// thread (inference, finite differences, momentum encoders).
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds the result of an op. The backward closure is kept only when
// recording is enabled and some input requires a gradient.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> inputs, std::function<void(Node<T>&)> backward);

// Topologically ordered view of everything reachable from an output.
template <typename T>
class GradGraph {
 public:
  explicit GradGraph(const Tensor<T>& output);

  // Inputs precede the nodes that consume them; the output is last.
  const std::vector<Node<T>*>& order() const noexcept { return order_; }
  std::size_t size() const noexcept { return order_.size(); }

  // Seeds d(output)/d(output) = 1 and runs every backward rule once, in
  // reverse order. Gradients accumulate into leaves.
  void backward();

 private:
  Tensor<T> output_;
  std::vector<Node<T>*> order_;
};

template <typename T>
void backward(const Tensor<T>& loss);

// Largest |analytic - central difference| / max(|analytic|, |numeric|, 1e-8)
// over all coordinates of `point`.
double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& fn,
                  const Tensor<double>& point, double h = 1e-5);

// Cast between precisions (values only, no history).
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> out(t.numel());
  auto src = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(src[i]);
  return Tensor<To>::from(t.shape(), std::move(out));
}

}  // namespace cxr
