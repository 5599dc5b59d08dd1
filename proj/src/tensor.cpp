#include "cxr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace cxr {

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> values(numel_of(shape), value);
  return from(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (numel_of(shape) != values.size()) {
    throw ShapeError("tensor", shape, Shape{values.size()}, "value count does not match shape");
  }
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor", shape, {}, "dimensions must be positive");
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item", shape(), {}, "tensor is not a scalar");
  return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach(bool requires_grad) const {
  return from(shape(), node_->value, requires_grad);
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> inputs, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (grad_enabled()) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor<T>& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& t : inputs) node->inputs.push_back(t.node_ptr());
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
GradGraph<T>::GradGraph(const Tensor<T>& output) : output_(output) {
  // Iterative post-order DFS; each node is emitted once after its inputs.
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(output.node(), 0);
  visited.insert(output.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

template <typename T>
void GradGraph<T>::backward() {
  if (output_.numel() != 1) {
    throw ShapeError("backward", output_.shape(), {}, "loss must be a scalar");
  }
  Node<T>* out = output_.node();
  if (!out->requires_grad) return;
  out->grad_buffer()[0] += T(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && node->requires_grad) {
      node->grad_buffer();
      node->backward(*node);
    }
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  GradGraph<T>(loss).backward();
}

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& fn,
                  const Tensor<double>& point, double h) {
  Tensor<double> x = point.detach(true);
  Tensor<double> loss = fn(x);
  backward(loss);
  std::vector<double> analytic(x.grad().begin(), x.grad().end());

  NoGradGuard no_grad;
  Tensor<double> probe = point.detach(false);
  auto values = probe.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double original = values[i];
    values[i] = original + h;
    const double plus = fn(probe).item();
    values[i] = original - h;
    const double minus = fn(probe).item();
    values[i] = original;
    const double numeric = (plus - minus) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

template class Tensor<float>;
template class Tensor<double>;
template class GradGraph<float>;
template class GradGraph<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);
template Tensor<float> make_result(const char*, Shape, std::vector<float>, std::vector<Tensor<float>>,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(const char*, Shape, std::vector<double>,
                                    std::vector<Tensor<double>>, std::function<void(Node<double>&)>);

}  // namespace cxr
