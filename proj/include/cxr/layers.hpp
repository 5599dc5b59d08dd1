#pragma once

#include <string>
#include <vector>

#include "cxr/ops.hpp"
#include "cxr/random.hpp"
#include "cxr/tensor.hpp"

namespace cxr {

// A named handle to a parameter member of some module. The pointer stays
// valid for as long as the owning module is not moved.
template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
std::size_t parameter_count(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor->numel();
  return n;
}

template <typename T>
void zero_grad(const ParamList<T>& params) {
  for (const auto& p : params) p.tensor->zero_grad();
}

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) leaf that requires a gradient.
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng);

// Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)), for weights feeding a relu.
template <typename T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, Rng& rng);

template <typename T>
Tensor<T> constant_param(Shape shape, T value);

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  // x (rows, in) -> (rows, out)
  Tensor<T> operator()(const Tensor<T>& x) const { return ops::add_bias(ops::matmul(x, weight), bias); }
  void collect(const std::string& prefix, ParamList<T>& out);

  Tensor<T> weight;  // (in, out)
  Tensor<T> bias;    // (out)
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParamList<T>& out);

  Tensor<T> gamma;
  Tensor<T> beta;
};

}  // namespace cxr
