#include "cxr/layers.hpp"

#include <cmath>

namespace cxr {

template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> values(numel_of(shape));
  for (auto& v : values) v = static_cast<T>(uniform(rng, -bound, bound));
  return Tensor<T>::from(std::move(shape), std::move(values), true);
}

template <typename T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<T> values(numel_of(shape));
  for (auto& v : values) v = static_cast<T>(uniform(rng, -bound, bound));
  return Tensor<T>::from(std::move(shape), std::move(values), true);
}

template <typename T>
Tensor<T> constant_param(Shape shape, T value) {
  return Tensor<T>::full(std::move(shape), value, true);
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(fan_in_uniform<T>({in, out}, in, rng)), bias(fan_in_uniform<T>({out}, in, rng)) {}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t dim) : gamma(constant_param<T>({dim}, T(1))), beta(constant_param<T>({dim}, T(0))) {}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".gamma", &gamma});
  out.push_back({prefix + ".beta", &beta});
}

template Tensor<float> fan_in_uniform<float>(Shape, std::size_t, Rng&);
template Tensor<double> fan_in_uniform<double>(Shape, std::size_t, Rng&);
template Tensor<float> he_uniform<float>(Shape, std::size_t, Rng&);
template Tensor<double> he_uniform<double>(Shape, std::size_t, Rng&);
template Tensor<float> constant_param<float>(Shape, float);
template Tensor<double> constant_param<double>(Shape, double);
template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;

}  // namespace cxr
