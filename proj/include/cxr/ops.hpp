#pragma once

#include <functional>
#include <span>
#include <vector>

#include "cxr/tensor.hpp"

// Differentiable ops. Shapes are checked on every call; there is no implicit
// broadcasting (add_bias is the one explicit row-broadcast). All ops are
// instantiated for float and double.
namespace cxr::ops {

enum class Padding { valid, same };

// Linear algebra
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a (M, K) and b (N, K) -> a b^T, the inner-product similarity matrix.
template <typename T> Tensor<T> similarity(const Tensor<T>& a, const Tensor<T>& b);
// Batched matmul over a leading group axis: (G, M, K) x (G, K, N), or
// (G, M, K) x (G, N, K)^T when transpose_b is set.
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

// Convolutions over (batch, channel, H, W). Kernels are square.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride, Padding padding);
// weight is (C_in, C_out, k, k); output side is (in - 1) * stride + k.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride);

// Elementwise
template <typename T> Tensor<T> relu(const Tensor<T>& x);

// While alive, records the sign of every relu input evaluated on this thread,
// in evaluation order.
class ReluSignRecorder {
 public:
  ReluSignRecorder();
  ~ReluSignRecorder();
  ReluSignRecorder(const ReluSignRecorder&) = delete;
  ReluSignRecorder& operator=(const ReluSignRecorder&) = delete;

  void note(bool positive) { signs_.push_back(positive); }
  const std::vector<bool>& signs() const { return signs_; }

 private:
  std::vector<bool> signs_;
  ReluSignRecorder* previous_;
};

// grad_check for piecewise-smooth functions: when a central difference would
// flip the sign of any relu input, that coordinate's step is divided by 10,
// up to three times, so the difference stays on one linear piece.
double grad_check_relu_aware(const std::function<Tensor<double>(const Tensor<double>&)>& fn,
                             const Tensor<double>& point, double h = 1e-4);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
// x (..., N) + bias (N) on every row.
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

// Reductions
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
// (..., N) -> (..., 1)
template <typename T> Tensor<T> sum_last(const Tensor<T>& x);
// (B, C, H, W) -> (B, C)
template <typename T> Tensor<T> mean_pool(const Tensor<T>& x);

// Layout
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
// (V, D) table, ids -> (ids.size(), D)
template <typename T> Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids);
// (M, N), one column index per row -> (M)
template <typename T> Tensor<T> gather_cols(const Tensor<T>& x, std::span<const int> cols);

// Normalization and probability. All act on the last axis unless noted.
template <typename T> Tensor<T> softmax(const Tensor<T>& x);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x);
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& x);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));
// x (B, C, H, W), statistics per (sample, group of C / groups channels).
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::size_t groups, T eps = T(1e-5));
// Scores (G, T, T): entries above the diagonal become a large negative value
// and receive no gradient.
template <typename T> Tensor<T> causal_mask(const Tensor<T>& scores);

// Losses (scalar outputs)
inline constexpr int kNoIgnore = -1;
// Mean over rows whose target differs from ignore_index.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, int ignore_index = kNoIgnore);
// Mean elementwise binary cross-entropy; targets are constants in [0, 1].
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets);

}  // namespace cxr::ops
