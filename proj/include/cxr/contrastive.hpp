#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "cxr/augment.hpp"
#include "cxr/layers.hpp"
#include "cxr/models.hpp"

namespace cxr {

// 2N projected views. pairing[i] is the positive j(i) of anchor i; the
// negatives B(i) are every index other than i.
template <typename T>
struct ContrastiveBatch {
  Tensor<T> z;  // (2N, k), rows unit norm
  std::vector<std::size_t> pairing;

  // Views laid out as [first views of 0..N-1, second views of 0..N-1].
  static ContrastiveBatch halves(Tensor<T> z);
  void validate() const;
};

struct LossConfig {
  double temperature = 0.5;
  // Evaluate the printed formula: -sum_i exp(s_ij) / sum_{k != i} exp(s_ik),
  // with no log and no averaging.
  bool literal_eq1 = false;

  void validate() const;
};

// Default mode: mean over the 2N anchors of
//   -log( exp(z_i.z_j(i) / t) / sum_{k != i} exp(z_i.z_k / t) ).
// Reductions are sorted, so the value is exactly invariant under a consistent
// relabelling of the batch.
template <typename T>
Tensor<T> nt_xent_loss(const ContrastiveBatch<T>& batch, const LossConfig& cfg);

// lr_max * w + lr_min * (1 - w), w = (1 + cos(pi * step / total)) / 2.
// Steps past the end return lr_min.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;  // decoupled: p -= lr * wd * p
};

struct OptimState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One Adam step using the gradients currently stored on the parameters.
// Moments are created on the first call; later calls must see the same
// parameter shapes.
template <typename T>
void adam_update(const ParamList<T>& params, OptimState& state, double lr);

// Encoder f plus projection head g.
template <typename T>
class ContrastiveModel {
 public:
  ContrastiveModel(const EncoderConfig& encoder, std::size_t projection_dim, Rng& rng);

  // images (B, 1, S, S) -> unit-norm z (B, k)
  Tensor<T> embed(const Tensor<T>& images) const;
  ParamList<T> params();

  Encoder<T> encoder;
  ProjectionHead<T> head;
};

template <typename T>
class MocoState {
 public:
  MocoState(ContrastiveModel<T>& query, std::size_t queue_capacity, double momentum, Rng& rng);

  // Key parameters become m * key + (1 - m) * query.
  void momentum_update(ContrastiveModel<T>& query);
  // Appends unit-norm keys (rows of a (n, k) matrix), dropping the oldest
  // entries beyond capacity.
  void enqueue(const Tensor<T>& keys);

  const ContrastiveModel<T>& key_model() const { return key_; }
  ContrastiveModel<T>& key_model() { return key_; }
  const std::deque<std::vector<T>>& queue() const { return queue_; }
  std::size_t capacity() const { return capacity_; }
  double momentum() const { return momentum_; }
  // (size, k) matrix of the current queue, oldest first.
  Tensor<T> queue_matrix() const;

 private:
  ContrastiveModel<T> key_;
  std::deque<std::vector<T>> queue_;
  std::size_t capacity_;
  double momentum_;
};

// Cross-entropy of each query against [its key, every queue entry], all
// divided by the temperature; the key is class 0. Mean over queries.
template <typename T>
Tensor<T> moco_loss(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& queue, double temperature);

template <typename T>
Tensor<T> image_batch(std::span<const GrayImage> images);

// One optimizer step on 2N views built by make_positive_pair. Returns the
// loss before the step.
template <typename T>
double simclr_step(std::span<const GrayImage> images, std::span<const LungMask> masks, ContrastiveModel<T>& model,
                   const AugmentConfig& augment, const LossConfig& loss, OptimState& optim, double lr, Rng& rng);

// Query view through `model`, key view through the momentum copy; keys are
// enqueued and the momentum update applied after the optimizer step.
template <typename T>
double moco_step(std::span<const GrayImage> images, std::span<const LungMask> masks, ContrastiveModel<T>& model,
                 MocoState<T>& moco, const AugmentConfig& augment, const LossConfig& loss, OptimState& optim, double lr,
                 Rng& rng);

}  // namespace cxr
