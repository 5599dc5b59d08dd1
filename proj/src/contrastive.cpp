#include "cxr/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "cxr/error.hpp"

namespace cxr {

namespace {

double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

}  // namespace

template <typename T>
ContrastiveBatch<T> ContrastiveBatch<T>::halves(Tensor<T> z) {
  if (z.rank() != 2 || z.dim(0) % 2 != 0) {
    throw ShapeError("contrastive_batch", z.shape(), Shape{0, 0}, "expected an even number of view rows");
  }
  const std::size_t n = z.dim(0) / 2;
  ContrastiveBatch batch{std::move(z), std::vector<std::size_t>(2 * n)};
  for (std::size_t i = 0; i < n; ++i) {
    batch.pairing[i] = i + n;
    batch.pairing[i + n] = i;
  }
  return batch;
}

template <typename T>
void ContrastiveBatch<T>::validate() const {
  if (!z.defined() || z.rank() != 2) throw ShapeError("nt_xent", z.defined() ? z.shape() : Shape{}, Shape{0, 0});
  const std::size_t m = z.dim(0);
  if (m < 2 || m % 2 != 0) throw DegenerateInputError("nt_xent", "need 2N views with N >= 1");
  if (pairing.size() != m) throw ShapeError("nt_xent", z.shape(), Shape{pairing.size()}, "pairing size");
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = pairing[i];
    if (j >= m || j == i || pairing[j] != i) {
      throw DegenerateInputError("nt_xent", "pairing must be an involution without fixed points");
    }
  }
  const std::size_t k = z.dim(1);
  auto v = z.data();
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t c = 0; c < k; ++c) sq += static_cast<double>(v[i * k + c]) * v[i * k + c];
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
      throw DegenerateInputError("nt_xent", "view " + std::to_string(i) + " is not unit norm");
    }
  }
}

void LossConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("loss: temperature must be positive");
}

template <typename T>
Tensor<T> nt_xent_loss(const ContrastiveBatch<T>& batch, const LossConfig& cfg) {
  cfg.validate();
  batch.validate();
  const std::size_t m = batch.z.dim(0), k = batch.z.dim(1);
  const double tau = cfg.temperature;
  auto zv = batch.z.data();

  std::vector<double> s(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < k; ++c) dot += static_cast<double>(zv[i * k + c]) * zv[j * k + c];
      s[i * m + j] = dot / tau;
    }

  // p[i, k] = softmax over k in B(i); diagonal stays 0.
  std::vector<double> p(m * m, 0.0);
  std::vector<double> per_anchor(m);
  std::vector<double> terms;
  terms.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < m; ++j)
      if (j != i) mx = std::max(mx, s[i * m + j]);
    terms.clear();
    for (std::size_t j = 0; j < m; ++j)
      if (j != i) terms.push_back(std::exp(s[i * m + j] - mx));
    const double z = sorted_sum(terms);
    for (std::size_t j = 0; j < m; ++j)
      if (j != i) p[i * m + j] = std::exp(s[i * m + j] - mx) / z;
    const std::size_t pos = batch.pairing[i];
    per_anchor[i] = cfg.literal_eq1 ? -p[i * m + pos] : (mx - s[i * m + pos]) + std::log(z);
  }
  double loss = sorted_sum(per_anchor);
  if (!cfg.literal_eq1) loss /= static_cast<double>(m);

  // dL/ds[i, k]
  std::vector<double> g(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t pos = batch.pairing[i];
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      const double ind = j == pos ? 1.0 : 0.0;
      g[i * m + j] = cfg.literal_eq1 ? p[i * m + pos] * (p[i * m + j] - ind)
                                     : (p[i * m + j] - ind) / static_cast<double>(m);
    }
  }

  return make_result<T>("nt_xent", {}, {static_cast<T>(loss)}, {batch.z},
                        [m, k, tau, g = std::move(g)](Node<T>& self) {
                          auto& Z = *self.inputs[0];
                          auto& d = Z.grad_buffer();
                          const double up = self.grad[0];
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t c = 0; c < k; ++c) {
                              double acc = 0.0;
                              for (std::size_t j = 0; j < m; ++j) {
                                acc += (g[i * m + j] + g[j * m + i]) * static_cast<double>(Z.value[j * k + c]);
                              }
                              d[i * k + c] += static_cast<T>(up * acc / tau);
                            }
                        });
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min) {
  if (total_steps == 0 || step >= total_steps) return step == 0 && total_steps == 0 ? lr_max : lr_min;
  const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
  return lr_max * w + lr_min * (1.0 - w);
}

template <typename T>
void adam_update(const ParamList<T>& params, OptimState& state, double lr) {
  const AdamConfig& c = state.config;
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor->numel(), 0.0);
      state.v.emplace_back(p.tensor->numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_update", Shape{params.size()}, Shape{state.m.size()}, "parameter count changed");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].tensor->numel()) {
      throw ShapeError("adam_update", params[i].tensor->shape(), Shape{state.m[i].size()}, params[i].name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i].tensor;
    auto value = p.mutable_data();
    auto grad = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t e = 0; e < value.size(); ++e) {
      const double gr = grad[e];
      m[e] = c.beta1 * m[e] + (1.0 - c.beta1) * gr;
      v[e] = c.beta2 * v[e] + (1.0 - c.beta2) * gr * gr;
      const double step = (m[e] / bc1) / (std::sqrt(v[e] / bc2) + c.eps);
      double x = value[e];
      x -= lr * step;
      x -= lr * c.weight_decay * static_cast<double>(value[e]);
      value[e] = static_cast<T>(x);
    }
  }
}

template <typename T>
ContrastiveModel<T>::ContrastiveModel(const EncoderConfig& encoder_config, std::size_t projection_dim, Rng& rng)
    : encoder(encoder_config, rng), head(encoder_config.output_dim(), projection_dim, rng) {}

template <typename T>
Tensor<T> ContrastiveModel<T>::embed(const Tensor<T>& images) const {
  return ops::l2_normalize(head.forward(encoder.forward(images).pooled));
}

template <typename T>
ParamList<T> ContrastiveModel<T>::params() {
  ParamList<T> out;
  encoder.collect("encoder", out);
  head.collect("projection", out);
  return out;
}

template <typename T>
MocoState<T>::MocoState(ContrastiveModel<T>& query, std::size_t queue_capacity, double momentum, Rng& rng)
    : key_(query.encoder.config(), query.head.output_dim(), rng), capacity_(queue_capacity), momentum_(momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("moco: momentum must lie in [0, 1]");
  if (queue_capacity == 0) throw ConfigError("moco: queue capacity must be positive");
  const auto src = query.params();
  const auto dst = key_.params();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto from = src[i].tensor->data();
    auto to = dst[i].tensor->mutable_data();
    std::copy(from.begin(), from.end(), to.begin());
  }
  const std::size_t k = query.head.output_dim();
  for (std::size_t e = 0; e < queue_capacity; ++e) {
    std::vector<double> v(k);
    double sq = 0.0;
    for (auto& x : v) {
      x = standard_normal(rng);
      sq += x * x;
    }
    const double norm = std::sqrt(sq);
    std::vector<T> row(k);
    for (std::size_t c = 0; c < k; ++c) row[c] = static_cast<T>(v[c] / norm);
    queue_.push_back(std::move(row));
  }
}

template <typename T>
void MocoState<T>::momentum_update(ContrastiveModel<T>& query) {
  const auto src = query.params();
  const auto dst = key_.params();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto from = src[i].tensor->data();
    auto to = dst[i].tensor->mutable_data();
    for (std::size_t e = 0; e < to.size(); ++e) {
      to[e] = static_cast<T>(momentum_ * static_cast<double>(to[e]) + (1.0 - momentum_) * static_cast<double>(from[e]));
    }
  }
}

template <typename T>
void MocoState<T>::enqueue(const Tensor<T>& keys) {
  const std::size_t k = key_.head.output_dim();
  if (keys.rank() != 2 || keys.dim(1) != k) throw ShapeError("moco_enqueue", keys.shape(), Shape{0, k});
  auto v = keys.data();
  for (std::size_t r = 0; r < keys.dim(0); ++r) {
    queue_.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(r * k), v.begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
    if (queue_.size() > capacity_) queue_.pop_front();
  }
}

template <typename T>
Tensor<T> MocoState<T>::queue_matrix() const {
  const std::size_t k = key_.head.output_dim();
  std::vector<T> flat;
  flat.reserve(queue_.size() * k);
  for (const auto& row : queue_) flat.insert(flat.end(), row.begin(), row.end());
  if (queue_.empty()) return Tensor<T>();
  return Tensor<T>::from({queue_.size(), k}, std::move(flat));
}

template <typename T>
Tensor<T> moco_loss(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& queue, double temperature) {
  if (q.rank() != 2 || q.shape() != k.shape()) throw ShapeError("moco_loss", q.shape(), k.shape());
  if (!(temperature > 0.0)) throw ConfigError("loss: temperature must be positive");
  Tensor<T> logits = ops::sum_last(ops::mul(q, k));
  if (queue.defined()) logits = ops::concat<T>({logits, ops::similarity(q, queue)}, 1);
  logits = ops::scale(logits, static_cast<T>(1.0 / temperature));
  const std::vector<int> targets(q.dim(0), 0);
  return ops::cross_entropy(logits, std::span<const int>(targets));
}

template <typename T>
Tensor<T> image_batch(std::span<const GrayImage> images) {
  if (images.empty()) throw DegenerateInputError("image_batch", "empty batch");
  const std::size_t H = images[0].height(), W = images[0].width();
  std::vector<T> flat;
  flat.reserve(images.size() * H * W);
  for (const auto& img : images) {
    if (img.height() != H || img.width() != W) {
      throw ShapeError("image_batch", Shape{H, W}, Shape{img.height(), img.width()}, "images differ in size");
    }
    flat.insert(flat.end(), img.pixels().begin(), img.pixels().end());
  }
  return Tensor<T>::from({images.size(), 1, H, W}, std::move(flat));
}

namespace {

template <typename T>
double finite_or_throw(const Tensor<T>& loss, const char* what) {
  const double v = loss.item();
  if (!std::isfinite(v)) throw NumericalError(std::string(what) + ": loss is not finite");
  return v;
}

void check_batch(std::size_t images, std::size_t masks, const char* op) {
  if (images != masks) throw ShapeError(op, Shape{images}, Shape{masks}, "one mask per image");
  if (images < 2) throw DegenerateInputError(op, "batch needs at least two images");
}

}  // namespace

template <typename T>
double simclr_step(std::span<const GrayImage> images, std::span<const LungMask> masks, ContrastiveModel<T>& model,
                   const AugmentConfig& augment, const LossConfig& loss_cfg, OptimState& optim, double lr, Rng& rng) {
  check_batch(images.size(), masks.size(), "simclr_step");
  const std::size_t n = images.size();
  std::vector<GrayImage> views(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    auto pair = make_positive_pair(images[i], masks[i], augment, rng);
    views[i] = std::move(pair.first);
    views[i + n] = std::move(pair.second);
  }
  const auto batch = ContrastiveBatch<T>::halves(model.embed(image_batch<T>(views)));
  Tensor<T> loss = nt_xent_loss(batch, loss_cfg);
  const double value = finite_or_throw(loss, "simclr_step");
  const auto params = model.params();
  zero_grad(params);
  backward(loss);
  adam_update(params, optim, lr);
  return value;
}

template <typename T>
double moco_step(std::span<const GrayImage> images, std::span<const LungMask> masks, ContrastiveModel<T>& model,
                 MocoState<T>& moco, const AugmentConfig& augment, const LossConfig& loss_cfg, OptimState& optim,
                 double lr, Rng& rng) {
  check_batch(images.size(), masks.size(), "moco_step");
  loss_cfg.validate();
  const std::size_t n = images.size();
  std::vector<GrayImage> queries(n), keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto pair = make_positive_pair(images[i], masks[i], augment, rng);
    queries[i] = std::move(pair.first);
    keys[i] = std::move(pair.second);
  }
  Tensor<T> k;
  {
    NoGradGuard no_grad;
    k = moco.key_model().embed(image_batch<T>(keys));
  }
  const Tensor<T> q = model.embed(image_batch<T>(queries));
  Tensor<T> loss = moco_loss(q, k, moco.queue_matrix(), loss_cfg.temperature);
  const double value = finite_or_throw(loss, "moco_step");
  const auto params = model.params();
  zero_grad(params);
  backward(loss);
  adam_update(params, optim, lr);
  moco.enqueue(k);
  moco.momentum_update(model);
  return value;
}

#define CXR_INSTANTIATE_CONTRASTIVE(T)                                                                          \
  template struct ContrastiveBatch<T>;                                                                          \
  template Tensor<T> nt_xent_loss(const ContrastiveBatch<T>&, const LossConfig&);                               \
  template void adam_update(const ParamList<T>&, OptimState&, double);                                          \
  template class ContrastiveModel<T>;                                                                           \
  template class MocoState<T>;                                                                                  \
  template Tensor<T> moco_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);                   \
  template Tensor<T> image_batch(std::span<const GrayImage>);                                                   \
  template double simclr_step(std::span<const GrayImage>, std::span<const LungMask>, ContrastiveModel<T>&,      \
                              const AugmentConfig&, const LossConfig&, OptimState&, double, Rng&);              \
  template double moco_step(std::span<const GrayImage>, std::span<const LungMask>, ContrastiveModel<T>&,        \
                            MocoState<T>&, const AugmentConfig&, const LossConfig&, OptimState&, double, Rng&);

CXR_INSTANTIATE_CONTRASTIVE(float)
CXR_INSTANTIATE_CONTRASTIVE(double)

}  // namespace cxr
