#include "cxr/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "cxr/config.hpp"
#include "cxr/error.hpp"

namespace cxr {

std::string to_string(PretrainMethod method) {
  switch (method) {
    case PretrainMethod::scratch: return "scratch";
    case PretrainMethod::ae: return "ae";
    case PretrainMethod::mlc: return "mlc";
    case PretrainMethod::simclr: return "simclr";
    case PretrainMethod::simclr_lungseg: return "simclr_lungseg";
    case PretrainMethod::moco: return "moco";
  }
  return "?";
}

PretrainMethod parse_pretrain_method(const std::string& name) {
  for (auto m : {PretrainMethod::scratch, PretrainMethod::ae, PretrainMethod::mlc, PretrainMethod::simclr,
                 PretrainMethod::simclr_lungseg, PretrainMethod::moco}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown pretrain method '" + name + "' (expected scratch, ae, mlc, simclr, simclr_lungseg or moco)");
}

void PretrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("pretrain: batch_size must be at least 2");
  if (!(lr_max >= lr_min && lr_min >= 0.0)) throw ConfigError("pretrain: need lr_max >= lr_min >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("pretrain: weight_decay must be non-negative");
  LossConfig{temperature, literal_eq1}.validate();
  if (projection_dim == 0) throw ConfigError("pretrain: projection_dim must be positive");
  if (!(moco_momentum >= 0.0 && moco_momentum <= 1.0)) throw ConfigError("pretrain: moco_momentum must lie in [0, 1]");
  if (moco_queue == 0) throw ConfigError("pretrain: moco_queue must be positive");
  augment.validate();
}

AugmentConfig effective_augment(const PretrainConfig& cfg) {
  AugmentConfig a = cfg.augment;
  const bool masks = cfg.method == PretrainMethod::simclr_lungseg ||
                     (cfg.method == PretrainMethod::moco && cfg.moco_lung_mask);
  if (!masks) {
    a.mask_prob = 0.0;
    a.paired_mask = false;
  }
  return a;
}

Encoder<float> initial_encoder(const EncoderConfig& config, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xE1));
  return Encoder<float>(config, rng);
}

template <typename T>
ReconstructionHead<T>::ReconstructionHead(const EncoderConfig& encoder, Rng& rng) : grid_side_(encoder.grid_side()) {
  std::size_t side = grid_side_;
  std::size_t channels = encoder.output_dim();
  while (side < encoder.image_size) {
    const std::size_t next = side * 2 >= encoder.image_size ? 1 : std::max<std::size_t>(channels / 2, 4);
    layers_.push_back(he_uniform<T>({channels, next, 2, 2}, channels * 4, rng));
    channels = next;
    side *= 2;
  }
  if (side != encoder.image_size || layers_.empty()) {
    throw ConfigError("ae: image size must be the grid side times a power of two");
  }
}

template <typename T>
Tensor<T> ReconstructionHead<T>::forward(const FeatureMap<T>& f) const {
  const std::size_t d = f.grid.dim(1);
  Tensor<T> x = ops::reshape(ops::permute(ops::reshape(f.grid, {f.batch, f.positions, d}), {0, 2, 1}),
                             {f.batch, d, grid_side_, grid_side_});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = ops::conv_transpose2d(x, layers_[i], 2);
    x = i + 1 < layers_.size() ? ops::relu(x) : ops::sigmoid(x);
  }
  return x;
}

template <typename T>
void ReconstructionHead<T>::collect(const std::string& prefix, ParamList<T>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) out.push_back({prefix + ".up" + std::to_string(i + 1), &layers_[i]});
}

template class ReconstructionHead<float>;
template class ReconstructionHead<double>;

namespace {

double check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string(what) + ": loss is not finite");
  return v;
}

std::vector<float> tag_targets(const Record& r) {
  std::vector<float> t;
  for (const auto& tag : all_tags()) t.push_back(std::find(r.tags.begin(), r.tags.end(), tag) != r.tags.end() ? 1.f : 0.f);
  return t;
}

}  // namespace

PretrainResult run_pretraining(const PretrainConfig& cfg, const EncoderConfig& encoder_cfg, const Dataset& data,
                               std::ostream* log) {
  cfg.validate();
  PretrainResult result;
  const auto train = data.indices(Split::train);
  Rng init_rng(derive_seed(cfg.seed, 0xE1));
  ContrastiveModel<float> model(encoder_cfg, cfg.projection_dim, init_rng);
  auto encoder_params = [&] {
    ParamList<float> p;
    model.encoder.collect("encoder", p);
    return p;
  };
  if (cfg.method == PretrainMethod::scratch || cfg.epochs == 0) {
    result.encoder = snapshot(encoder_params());
    return result;
  }
  if (train.size() < 2) throw ConfigError("pretrain: training split needs at least two images");

  Rng head_rng(derive_seed(cfg.seed, 0xE2));
  ReconstructionHead<float> recon(encoder_cfg, head_rng);
  Linear<float> classifier(encoder_cfg.output_dim(), all_tags().size(), head_rng);
  std::unique_ptr<MocoState<float>> moco;
  if (cfg.method == PretrainMethod::moco) {
    moco = std::make_unique<MocoState<float>>(model, cfg.moco_queue, cfg.moco_momentum, head_rng);
  }

  ParamList<float> params = encoder_params();
  switch (cfg.method) {
    case PretrainMethod::ae: recon.collect("reconstruction", params); break;
    case PretrainMethod::mlc: classifier.collect("classifier", params); break;
    case PretrainMethod::simclr:
    case PretrainMethod::simclr_lungseg:
    case PretrainMethod::moco: model.head.collect("projection", params); break;
    case PretrainMethod::scratch: break;
  }

  const AugmentConfig augment = effective_augment(cfg);
  const LossConfig loss_cfg{cfg.temperature, cfg.literal_eq1};
  OptimState optim;
  optim.config.weight_decay = cfg.weight_decay;
  Rng order_rng(derive_seed(cfg.seed, 0xE3));
  Rng aug_rng(derive_seed(cfg.seed, 0xE4));

  std::vector<std::size_t> order = train;
  std::size_t batches_per_epoch = train.size() / cfg.batch_size + (train.size() % cfg.batch_size >= 2 ? 1 : 0);
  const std::size_t total_steps = batches_per_epoch * cfg.epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[uniform_index(order_rng, i + 1)]);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    double lr = cfg.lr_max;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      if (n < 2) break;
      std::vector<GrayImage> images;
      std::vector<LungMask> masks;
      for (std::size_t k = 0; k < n; ++k) {
        images.push_back(data.images[order[start + k]]);
        masks.push_back(data.masks[order[start + k]]);
      }
      lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min);
      double value = 0.0;
      switch (cfg.method) {
        case PretrainMethod::simclr:
        case PretrainMethod::simclr_lungseg:
          value = simclr_step<float>(images, masks, model, augment, loss_cfg, optim, lr, aug_rng);
          break;
        case PretrainMethod::moco:
          value = moco_step<float>(images, masks, model, *moco, augment, loss_cfg, optim, lr, aug_rng);
          break;
        case PretrainMethod::ae: {
          const Tensor<float> x = image_batch<float>(images);
          const Tensor<float> diff = ops::sub(recon.forward(model.encoder.forward(x)), x);
          Tensor<float> loss = ops::mean(ops::mul(diff, diff));
          value = check_finite(loss.item(), "ae");
          zero_grad(params);
          backward(loss);
          adam_update(params, optim, lr);
          break;
        }
        case PretrainMethod::mlc: {
          std::vector<float> targets;
          for (std::size_t k = 0; k < n; ++k) {
            const auto t = tag_targets(data.manifest.records[order[start + k]]);
            targets.insert(targets.end(), t.begin(), t.end());
          }
          Tensor<float> logits = classifier(model.encoder.forward(image_batch<float>(images)).pooled);
          Tensor<float> loss = ops::bce_with_logits(logits, std::span<const float>(targets));
          value = check_finite(loss.item(), "mlc");
          zero_grad(params);
          backward(loss);
          adam_update(params, optim, lr);
          break;
        }
        case PretrainMethod::scratch: break;
      }
      epoch_loss += value;
      ++batches;
      ++step;
    }
    LossRecord rec{epoch, step, lr, epoch_loss / static_cast<double>(std::max<std::size_t>(batches, 1))};
    result.log.push_back(rec);
    if (log) *log << rec.epoch << '\t' << rec.step << '\t' << format_double(rec.lr) << '\t' << format_double(rec.loss) << '\n';
  }
  result.encoder = snapshot(encoder_params());
  return result;
}

}  // namespace cxr
