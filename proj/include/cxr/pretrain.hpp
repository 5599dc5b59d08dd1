#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cxr/checkpoint.hpp"
#include "cxr/contrastive.hpp"
#include "cxr/synth.hpp"

namespace cxr {

enum class PretrainMethod { scratch, ae, mlc, simclr, simclr_lungseg, moco };

std::string to_string(PretrainMethod method);
PretrainMethod parse_pretrain_method(const std::string& name);

struct PretrainConfig {
  PretrainMethod method = PretrainMethod::simclr;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  double weight_decay = 1e-6;
  double temperature = 0.5;
  bool literal_eq1 = false;
  std::size_t projection_dim = 32;
  double moco_momentum = 0.99;
  std::size_t moco_queue = 1024;
  bool moco_lung_mask = false;
  // mask_prob here is the lung-mask rate used by methods that mask.
  AugmentConfig augment;
  std::uint64_t seed = 0;

  void validate() const;
};

// The augmentation actually used: simclr and (by default) moco never mask.
AugmentConfig effective_augment(const PretrainConfig& cfg);

struct LossRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct PretrainResult {
  std::vector<ParamRecord> encoder;  // "encoder.*" parameters
  std::vector<LossRecord> log;
};

// Encoder initialization uses the same stream for every method, so all
// methods start from the scratch encoder of their seed.
Encoder<float> initial_encoder(const EncoderConfig& config, std::uint64_t seed);

// Trains on the train split only. Per-epoch records go to `log` as
// epoch<TAB>step<TAB>lr<TAB>loss.
PretrainResult run_pretraining(const PretrainConfig& cfg, const EncoderConfig& encoder, const Dataset& data,
                               std::ostream* log = nullptr);

// Reconstruction head for the AE baseline: transposed convolutions from the
// feature grid back to image resolution.
template <typename T>
class ReconstructionHead {
 public:
  ReconstructionHead(const EncoderConfig& encoder, Rng& rng);
  // grid features -> (B, 1, S, S) in (0, 1)
  Tensor<T> forward(const FeatureMap<T>& features) const;
  void collect(const std::string& prefix, ParamList<T>& out);

 private:
  std::vector<Tensor<T>> layers_;
  std::size_t grid_side_ = 0;
};

}  // namespace cxr
