#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cxr/layers.hpp"

namespace cxr {

// Residual conv backbone. Desk-scale default (64x64 input):
//   stem   conv3x3/2   1 -> 16   -> 32x32
//   block1 conv3x3/2  16 -> 16   -> 16x16
//   block2 conv3x3/2  16 -> 32   ->  8x8
//   block3 conv3x3/2  32 -> 64   ->  4x4
//   block4 conv3x3/1  64 -> 64   ->  4x4   (grid of 16 positions, d = 64)
// 151,152 parameters.
struct EncoderConfig {
  std::size_t image_size = 64;
  std::size_t stem_channels = 16;
  std::size_t stem_stride = 2;
  std::vector<std::size_t> block_channels{16, 32, 64, 64};
  std::vector<std::size_t> block_strides{2, 2, 2, 1};
  std::size_t channels_per_group = 4;

  std::size_t output_dim() const { return block_channels.back(); }
  std::size_t grid_side() const;
  std::size_t grid_positions() const { return grid_side() * grid_side(); }
};

// Visual representation V: one d-dim vector per grid position, plus the
// pooled vector r (mean over positions).
template <typename T>
struct FeatureMap {
  Tensor<T> grid;    // (batch * positions, d), sample-major
  Tensor<T> pooled;  // (batch, d)
  std::size_t batch = 0;
  std::size_t positions = 0;
};

template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& config, Rng& rng);

  // images (B, 1, S, S) with S = config.image_size
  FeatureMap<T> forward(const Tensor<T>& images) const;
  void collect(const std::string& prefix, ParamList<T>& out);
  const EncoderConfig& config() const { return config_; }

 private:
  struct Block {
    Tensor<T> conv1, gamma1, beta1;
    Tensor<T> conv2, gamma2, beta2;
    Tensor<T> shortcut;  // 1x1 projection, undefined when identity
    std::size_t stride = 1;
  };

  Tensor<T> norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) const;

  EncoderConfig config_;
  Tensor<T> stem_, stem_gamma_, stem_beta_;
  std::vector<Block> blocks_;
};

// g(.): two affine layers with a relu between, d -> d -> k.
template <typename T>
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(std::size_t input_dim, std::size_t output_dim, Rng& rng);

  Tensor<T> forward(const Tensor<T>& r) const;
  void collect(const std::string& prefix, ParamList<T>& out);
  std::size_t input_dim() const { return fc1_.weight.dim(0); }
  std::size_t output_dim() const { return fc2_.weight.dim(1); }

 private:
  Linear<T> fc1_;
  Linear<T> fc2_;
};

enum class DecoderKind { transformer, lstm, gru };

std::string to_string(DecoderKind kind);
DecoderKind parse_decoder_kind(const std::string& name);

struct DecoderConfig {
  DecoderKind kind = DecoderKind::transformer;
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 64;  // recurrent state size
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_dim = 128;
  std::size_t max_len = 48;  // positions, BOS included
  std::size_t feature_dim = 64;
  std::size_t grid_positions = 16;
};

// D(.): maps image features and a token prefix to next-token logits.
template <typename T>
class Decoder {
 public:
  explicit Decoder(DecoderConfig config) : config_(std::move(config)) {}
  virtual ~Decoder() = default;

  // tokens is a row-major (batch, length) id matrix. Returns logits of shape
  // (batch * length, vocab); row b * length + t predicts token t + 1.
  virtual Tensor<T> logits(const FeatureMap<T>& features, std::span<const int> tokens, std::size_t length) const = 0;
  virtual void collect(const std::string& prefix, ParamList<T>& out) = 0;

  const DecoderConfig& config() const { return config_; }

 protected:
  void check_tokens(const FeatureMap<T>& features, std::span<const int> tokens, std::size_t length) const;

  DecoderConfig config_;
};

template <typename T>
std::unique_ptr<Decoder<T>> make_decoder(const DecoderConfig& config, Rng& rng);

// Greedy argmax decoding for every sample in the batch. Each returned
// sequence excludes BOS and includes EOS when it was produced; at most
// max_new_tokens ids are generated.
template <typename T>
std::vector<std::vector<int>> generate_greedy(const Decoder<T>& decoder, const FeatureMap<T>& features, int bos,
                                              int eos, std::size_t max_new_tokens);

// Multi-head scaled dot-product attention over row-major (batch * len, dim)
// query/key/value matrices.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t batch,
                               std::size_t q_len, std::size_t kv_len, std::size_t heads, bool causal);

}  // namespace cxr
