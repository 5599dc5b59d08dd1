#include "cxr/models.hpp"

#include <algorithm>
#include <cmath>

namespace cxr {

using namespace ops;

std::size_t EncoderConfig::grid_side() const {
  std::size_t side = (image_size + stem_stride - 1) / stem_stride;
  for (auto s : block_strides) side = (side + s - 1) / s;
  return side;
}

// ---------------------------------------------------------------------------
// Encoder

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& config, Rng& rng) : config_(config) {
  if (config.block_channels.empty() || config.block_channels.size() != config.block_strides.size()) {
    throw ConfigError("encoder: block channel and stride lists must be non-empty and equal length");
  }
  auto conv_weight = [&](std::size_t out, std::size_t in, std::size_t k) {
    return he_uniform<T>({out, in, k, k}, in * k * k, rng);
  };
  stem_ = conv_weight(config.stem_channels, 1, 3);
  stem_gamma_ = constant_param<T>({config.stem_channels}, T(1));
  stem_beta_ = constant_param<T>({config.stem_channels}, T(0));
  std::size_t in = config.stem_channels;
  for (std::size_t i = 0; i < config.block_channels.size(); ++i) {
    const std::size_t out = config.block_channels[i];
    Block b;
    b.stride = config.block_strides[i];
    b.conv1 = conv_weight(out, in, 3);
    b.gamma1 = constant_param<T>({out}, T(1));
    b.beta1 = constant_param<T>({out}, T(0));
    b.conv2 = conv_weight(out, out, 3);
    // Zero-initialized final norm: every block starts as its shortcut.
    b.gamma2 = constant_param<T>({out}, T(0));
    b.beta2 = constant_param<T>({out}, T(0));
    if (b.stride != 1 || in != out) b.shortcut = conv_weight(out, in, 1);
    blocks_.push_back(std::move(b));
    in = out;
  }
}

template <typename T>
Tensor<T> Encoder<T>::norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) const {
  const std::size_t groups = std::max<std::size_t>(1, x.dim(1) / config_.channels_per_group);
  return group_norm(x, gamma, beta, groups);
}

template <typename T>
FeatureMap<T> Encoder<T>::forward(const Tensor<T>& images) const {
  const std::size_t S = config_.image_size;
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != S || images.dim(3) != S) {
    throw ShapeError("encoder", images.shape(), Shape{0, 1, S, S}, "expected (batch, 1, size, size)");
  }
  Tensor<T> x = relu(norm(conv2d(images, stem_, config_.stem_stride, Padding::same), stem_gamma_, stem_beta_));
  for (const auto& b : blocks_) {
    Tensor<T> h = relu(norm(conv2d(x, b.conv1, b.stride, Padding::same), b.gamma1, b.beta1));
    h = norm(conv2d(h, b.conv2, 1, Padding::same), b.gamma2, b.beta2);
    Tensor<T> skip = b.shortcut.defined() ? conv2d(x, b.shortcut, b.stride, Padding::valid) : x;
    x = relu(add(h, skip));
  }
  FeatureMap<T> out;
  out.batch = x.dim(0);
  const std::size_t C = x.dim(1);
  out.positions = x.dim(2) * x.dim(3);
  out.pooled = mean_pool(x);
  out.grid = reshape(permute(reshape(x, {out.batch, C, out.positions}), {0, 2, 1}), {out.batch * out.positions, C});
  return out;
}

template <typename T>
void Encoder<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".stem.weight", &stem_});
  out.push_back({prefix + ".stem.gamma", &stem_gamma_});
  out.push_back({prefix + ".stem.beta", &stem_beta_});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    const std::string p = prefix + ".block" + std::to_string(i + 1);
    out.push_back({p + ".conv1.weight", &b.conv1});
    out.push_back({p + ".norm1.gamma", &b.gamma1});
    out.push_back({p + ".norm1.beta", &b.beta1});
    out.push_back({p + ".conv2.weight", &b.conv2});
    out.push_back({p + ".norm2.gamma", &b.gamma2});
    out.push_back({p + ".norm2.beta", &b.beta2});
    if (b.shortcut.defined()) out.push_back({p + ".shortcut.weight", &b.shortcut});
  }
}

// ---------------------------------------------------------------------------
// Projection head

template <typename T>
ProjectionHead<T>::ProjectionHead(std::size_t input_dim, std::size_t output_dim, Rng& rng)
    : fc1_(input_dim, input_dim, rng), fc2_(input_dim, output_dim, rng) {
  if (output_dim >= input_dim) throw ConfigError("projection head must reduce dimension (k < d)");
}

template <typename T>
Tensor<T> ProjectionHead<T>::forward(const Tensor<T>& r) const {
  if (r.rank() != 2 || r.dim(1) != input_dim()) {
    throw ShapeError("projection", r.shape(), fc1_.weight.shape(), "representation width differs from d");
  }
  return fc2_(relu(fc1_(r)));
}

template <typename T>
void ProjectionHead<T>::collect(const std::string& prefix, ParamList<T>& out) {
  fc1_.collect(prefix + ".fc1", out);
  fc2_.collect(prefix + ".fc2", out);
}

// ---------------------------------------------------------------------------
// Decoders

std::string to_string(DecoderKind kind) {
  switch (kind) {
    case DecoderKind::transformer: return "transformer";
    case DecoderKind::lstm: return "lstm";
    case DecoderKind::gru: return "gru";
  }
  return "unknown";
}

DecoderKind parse_decoder_kind(const std::string& name) {
  if (name == "transformer") return DecoderKind::transformer;
  if (name == "lstm") return DecoderKind::lstm;
  if (name == "gru") return DecoderKind::gru;
  throw ConfigError("unknown decoder '" + name + "' (expected transformer, lstm or gru)");
}

template <typename T>
void Decoder<T>::check_tokens(const FeatureMap<T>& features, std::span<const int> tokens, std::size_t length) const {
  if (length == 0 || length > config_.max_len || tokens.size() != features.batch * length) {
    throw ShapeError("decoder", Shape{tokens.size()}, Shape{features.batch, length},
                     "token matrix must be batch x length with length <= max_len");
  }
  for (int id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw IndexError("decoder: token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(config_.vocab_size));
    }
  }
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t batch,
                               std::size_t q_len, std::size_t kv_len, std::size_t heads, bool causal) {
  const std::size_t D = q.dim(1);
  if (D % heads != 0) throw ShapeError("attention", q.shape(), Shape{heads}, "width not divisible by heads");
  const std::size_t dh = D / heads;
  auto split = [&](const Tensor<T>& t, std::size_t len) {
    return reshape(permute(reshape(t, {batch, len, heads, dh}), {0, 2, 1, 3}), {batch * heads, len, dh});
  };
  Tensor<T> scores = scale(bmm(split(q, q_len), split(k, kv_len), true), static_cast<T>(1.0 / std::sqrt(double(dh))));
  if (causal) scores = causal_mask(scores);
  Tensor<T> out = bmm(softmax(scores), split(v, kv_len));
  return reshape(permute(reshape(out, {batch, heads, q_len, dh}), {0, 2, 1, 3}), {batch * q_len, D});
}

namespace {

std::vector<int> tiled_positions(std::size_t batch, std::size_t length) {
  std::vector<int> ids(batch * length);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < length; ++t) ids[b * length + t] = static_cast<int>(t);
  return ids;
}

// Pre-norm transformer decoder with causal self-attention and cross-attention
// over the spatial feature grid.
template <typename T>
class TransformerDecoder final : public Decoder<T> {
 public:
  TransformerDecoder(const DecoderConfig& c, Rng& rng) : Decoder<T>(c) {
    const std::size_t D = c.embed_dim;
    if (D % c.heads != 0) throw ConfigError("transformer embed_dim must be divisible by heads");
    token_ = fan_in_uniform<T>({c.vocab_size, D}, D, rng);
    position_ = fan_in_uniform<T>({c.max_len, D}, D, rng);
    memory_position_ = fan_in_uniform<T>({c.grid_positions, D}, D, rng);
    memory_in_ = Linear<T>(c.feature_dim, D, rng);
    for (std::size_t i = 0; i < c.layers; ++i) {
      Layer l;
      l.ln_self = LayerNorm<T>(D);
      l.qkv = Linear<T>(D, 3 * D, rng);
      l.self_out = Linear<T>(D, D, rng);
      l.ln_cross = LayerNorm<T>(D);
      l.query = Linear<T>(D, D, rng);
      l.key_value = Linear<T>(D, 2 * D, rng);
      l.cross_out = Linear<T>(D, D, rng);
      l.ln_ffn = LayerNorm<T>(D);
      l.ffn_in = Linear<T>(D, c.ffn_dim, rng);
      l.ffn_out = Linear<T>(c.ffn_dim, D, rng);
      layers_.push_back(std::move(l));
    }
    ln_final_ = LayerNorm<T>(D);
    out_ = Linear<T>(D, c.vocab_size, rng);
  }

  Tensor<T> logits(const FeatureMap<T>& f, std::span<const int> tokens, std::size_t length) const override {
    this->check_tokens(f, tokens, length);
    const auto& c = this->config_;
    if (f.positions != c.grid_positions || f.grid.dim(1) != c.feature_dim) {
      throw ShapeError("transformer decoder", f.grid.shape(), Shape{f.batch * c.grid_positions, c.feature_dim});
    }
    const std::size_t B = f.batch, D = c.embed_dim;
    Tensor<T> x = add(embedding(token_, tokens), embedding(position_, tiled_positions(B, length)));
    Tensor<T> memory = add(memory_in_(f.grid), embedding(memory_position_, tiled_positions(B, f.positions)));
    for (const auto& l : layers_) {
      Tensor<T> qkv = l.qkv(l.ln_self(x));
      Tensor<T> a = multi_head_attention(slice(qkv, 1, 0, D), slice(qkv, 1, D, D), slice(qkv, 1, 2 * D, D), B, length,
                                         length, c.heads, true);
      x = add(x, l.self_out(a));
      Tensor<T> kv = l.key_value(memory);
      a = multi_head_attention(l.query(l.ln_cross(x)), slice(kv, 1, 0, D), slice(kv, 1, D, D), B, length,
                               f.positions, c.heads, false);
      x = add(x, l.cross_out(a));
      x = add(x, l.ffn_out(relu(l.ffn_in(l.ln_ffn(x)))));
    }
    return out_(ln_final_(x));
  }

  void collect(const std::string& prefix, ParamList<T>& out) override {
    out.push_back({prefix + ".token_embedding", &token_});
    out.push_back({prefix + ".position_embedding", &position_});
    out.push_back({prefix + ".memory_position", &memory_position_});
    memory_in_.collect(prefix + ".memory_in", out);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto& l = layers_[i];
      const std::string p = prefix + ".layer" + std::to_string(i);
      l.ln_self.collect(p + ".ln_self", out);
      l.qkv.collect(p + ".qkv", out);
      l.self_out.collect(p + ".self_out", out);
      l.ln_cross.collect(p + ".ln_cross", out);
      l.query.collect(p + ".query", out);
      l.key_value.collect(p + ".key_value", out);
      l.cross_out.collect(p + ".cross_out", out);
      l.ln_ffn.collect(p + ".ln_ffn", out);
      l.ffn_in.collect(p + ".ffn_in", out);
      l.ffn_out.collect(p + ".ffn_out", out);
    }
    ln_final_.collect(prefix + ".ln_final", out);
    out_.collect(prefix + ".out", out);
  }

 private:
  struct Layer {
    LayerNorm<T> ln_self;
    Linear<T> qkv, self_out;
    LayerNorm<T> ln_cross;
    Linear<T> query, key_value, cross_out;
    LayerNorm<T> ln_ffn;
    Linear<T> ffn_in, ffn_out;
  };

  Tensor<T> token_, position_, memory_position_;
  Linear<T> memory_in_;
  std::vector<Layer> layers_;
  LayerNorm<T> ln_final_;
  Linear<T> out_;
};

// Shared skeleton of the LSTM and GRU decoders: the pooled representation r
// seeds the hidden state, tokens are fed one step at a time.
template <typename T>
class RecurrentDecoder : public Decoder<T> {
 public:
  RecurrentDecoder(const DecoderConfig& c, std::size_t gates, Rng& rng) : Decoder<T>(c), gates_(gates) {
    const std::size_t H = c.hidden_dim;
    token_ = fan_in_uniform<T>({c.vocab_size, c.embed_dim}, c.embed_dim, rng);
    init_ = Linear<T>(c.feature_dim, H, rng);
    input_ = Linear<T>(c.embed_dim, gates * H, rng);
    recurrent_ = Linear<T>(H, gates * H, rng);
    out_ = Linear<T>(H, c.vocab_size, rng);
  }

  Tensor<T> logits(const FeatureMap<T>& f, std::span<const int> tokens, std::size_t length) const override {
    this->check_tokens(f, tokens, length);
    const auto& c = this->config_;
    if (f.pooled.dim(1) != c.feature_dim) {
      throw ShapeError("recurrent decoder", f.pooled.shape(), Shape{f.batch, c.feature_dim});
    }
    const std::size_t B = f.batch, H = c.hidden_dim, G = gates_ * H;
    Tensor<T> xs = reshape(input_(embedding(token_, tokens)), {B, length, G});
    Tensor<T> h = tanh(init_(f.pooled));
    State state{h, Tensor<T>::zeros({B, H})};
    std::vector<Tensor<T>> outputs;
    outputs.reserve(length);
    for (std::size_t t = 0; t < length; ++t) {
      Tensor<T> xt = reshape(slice(xs, 1, t, 1), {B, G});
      state = step(xt, state);
      outputs.push_back(state.h);
    }
    Tensor<T> hs = reshape(concat(outputs, 1), {B * length, H});
    return out_(hs);
  }

  void collect(const std::string& prefix, ParamList<T>& out) override {
    out.push_back({prefix + ".token_embedding", &token_});
    init_.collect(prefix + ".init", out);
    input_.collect(prefix + ".input", out);
    recurrent_.collect(prefix + ".recurrent", out);
    out_.collect(prefix + ".out", out);
  }

 protected:
  struct State {
    Tensor<T> h;
    Tensor<T> c;  // cell state, unused by GRU
  };
  virtual State step(const Tensor<T>& xt, const State& s) const = 0;

  Tensor<T> gate(const Tensor<T>& pre, std::size_t index) const {
    return slice(pre, 1, index * this->config_.hidden_dim, this->config_.hidden_dim);
  }

  std::size_t gates_;
  Tensor<T> token_;
  Linear<T> init_, input_, recurrent_, out_;
};

template <typename T>
class LstmDecoder final : public RecurrentDecoder<T> {
 public:
  LstmDecoder(const DecoderConfig& c, Rng& rng) : RecurrentDecoder<T>(c, 4, rng) {}

 protected:
  using typename RecurrentDecoder<T>::State;
  State step(const Tensor<T>& xt, const State& s) const override {
    Tensor<T> pre = add(xt, this->recurrent_(s.h));
    Tensor<T> i = sigmoid(this->gate(pre, 0));
    Tensor<T> f = sigmoid(this->gate(pre, 1));
    Tensor<T> g = tanh(this->gate(pre, 2));
    Tensor<T> o = sigmoid(this->gate(pre, 3));
    Tensor<T> c = add(mul(f, s.c), mul(i, g));
    return {mul(o, tanh(c)), c};
  }
};

template <typename T>
class GruDecoder final : public RecurrentDecoder<T> {
 public:
  GruDecoder(const DecoderConfig& c, Rng& rng) : RecurrentDecoder<T>(c, 3, rng) {}

 protected:
  using typename RecurrentDecoder<T>::State;
  State step(const Tensor<T>& xt, const State& s) const override {
    Tensor<T> hh = this->recurrent_(s.h);
    Tensor<T> r = sigmoid(add(this->gate(xt, 0), this->gate(hh, 0)));
    Tensor<T> z = sigmoid(add(this->gate(xt, 1), this->gate(hh, 1)));
    Tensor<T> n = tanh(add(this->gate(xt, 2), mul(r, this->gate(hh, 2))));
    // h' = (1 - z) * n + z * h
    return {add(n, mul(z, sub(s.h, n))), s.c};
  }
};

}  // namespace

template <typename T>
std::unique_ptr<Decoder<T>> make_decoder(const DecoderConfig& config, Rng& rng) {
  if (config.vocab_size == 0) throw ConfigError("decoder vocab_size must be positive");
  if (config.max_len == 0) throw ConfigError("decoder max_len must be positive");
  switch (config.kind) {
    case DecoderKind::transformer: return std::make_unique<TransformerDecoder<T>>(config, rng);
    case DecoderKind::lstm: return std::make_unique<LstmDecoder<T>>(config, rng);
    case DecoderKind::gru: return std::make_unique<GruDecoder<T>>(config, rng);
  }
  throw ConfigError("unknown decoder kind");
}

template <typename T>
std::vector<std::vector<int>> generate_greedy(const Decoder<T>& decoder, const FeatureMap<T>& features, int bos,
                                              int eos, std::size_t max_new_tokens) {
  NoGradGuard no_grad;
  const std::size_t B = features.batch;
  const std::size_t steps = std::min(max_new_tokens, decoder.config().max_len);
  const std::size_t V = decoder.config().vocab_size;
  std::vector<std::vector<int>> prefix(B, std::vector<int>{bos});
  std::vector<std::vector<int>> result(B);
  std::vector<bool> done(B, false);
  for (std::size_t n = 1; n <= steps; ++n) {
    std::vector<int> tokens;
    tokens.reserve(B * n);
    for (const auto& p : prefix) tokens.insert(tokens.end(), p.begin(), p.end());
    Tensor<T> logits = decoder.logits(features, tokens, n);
    auto values = logits.data();
    bool all_done = true;
    for (std::size_t b = 0; b < B; ++b) {
      const T* row = values.data() + (b * n + n - 1) * V;
      const int next = static_cast<int>(std::max_element(row, row + V) - row);
      if (!done[b]) {
        result[b].push_back(next);
        if (next == eos) done[b] = true;
      }
      prefix[b].push_back(done[b] ? eos : next);
      all_done = all_done && done[b];
    }
    if (all_done) break;
  }
  return result;
}

template class Encoder<float>;
template class Encoder<double>;
template class ProjectionHead<float>;
template class ProjectionHead<double>;
template class Decoder<float>;
template class Decoder<double>;
template std::unique_ptr<Decoder<float>> make_decoder<float>(const DecoderConfig&, Rng&);
template std::unique_ptr<Decoder<double>> make_decoder<double>(const DecoderConfig&, Rng&);
template std::vector<std::vector<int>> generate_greedy(const Decoder<float>&, const FeatureMap<float>&, int, int,
                                                       std::size_t);
template std::vector<std::vector<int>> generate_greedy(const Decoder<double>&, const FeatureMap<double>&, int, int,
                                                       std::size_t);
template Tensor<float> multi_head_attention(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                            std::size_t, std::size_t, std::size_t, std::size_t, bool);
template Tensor<double> multi_head_attention(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                             std::size_t, std::size_t, std::size_t, std::size_t, bool);

}  // namespace cxr
