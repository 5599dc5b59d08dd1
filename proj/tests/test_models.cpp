#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "cxr/checkpoint.hpp"
#include "cxr/error.hpp"
#include "cxr/models.hpp"
#include "test_util.hpp"

using namespace cxr;
using namespace cxr::test;
namespace o = cxr::ops;

namespace {

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.image_size = 16;
  c.stem_channels = 4;
  c.block_channels = {4, 8, 8, 8};
  c.block_strides = {2, 1, 2, 1};
  return c;
}

DecoderConfig small_decoder(DecoderKind kind, std::size_t vocab = 9) {
  DecoderConfig c;
  c.kind = kind;
  c.vocab_size = vocab;
  c.embed_dim = 8;
  c.hidden_dim = 6;
  c.heads = 2;
  c.layers = 1;
  c.ffn_dim = 12;
  c.max_len = 10;
  c.feature_dim = 5;
  c.grid_positions = 4;
  return c;
}

FeatureMap<double> random_features(std::size_t batch, const DecoderConfig& c, Rng& rng) {
  FeatureMap<double> f;
  f.batch = batch;
  f.positions = c.grid_positions;
  f.grid = random_tensor({batch * c.grid_positions, c.feature_dim}, rng);
  f.pooled = random_tensor({batch, c.feature_dim}, rng);
  return f;
}

std::vector<int> random_tokens(std::size_t n, std::size_t vocab, Rng& rng) {
  std::vector<int> t(n);
  for (auto& v : t) v = static_cast<int>(uniform_index(rng, vocab));
  return t;
}

const DecoderKind kAllKinds[] = {DecoderKind::transformer, DecoderKind::lstm, DecoderKind::gru};

}  // namespace

TEST_CASE("default encoder size and parameter count") {
  const EncoderConfig c;
  CHECK(c.grid_side() == 4);
  CHECK(c.output_dim() == 64);
  // Per conv: out * in * 9 weights; per norm: gamma and beta; 1x1 shortcut
  // when the block changes stride or width.
  std::size_t expected = 16 * 9 + 2 * 16;
  std::size_t in = 16;
  const std::size_t widths[] = {16, 32, 64, 64}, strides[] = {2, 2, 2, 1};
  for (int b = 0; b < 4; ++b) {
    const std::size_t out = widths[b];
    expected += out * in * 9 + 2 * out + out * out * 9 + 2 * out;
    if (strides[b] != 1 || in != out) expected += out * in;
    in = out;
  }
  Rng rng(1);
  Encoder<float> enc(c, rng);
  ParamList<float> params;
  enc.collect("encoder", params);
  CHECK(parameter_count(params) == expected);
  CHECK(expected == 151152);
  CHECK(expected < 500000);
}

TEST_CASE("encoder forward") {
  Rng rng(2);
  Encoder<double> enc(small_encoder(), rng);
  const auto zero = enc.forward(TD::zeros({1, 1, 16, 16}));
  for (double v : zero.pooled.data()) CHECK(std::isfinite(v));

  const TD one = random_tensor({1, 1, 16, 16}, rng);
  const TD two = o::concat(std::vector<TD>{one, one}, 0);
  const auto f = enc.forward(two);
  CHECK(f.batch == 2);
  CHECK(f.positions == 4);
  CHECK(f.grid.shape() == Shape{8, 8});
  CHECK(f.pooled.shape() == Shape{2, 8});
  for (std::size_t d = 0; d < 8; ++d) {
    CHECK(f.pooled.at(d) == f.pooled.at(8 + d));
    double mean = 0;
    for (std::size_t p = 0; p < 4; ++p) mean += f.grid.at(p * 8 + d);
    CHECK(f.pooled.at(d) == doctest::Approx(mean / 4).epsilon(1e-12));
  }
  CHECK_THROWS_AS(enc.forward(TD::zeros({1, 1, 8, 8})), ShapeError);
  CHECK_THROWS_AS(enc.forward(TD::zeros({1, 2, 16, 16})), ShapeError);
}

TEST_CASE("fixed seed gives bit-identical parameters") {
  Rng a(3), b(3);
  Encoder<float> x(EncoderConfig{}, a), y(EncoderConfig{}, b);
  ParamList<float> px, py;
  x.collect("e", px);
  y.collect("e", py);
  for (std::size_t i = 0; i < px.size(); ++i) {
    const auto u = px[i].tensor->data(), v = py[i].tensor->data();
    CHECK(std::memcmp(u.data(), v.data(), u.size_bytes()) == 0);
  }
}

TEST_CASE("encoder gradients") {
  Rng rng(4);
  Encoder<double> enc(small_encoder(), rng);
  ParamList<double> params;
  enc.collect("encoder", params);
  jitter_params(params, rng);
  const TD images = random_tensor({2, 1, 16, 16}, rng);
  CHECK(check_params(params, [&] { return weighted_sum(enc.forward(images).grid, 7); }) < 1e-3);
  CHECK(check_input([&](const std::vector<TD>& a) { return enc.forward(a[0]).pooled; }, {images}, 0, 8) < 1e-3);
}

TEST_CASE("projection head") {
  Rng rng(5);
  ProjectionHead<double> head(32, 16, rng);
  CHECK(head.forward(random_tensor({3, 32}, rng)).shape() == Shape{3, 16});
  CHECK_THROWS_AS(ProjectionHead<double>(8, 8, rng), ConfigError);
  CHECK_THROWS_AS(head.forward(TD::zeros({1, 31})), ShapeError);

  ParamList<double> params;
  head.collect("projection", params);
  CHECK(params.size() == 4);
  const TD r = random_tensor({4, 32}, rng);
  CHECK(check_params(params, [&] { return weighted_sum(head.forward(r), 3); }) < 1e-4);
  for (const auto& p : params)
    for (auto& v : p.tensor->mutable_data()) v = 0.0;
  const TD zeroed = head.forward(r);
  for (double v : zeroed.data()) CHECK(v == 0.0);
}

TEST_CASE("decoders are causal") {
  for (auto kind : kAllKinds) {
    INFO(to_string(kind));
    Rng rng(6);
    const auto cfg = small_decoder(kind);
    auto dec = make_decoder<double>(cfg, rng);
    const auto f = random_features(2, cfg, rng);
    const std::size_t L = 7;
    const auto tokens = random_tokens(2 * L, cfg.vocab_size, rng);
    const TD base = dec->logits(f, tokens, L);
    CHECK(base.shape() == Shape{2 * L, cfg.vocab_size});
    for (std::size_t t = 0; t < L; ++t) {
      auto changed = tokens;
      changed[t] = (changed[t] + 1) % static_cast<int>(cfg.vocab_size);
      changed[L + t] = (changed[L + t] + 2) % static_cast<int>(cfg.vocab_size);
      const TD other = dec->logits(f, changed, L);
      bool later_changed = false;
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t row = 0; row < L; ++row)
          for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
            const std::size_t at = (b * L + row) * cfg.vocab_size + v;
            if (row < t) CHECK(base.at(at) == other.at(at));
            if (row == t && base.at(at) != other.at(at)) later_changed = true;
          }
      CHECK(later_changed);
    }
  }
}

TEST_CASE("decoder input validation and single-token vocabularies") {
  for (auto kind : kAllKinds) {
    Rng rng(7);
    const auto cfg = small_decoder(kind);
    auto dec = make_decoder<double>(cfg, rng);
    const auto f = random_features(1, cfg, rng);
    CHECK_THROWS_AS(dec->logits(f, std::vector<int>{0, 9}, 2), IndexError);
    CHECK_THROWS_AS(dec->logits(f, std::vector<int>(11, 0), 11), ShapeError);

    const auto one = small_decoder(kind, 1);
    auto tiny = make_decoder<double>(one, rng);
    const TD probs = o::softmax(tiny->logits(random_features(1, one, rng), std::vector<int>{0, 0, 0}, 3));
    for (double p : probs.data()) CHECK(p == 1.0);
  }
  CHECK(parse_decoder_kind("gru") == DecoderKind::gru);
  CHECK_THROWS_AS(parse_decoder_kind("rnn"), ConfigError);
}

TEST_CASE("decoder gradients") {
  for (auto kind : kAllKinds) {
    INFO(to_string(kind));
    Rng rng(8);
    const auto cfg = small_decoder(kind);
    auto dec = make_decoder<double>(cfg, rng);
    ParamList<double> params;
    dec->collect("decoder", params);
    jitter_params(params, rng, 0.1);
    const auto f = random_features(2, cfg, rng);
    const std::size_t L = 5;
    const auto tokens = random_tokens(2 * L, cfg.vocab_size, rng);
    const auto targets = random_tokens(2 * L, cfg.vocab_size, rng);
    CHECK(check_params(params, [&] { return o::cross_entropy(dec->logits(f, tokens, L), targets); }) < 1e-3);
    // Through the image features as well.
    CHECK(check_input(
              [&](const std::vector<TD>& a) {
                FeatureMap<double> g = f;
                g.grid = a[0];
                g.pooled = a[1];
                return o::cross_entropy(dec->logits(g, tokens, L), targets);
              },
              {f.grid, f.pooled}, kind == DecoderKind::transformer ? 0 : 1, 3) < 1e-3);
  }
}

TEST_CASE("attention matches a direct evaluation") {
  Rng rng(9);
  const std::size_t B = 2, Lq = 3, Lk = 4, H = 2, D = 4, dh = 2;
  const TD q = random_tensor({B * Lq, D}, rng), k = random_tensor({B * Lk, D}, rng), v = random_tensor({B * Lk, D}, rng);
  const TD out = multi_head_attention(q, k, v, B, Lq, Lk, H, false);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t i = 0; i < Lq; ++i) {
        std::vector<double> w(Lk);
        double z = 0;
        for (std::size_t j = 0; j < Lk; ++j) {
          double s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += q.at((b * Lq + i) * D + h * dh + c) * k.at((b * Lk + j) * D + h * dh + c);
          w[j] = std::exp(s / std::sqrt(2.0));
          z += w[j];
        }
        for (std::size_t c = 0; c < dh; ++c) {
          double acc = 0;
          for (std::size_t j = 0; j < Lk; ++j) acc += w[j] / z * v.at((b * Lk + j) * D + h * dh + c);
          CHECK(out.at((b * Lq + i) * D + h * dh + c) == doctest::Approx(acc).epsilon(1e-12));
        }
      }
}

TEST_CASE("greedy generation") {
  for (auto kind : kAllKinds) {
    Rng rng(10);
    const auto cfg = small_decoder(kind);
    auto dec = make_decoder<double>(cfg, rng);
    const auto f = random_features(3, cfg, rng);
    const auto a = generate_greedy(*dec, f, 1, 2, 8);
    CHECK(a == generate_greedy(*dec, f, 1, 2, 8));
    CHECK(a.size() == 3);
    for (const auto& seq : a) {
      CHECK(seq.size() <= 8);
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) CHECK(seq[i] != 2);
    }
    for (const auto& seq : generate_greedy(*dec, f, 1, 2, 1)) CHECK(seq.size() <= 1);
    // Never exceeds the positional capacity.
    for (const auto& seq : generate_greedy(*dec, f, 1, 2, 100)) CHECK(seq.size() <= cfg.max_len);
  }
}

TEST_CASE("checkpoint round trip") {
  Rng rng(11);
  Encoder<float> enc(EncoderConfig{}, rng);
  ParamList<float> params;
  enc.collect("encoder", params);
  Checkpoint ck{"a=1\nb=two\n", snapshot(params)};
  const std::string bytes = encode_checkpoint(ck);
  CHECK(bytes.substr(0, 4) == "CXRC");
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.config == ck.config);
  REQUIRE(back.params.size() == ck.params.size());
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    CHECK(back.params[i].name == ck.params[i].name);
    CHECK(back.params[i].shape == ck.params[i].shape);
    CHECK(std::memcmp(back.params[i].values.data(), ck.params[i].values.data(), ck.params[i].values.size() * 4) == 0);
  }
  CHECK(encode_checkpoint(back) == bytes);

  TempDir dir("ckpt");
  write_checkpoint(dir / "m.ckpt", ck);
  CHECK(slurp(dir / "m.ckpt") == bytes);
  Rng other(12);
  Encoder<float> fresh(EncoderConfig{}, other);
  ParamList<float> fp;
  fresh.collect("encoder", fp);
  CHECK(load_params(read_checkpoint(dir / "m.ckpt"), fp, "encoder") == params.size());
  for (std::size_t i = 0; i < fp.size(); ++i) {
    const auto u = fp[i].tensor->data(), v = params[i].tensor->data();
    CHECK(std::memcmp(u.data(), v.data(), u.size_bytes()) == 0);
  }
  CHECK_THROWS_AS(read_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST_CASE("corrupt checkpoints are rejected with the offending record") {
  Rng rng(13);
  TD a = random_tensor({2, 3}, rng), b = random_tensor({4}, rng);
  ParamList<double> params{{"layer.a", &a}, {"layer.b", &b}};
  const Checkpoint ck{"k=v\n", snapshot(params)};
  const std::string bytes = encode_checkpoint(ck);

  auto record_of = [](const std::string& data) -> std::string {
    try {
      decode_checkpoint(data);
    } catch (const FormatError& e) {
      return e.record();
    }
    return "<accepted>";
  };
  CHECK(record_of("XXXX" + bytes.substr(4)) == "header");
  std::string version = bytes;
  version[4] = 9;
  CHECK(record_of(version) == "header");
  CHECK(record_of(bytes.substr(0, 8)) == "header");
  // Cut inside the second record's payload.
  CHECK(record_of(bytes.substr(0, bytes.size() - 3)) == "layer.b");
  // Non-finite value in the first record.
  std::string nan = bytes;
  const std::size_t first_payload = 4 + 2 + 4 + 4 + 4 + 7 + 4 + 8;
  const std::uint32_t bits = 0x7FC00000u;
  std::memcpy(&nan[first_payload], &bits, 4);
  CHECK(record_of(nan) == "layer.a");
  // Duplicate record.
  const Checkpoint dup{"", {ck.params[0], ck.params[0]}};
  CHECK(record_of(encode_checkpoint(dup)) == "layer.a");

  TD wrong = TD::zeros({3, 2});
  ParamList<double> mismatched{{"layer.a", &wrong}};
  try {
    load_params(ck, mismatched);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.record() == "layer.a");
  }
  TD extra = TD::zeros({1});
  ParamList<double> missing{{"layer.c", &extra}};
  CHECK_THROWS_AS(load_params(ck, missing), FormatError);
  CHECK(load_params(ck, missing, "other.") == 0);
}
