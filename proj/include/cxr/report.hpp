#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "cxr/checkpoint.hpp"
#include "cxr/contrastive.hpp"
#include "cxr/models.hpp"
#include "cxr/synth.hpp"

namespace cxr {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kReservedTokens = 4;

// Decoder-side tokens: lowercase words, with sentence periods kept as "."
std::vector<std::string> report_tokens(std::string_view text);
// Inverse of report_tokens up to whitespace: periods attach to the previous word.
std::string detokenize(const std::vector<std::string>& tokens);

class Vocab {
 public:
  // Sorted distinct tokens of the given reports, after the reserved ids.
  static Vocab build(const std::vector<std::string>& reports);
  // Non-reserved tokens in id order.
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // BOS, ids..., EOS
  std::vector<int> encode(std::string_view text) const;
  // Skips BOS and PAD and stops at the first EOS.
  std::string decode(const std::vector<int>& ids) const;

  // Non-reserved tokens, space separated.
  std::string serialize() const;
  static Vocab parse(const std::string& text);

 private:
  std::vector<std::string> tokens_;
};

template <typename T>
class ReportModel {
 public:
  ReportModel(const EncoderConfig& encoder, const DecoderConfig& decoder, Rng& rng);

  FeatureMap<T> features(const Tensor<T>& images) const { return encoder.forward(images); }
  ParamList<T> params();
  ParamList<T> decoder_params();

  Encoder<T> encoder;
  std::unique_ptr<Decoder<T>> decoder;
};

// Mean cross-entropy over non-PAD target positions with gold prefixes. Each
// sequence is BOS ... EOS; sequences are right-padded to the longest one.
template <typename T>
Tensor<T> teacher_forced_loss(const ReportModel<T>& model, const Tensor<T>& images,
                              const std::vector<std::vector<int>>& reports);

struct FinetuneConfig {
  DecoderKind decoder = DecoderKind::transformer;
  std::size_t epochs = 15;
  std::size_t batch_size = 16;
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  double weight_decay = 1e-6;
  bool freeze_encoder = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct FinetuneResult {
  std::vector<EpochStats> curve;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_val_loss = 0.0;
};

// Trains on the train split, evaluates validation loss after each epoch and
// leaves the model at the best-validation parameters. Epoch records are
// written to `log` as epoch<TAB>step<TAB>lr<TAB>train_loss<TAB>val_loss.
FinetuneResult finetune(ReportModel<float>& model, const Dataset& data, const Vocab& vocab, const FinetuneConfig& cfg,
                        std::ostream* log = nullptr);

template <typename T>
double split_loss(const ReportModel<T>& model, const Dataset& data, const std::vector<std::size_t>& indices,
                  const Vocab& vocab);

struct Generation {
  std::string id;
  std::string generated;
  std::string reference;
};

template <typename T>
std::vector<Generation> generate_reports(const ReportModel<T>& model, const Dataset& data,
                                         const std::vector<std::size_t>& indices, const Vocab& vocab);

// id<TAB>generated<TAB>reference lines.
std::string format_generations(const std::vector<Generation>& generations);

}  // namespace cxr
