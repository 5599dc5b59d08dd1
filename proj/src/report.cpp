#include "cxr/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <ostream>
#include <set>

#include "cxr/config.hpp"
#include "cxr/error.hpp"

namespace cxr {

std::vector<std::string> report_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      flush();
    } else if (ch == '.') {
      flush();
      out.emplace_back(".");
    } else {
      cur += static_cast<char>(std::tolower(u));
    }
  }
  flush();
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (t != "." && !out.empty()) out += ' ';
    out += t;
  }
  return out;
}

namespace {
const std::vector<std::string>& reserved_names() {
  static const std::vector<std::string> r{"<pad>", "<bos>", "<eos>", "<unk>"};
  return r;
}
}  // namespace

Vocab Vocab::build(const std::vector<std::string>& reports) {
  std::set<std::string> distinct;
  for (const auto& r : reports)
    for (auto& t : report_tokens(r)) distinct.insert(std::move(t));
  return from_tokens(std::vector<std::string>(distinct.begin(), distinct.end()));
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  v.tokens_ = reserved_names();
  std::set<std::string> seen(v.tokens_.begin(), v.tokens_.end());
  for (const auto& t : tokens) {
    if (t.empty() || !seen.insert(t).second) throw ConfigError("vocab: empty or duplicate token '" + t + "'");
    v.tokens_.push_back(t);
  }
  return v;
}

int Vocab::id(const std::string& token) const {
  auto begin = tokens_.begin() + kReservedTokens;
  auto it = std::lower_bound(begin, tokens_.end(), token);
  if (it != tokens_.end() && *it == token) return static_cast<int>(it - tokens_.begin());
  // Vocabularies restored from a checkpoint need not be sorted.
  auto lin = std::find(begin, tokens_.end(), token);
  return lin == tokens_.end() ? kUnk : static_cast<int>(lin - tokens_.begin());
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("vocab: id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids{kBos};
  for (const auto& t : report_tokens(text)) ids.push_back(id(t));
  ids.push_back(kEos);
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kBos || id == kPad) continue;
    words.push_back(token(id));
  }
  return detokenize(words);
}

std::string Vocab::serialize() const {
  std::string out;
  for (std::size_t i = kReservedTokens; i < tokens_.size(); ++i) out += (out.empty() ? "" : " ") + tokens_[i];
  return out;
}

Vocab Vocab::parse(const std::string& text) {
  std::vector<std::string> tokens;
  for (auto& t : split(text, ' '))
    if (!t.empty()) tokens.push_back(std::move(t));
  return from_tokens(tokens);
}

template <typename T>
ReportModel<T>::ReportModel(const EncoderConfig& encoder_config, const DecoderConfig& decoder_config, Rng& rng)
    : encoder(encoder_config, rng), decoder(make_decoder<T>(decoder_config, rng)) {}

template <typename T>
ParamList<T> ReportModel<T>::params() {
  ParamList<T> out;
  encoder.collect("encoder", out);
  decoder->collect("decoder", out);
  return out;
}

template <typename T>
ParamList<T> ReportModel<T>::decoder_params() {
  ParamList<T> out;
  decoder->collect("decoder", out);
  return out;
}

namespace {

struct TeacherBatch {
  std::vector<int> inputs;
  std::vector<int> targets;
  std::size_t length = 0;  // decoder input length
  std::size_t target_count = 0;
};

TeacherBatch make_teacher_batch(const std::vector<std::vector<int>>& reports) {
  TeacherBatch b;
  std::size_t longest = 0;
  for (const auto& r : reports) {
    if (r.size() < 2) throw DegenerateInputError("teacher_forced_loss", "report has no tokens after BOS");
    if (r.front() != kBos) throw DegenerateInputError("teacher_forced_loss", "report must start with BOS");
    longest = std::max(longest, r.size());
  }
  b.length = longest - 1;
  for (const auto& r : reports) {
    for (std::size_t t = 0; t < b.length; ++t) {
      b.inputs.push_back(t < r.size() ? r[t] : kPad);
      const int target = t + 1 < r.size() ? r[t + 1] : kPad;
      b.targets.push_back(target);
      if (target != kPad) ++b.target_count;
    }
  }
  return b;
}

template <typename T>
Tensor<T> decoder_loss(const Decoder<T>& decoder, const FeatureMap<T>& features, const TeacherBatch& batch) {
  if (features.batch * batch.length != batch.inputs.size()) {
    throw ShapeError("teacher_forced_loss", Shape{features.batch}, Shape{batch.inputs.size() / batch.length},
                     "one report per image");
  }
  Tensor<T> logits = decoder.logits(features, batch.inputs, batch.length);
  return ops::cross_entropy(logits, std::span<const int>(batch.targets), kPad);
}

template <typename T>
Tensor<T> images_of(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<GrayImage> imgs;
  imgs.reserve(idx.size());
  for (auto i : idx) imgs.push_back(data.images[i]);
  return image_batch<T>(imgs);
}

}  // namespace

template <typename T>
Tensor<T> teacher_forced_loss(const ReportModel<T>& model, const Tensor<T>& images,
                              const std::vector<std::vector<int>>& reports) {
  const TeacherBatch batch = make_teacher_batch(reports);
  return decoder_loss(*model.decoder, model.features(images), batch);
}

void FinetuneConfig::validate() const {
  if (batch_size == 0) throw ConfigError("finetune: batch_size must be positive");
  if (!(lr_max >= lr_min && lr_min >= 0.0)) throw ConfigError("finetune: need lr_max >= lr_min >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("finetune: weight_decay must be non-negative");
}

template <typename T>
double split_loss(const ReportModel<T>& model, const Dataset& data, const std::vector<std::size_t>& indices,
                  const Vocab& vocab) {
  NoGradGuard no_grad;
  constexpr std::size_t kChunk = 64;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const std::span<const std::size_t> idx(indices.data() + start, std::min(kChunk, indices.size() - start));
    std::vector<std::vector<int>> reports;
    for (auto i : idx) reports.push_back(vocab.encode(data.manifest.records[i].report));
    const TeacherBatch batch = make_teacher_batch(reports);
    const double loss = decoder_loss(*model.decoder, model.features(images_of<T>(data, idx)), batch).item();
    total += loss * static_cast<double>(batch.target_count);
    count += batch.target_count;
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

FinetuneResult finetune(ReportModel<float>& model, const Dataset& data, const Vocab& vocab, const FinetuneConfig& cfg,
                        std::ostream* log) {
  cfg.validate();
  FinetuneResult result;
  const auto train = data.indices(Split::train);
  const auto val = data.indices(Split::val);
  if (cfg.epochs == 0) return result;
  if (train.empty()) throw ConfigError("finetune: training split is empty");

  const std::size_t max_len = model.decoder->config().max_len;
  std::vector<std::vector<int>> encoded(data.manifest.records.size());
  for (auto i : train) {
    encoded[i] = vocab.encode(data.manifest.records[i].report);
    if (encoded[i].size() - 1 > max_len) {
      throw ConfigError("finetune: report " + data.manifest.records[i].id + " longer than decoder max_len");
    }
  }

  const auto all_params = model.params();
  const auto trained = cfg.freeze_encoder ? model.decoder_params() : all_params;
  OptimState optim;
  optim.config.weight_decay = cfg.weight_decay;
  Rng order_rng(derive_seed(cfg.seed, 0x0F1E));
  const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  std::vector<ParamRecord> best;
  std::size_t step = 0;
  std::vector<std::size_t> order = train;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[uniform_index(order_rng, i + 1)]);
    double epoch_loss = 0.0;
    double lr = cfg.lr_max;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      std::vector<std::vector<int>> reports;
      for (auto i : idx) reports.push_back(encoded[i]);
      const TeacherBatch batch = make_teacher_batch(reports);
      const Tensor<float> images = images_of<float>(data, idx);
      FeatureMap<float> features;
      if (cfg.freeze_encoder) {
        NoGradGuard no_grad;
        features = model.features(images);
      } else {
        features = model.features(images);
      }
      Tensor<float> loss = decoder_loss(*model.decoder, features, batch);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericalError("finetune: loss is not finite at epoch " + std::to_string(epoch));
      }
      lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min);
      zero_grad(all_params);
      backward(loss);
      adam_update(trained, optim, lr);
      epoch_loss += value;
      ++step;
    }
    EpochStats stats{epoch, step, lr, epoch_loss / static_cast<double>(steps_per_epoch), 0.0};
    stats.val_loss = val.empty() ? stats.train_loss : split_loss(model, data, val, vocab);
    if (!std::isfinite(stats.val_loss)) throw NumericalError("finetune: validation loss is not finite");
    result.curve.push_back(stats);
    if (log) {
      *log << stats.epoch << '\t' << stats.step << '\t' << format_double(stats.lr) << '\t'
           << format_double(stats.train_loss) << '\t' << format_double(stats.val_loss) << '\n';
    }
    if (result.best_epoch == 0 || stats.val_loss < result.best_val_loss) {
      result.best_epoch = epoch;
      result.best_val_loss = stats.val_loss;
      best = snapshot(all_params);
    }
  }
  load_params(Checkpoint{"", best}, all_params, "");
  return result;
}

template <typename T>
std::vector<Generation> generate_reports(const ReportModel<T>& model, const Dataset& data,
                                         const std::vector<std::size_t>& indices, const Vocab& vocab) {
  NoGradGuard no_grad;
  constexpr std::size_t kChunk = 64;
  std::vector<Generation> out;
  const std::size_t max_new = model.decoder->config().max_len;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const std::span<const std::size_t> idx(indices.data() + start, std::min(kChunk, indices.size() - start));
    const auto features = model.features(images_of<T>(data, idx));
    const auto seqs = generate_greedy(*model.decoder, features, kBos, kEos, max_new);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& rec = data.manifest.records[idx[b]];
      out.push_back({rec.id, vocab.decode(seqs[b]), detokenize(report_tokens(rec.report))});
    }
  }
  return out;
}

std::string format_generations(const std::vector<Generation>& generations) {
  std::string out;
  for (const auto& g : generations) out += g.id + "\t" + g.generated + "\t" + g.reference + "\n";
  return out;
}

template class ReportModel<float>;
template class ReportModel<double>;
template Tensor<float> teacher_forced_loss(const ReportModel<float>&, const Tensor<float>&,
                                           const std::vector<std::vector<int>>&);
template Tensor<double> teacher_forced_loss(const ReportModel<double>&, const Tensor<double>&,
                                            const std::vector<std::vector<int>>&);
template double split_loss(const ReportModel<float>&, const Dataset&, const std::vector<std::size_t>&, const Vocab&);
template double split_loss(const ReportModel<double>&, const Dataset&, const std::vector<std::size_t>&, const Vocab&);
template std::vector<Generation> generate_reports(const ReportModel<float>&, const Dataset&,
                                                  const std::vector<std::size_t>&, const Vocab&);
template std::vector<Generation> generate_reports(const ReportModel<double>&, const Dataset&,
                                                  const std::vector<std::size_t>&, const Vocab&);

}  // namespace cxr
