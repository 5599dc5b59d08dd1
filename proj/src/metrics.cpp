#include "cxr/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "cxr/error.hpp"

namespace cxr {

TokenSeq tokenize(std::string_view text) {
  TokenSeq out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t a = i, b = j;
    while (a < b && std::ispunct(static_cast<unsigned char>(text[a]))) ++a;
    while (b > a && std::ispunct(static_cast<unsigned char>(text[b - 1]))) --b;
    if (a < b) {
      std::string tok(text.substr(a, b - a));
      for (auto& ch : tok) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      out.push_back(std::move(tok));
    }
    i = j;
  }
  return out;
}

NgramCounts& NgramCounts::operator+=(const NgramCounts& other) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += other.matches[n];
    totals[n] += other.totals[n];
  }
  candidate_length += other.candidate_length;
  reference_length += other.reference_length;
  return *this;
}

namespace {

std::map<TokenSeq, std::size_t> ngrams(const TokenSeq& seq, std::size_t n) {
  std::map<TokenSeq, std::size_t> counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[TokenSeq(seq.begin() + static_cast<std::ptrdiff_t>(i),
                                                                      seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

void check_order(int max_n) {
  if (max_n < 1 || max_n > 4) throw ConfigError("bleu: max_n must be in 1..4");
}

}  // namespace

NgramCounts ngram_counts(const TokenSeq& candidate, const TokenSeq& reference) {
  NgramCounts c;
  c.candidate_length = candidate.size();
  c.reference_length = reference.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cand = ngrams(candidate, n);
    const auto ref = ngrams(reference, n);
    for (const auto& [gram, count] : cand) {
      c.totals[n - 1] += count;
      auto it = ref.find(gram);
      if (it != ref.end()) c.matches[n - 1] += std::min(count, it->second);
    }
  }
  return c;
}

double bleu_from_counts(const NgramCounts& counts, int max_n) {
  check_order(max_n);
  if (counts.candidate_length == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < max_n; ++n) {
    if (counts.totals[n] == 0 || counts.matches[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(counts.matches[n]) / static_cast<double>(counts.totals[n]));
  }
  const double c = static_cast<double>(counts.candidate_length), r = static_cast<double>(counts.reference_length);
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / max_n);
}

double bleu(const TokenSeq& candidate, const TokenSeq& reference, int max_n) {
  return bleu_from_counts(ngram_counts(candidate, reference), max_n);
}

double corpus_bleu(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references, int max_n) {
  if (candidates.size() != references.size()) {
    throw ShapeError("corpus_bleu", Shape{candidates.size()}, Shape{references.size()}, "one reference per candidate");
  }
  NgramCounts total;
  for (std::size_t i = 0; i < candidates.size(); ++i) total += ngram_counts(candidates[i], references[i]);
  return bleu_from_counts(total, max_n);
}

double smoothed_sentence_bleu(const TokenSeq& candidate, const TokenSeq& reference, int max_n) {
  check_order(max_n);
  if (candidate.empty()) return 0.0;
  const auto counts = ngram_counts(candidate, reference);
  double log_sum = 0.0;
  for (int n = 0; n < max_n; ++n) {
    log_sum += std::log((counts.matches[n] + 1.0) / (counts.totals[n] + 1.0));
  }
  const double c = static_cast<double>(candidate.size()), r = static_cast<double>(reference.size());
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / max_n);
}

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const TokenSeq& candidate, const TokenSeq& reference, double beta) {
  const std::size_t l = lcs_length(candidate, reference);
  if (l == 0) return 0.0;
  const double p = static_cast<double>(l) / static_cast<double>(candidate.size());
  const double r = static_cast<double>(l) / static_cast<double>(reference.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

namespace {

// Depth-first search over which candidate occurrences align to which
// reference positions, keeping the match count maximal.
class AlignmentSearch {
 public:
  AlignmentSearch(const TokenSeq& cand, const TokenSeq& ref, std::size_t budget)
      : cand_(cand), ref_(ref), budget_(budget), used_(ref.size(), false) {
    std::unordered_map<std::string, std::size_t> cand_count, ref_count;
    for (const auto& t : cand) ++cand_count[t];
    for (const auto& t : ref) ++ref_count[t];
    for (const auto& [w, c] : cand_count) {
      auto it = ref_count.find(w);
      const std::size_t need = it == ref_count.end() ? 0 : std::min(c, it->second);
      need_[w] = need;
      left_[w] = c;
      total_ += need;
    }
    for (std::size_t j = 0; j < ref.size(); ++j) positions_[ref[j]].push_back(j);
  }

  Alignment run() {
    if (total_ == 0) return {};
    dfs(0, kNone, 0, total_);
    return {total_, best_};
  }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  void dfs(std::size_t i, std::size_t prev_ref, std::size_t chunks, std::size_t remaining) {
    if (chunks >= best_) return;
    if (remaining == 0) {
      best_ = chunks;
      return;
    }
    if (nodes_++ >= budget_ && best_ != kNone) return;
    const std::string& w = cand_[i];
    auto& need = need_[w];
    auto& left = left_[w];
    --left;
    if (need > 0) {
      auto try_ref = [&](std::size_t j) {
        used_[j] = true;
        --need;
        const bool continues = prev_ref != kNone && j == prev_ref + 1;
        dfs(i + 1, j, chunks + (continues ? 0 : 1), remaining - 1);
        ++need;
        used_[j] = false;
      };
      if (prev_ref != kNone && prev_ref + 1 < ref_.size() && ref_[prev_ref + 1] == w && !used_[prev_ref + 1]) {
        try_ref(prev_ref + 1);
      }
      for (std::size_t j : positions_[w]) {
        if (used_[j] || (prev_ref != kNone && j == prev_ref + 1)) continue;
        try_ref(j);
      }
    }
    // Leaving this occurrence unaligned is allowed only if enough later
    // occurrences remain to meet the required count.
    if (left >= need) dfs(i + 1, kNone, chunks, remaining);
    ++left;
  }

  const TokenSeq& cand_;
  const TokenSeq& ref_;
  std::size_t budget_;
  std::size_t nodes_ = 0;
  std::size_t total_ = 0;
  std::size_t best_ = kNone;
  std::vector<bool> used_;
  std::unordered_map<std::string, std::size_t> need_, left_;
  std::unordered_map<std::string, std::vector<std::size_t>> positions_;
};

}  // namespace

Alignment meteor_alignment(const TokenSeq& candidate, const TokenSeq& reference, std::size_t search_budget) {
  return AlignmentSearch(candidate, reference, search_budget).run();
}

double meteor_from_alignment(const Alignment& a, std::size_t candidate_length, std::size_t reference_length,
                             const MeteorParams& params) {
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(candidate_length);
  const double r = m / static_cast<double>(reference_length);
  const double fmean = p * r / (params.alpha * p + (1.0 - params.alpha) * r);
  const double penalty = params.gamma * std::pow(static_cast<double>(a.chunks) / m, params.beta);
  return fmean * (1.0 - penalty);
}

double meteor(const TokenSeq& candidate, const TokenSeq& reference, const MeteorParams& params) {
  return meteor_from_alignment(meteor_alignment(candidate, reference, params.search_budget), candidate.size(),
                               reference.size(), params);
}

std::map<std::string, KeywordScore> keyword_f1(const std::vector<std::string>& generated,
                                               const std::vector<std::vector<std::string>>& reference_tags,
                                               const std::vector<std::string>& keywords) {
  if (keywords.empty()) throw ConfigError("keyword_f1: keyword list is empty");
  if (generated.size() != reference_tags.size()) {
    throw ShapeError("keyword_f1", Shape{generated.size()}, Shape{reference_tags.size()}, "one tag set per report");
  }
  std::map<std::string, KeywordScore> out;
  for (const auto& k : keywords) out[k];
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const auto tokens = tokenize(generated[i]);
    for (const auto& k : keywords) {
      const bool predicted = std::find(tokens.begin(), tokens.end(), k) != tokens.end();
      const bool actual = std::find(reference_tags[i].begin(), reference_tags[i].end(), k) != reference_tags[i].end();
      auto& s = out[k];
      if (predicted && actual) ++s.tp;
      if (predicted && !actual) ++s.fp;
      if (!predicted && actual) ++s.fn;
    }
  }
  for (auto& [k, s] : out) {
    s.precision = s.tp + s.fp == 0 ? 0.0 : static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
    s.recall = s.tp + s.fn == 0 ? 0.0 : static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn);
    s.f1 = s.precision + s.recall == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  }
  return out;
}

const std::vector<std::string>& lung_keywords() {
  static const std::vector<std::string> k{"pneumothorax", "volume", "effusion", "calcification"};
  return k;
}

double MetricReport::lung_macro_f1() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& k : lung_keywords()) {
    auto it = keywords.find(k);
    if (it == keywords.end()) continue;
    sum += it->second.f1;
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

namespace {
std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace

std::string MetricReport::to_text() const {
  std::map<std::string, double> rows{{"bleu_1", bleu[0]}, {"bleu_2", bleu[1]}, {"bleu_3", bleu[2]},
                                     {"bleu_4", bleu[3]}, {"meteor", meteor},  {"rouge_l", rouge_l}};
  if (!keywords.empty()) rows["lung_keyword_macro_f1"] = lung_macro_f1();
  std::ostringstream out;
  for (const auto& [name, value] : rows) out << name << '\t' << fixed(value) << '\n';
  if (!keywords.empty()) {
    out << "\nkeyword\tprecision\trecall\tf1\ttp\tfp\tfn\n";
    for (const auto& [k, s] : keywords) {
      out << k << '\t' << fixed(s.precision) << '\t' << fixed(s.recall) << '\t' << fixed(s.f1) << '\t' << s.tp << '\t'
          << s.fp << '\t' << s.fn << '\n';
    }
  }
  return out.str();
}

MetricReport evaluate_reports(const std::vector<std::string>& generated, const std::vector<std::string>& references,
                              const std::vector<std::vector<std::string>>& reference_tags,
                              const std::vector<std::string>& keywords) {
  if (generated.size() != references.size()) {
    throw ShapeError("evaluate_reports", Shape{generated.size()}, Shape{references.size()},
                     "one reference per generation");
  }
  MetricReport report;
  std::vector<TokenSeq> cand, ref;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    cand.push_back(tokenize(generated[i]));
    ref.push_back(tokenize(references[i]));
  }
  for (int n = 1; n <= 4; ++n) report.bleu[n - 1] = corpus_bleu(cand, ref, n);
  if (!cand.empty()) {
    double m = 0.0, r = 0.0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      m += meteor(cand[i], ref[i]);
      r += rouge_l(cand[i], ref[i]);
    }
    report.meteor = m / static_cast<double>(cand.size());
    report.rouge_l = r / static_cast<double>(cand.size());
  }
  if (!keywords.empty()) report.keywords = keyword_f1(generated, reference_tags, keywords);
  return report;
}

}  // namespace cxr
