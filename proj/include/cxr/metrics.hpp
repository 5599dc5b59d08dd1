#pragma once

#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace cxr {

using TokenSeq = std::vector<std::string>;

// Lowercase, split on whitespace, strip leading/trailing ASCII punctuation,
// drop empty tokens.
TokenSeq tokenize(std::string_view text);

// Clipped n-gram matches and candidate n-gram totals for n = 1..4.
struct NgramCounts {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;

  NgramCounts& operator+=(const NgramCounts& other);
};

NgramCounts ngram_counts(const TokenSeq& candidate, const TokenSeq& reference);

// Unsmoothed BLEU from aggregated counts; a zero precision gives 0.
double bleu_from_counts(const NgramCounts& counts, int max_n);
double bleu(const TokenSeq& candidate, const TokenSeq& reference, int max_n);
double corpus_bleu(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references, int max_n);
// Add-one smoothing on every precision; for per-sentence diagnostics.
double smoothed_sentence_bleu(const TokenSeq& candidate, const TokenSeq& reference, int max_n);

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b);
double rouge_l(const TokenSeq& candidate, const TokenSeq& reference, double beta = 1.2);

struct MeteorParams {
  double alpha = 0.9;
  double beta = 3.0;
  double gamma = 0.5;
  // Alignment search nodes before falling back to the best alignment found.
  std::size_t search_budget = 200000;
};

struct Alignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

// Exact-match unigram alignment with the maximum number of matches and, among
// those, the fewest chunks.
Alignment meteor_alignment(const TokenSeq& candidate, const TokenSeq& reference, std::size_t search_budget = 200000);
double meteor_from_alignment(const Alignment& a, std::size_t candidate_length, std::size_t reference_length,
                             const MeteorParams& params = {});
double meteor(const TokenSeq& candidate, const TokenSeq& reference, const MeteorParams& params = {});

struct KeywordScore {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// A generated report is positive for a keyword when the keyword is one of its
// tokens; a reference is positive when the keyword is among its tags.
std::map<std::string, KeywordScore> keyword_f1(const std::vector<std::string>& generated,
                                               const std::vector<std::vector<std::string>>& reference_tags,
                                               const std::vector<std::string>& keywords);

const std::vector<std::string>& lung_keywords();

struct MetricReport {
  std::array<double, 4> bleu{};
  double meteor = 0.0;
  double rouge_l = 0.0;
  std::map<std::string, KeywordScore> keywords;

  // Mean F1 over the lung keywords present in `keywords`.
  double lung_macro_f1() const;
  // metric<TAB>value lines, alphabetical, then a keyword block.
  std::string to_text() const;
};

// Corpus BLEU; METEOR and ROUGE-L averaged over sentences.
MetricReport evaluate_reports(const std::vector<std::string>& generated, const std::vector<std::string>& references,
                              const std::vector<std::vector<std::string>>& reference_tags,
                              const std::vector<std::string>& keywords);

}  // namespace cxr
