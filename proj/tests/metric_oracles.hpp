#pragma once

// Naive reference implementations used as test oracles.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cxr/random.hpp"

namespace cxr::oracle {

using Seq = std::vector<std::string>;

inline Seq random_sequence(Rng& rng, std::size_t min_len, std::size_t max_len, std::size_t vocab) {
  const std::size_t len = min_len + uniform_index(rng, max_len - min_len + 1);
  Seq s;
  for (std::size_t i = 0; i < len; ++i) s.push_back("w" + std::to_string(uniform_index(rng, vocab)));
  return s;
}

inline std::size_t count_ngram(const Seq& s, const Seq& gram) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + gram.size() <= s.size(); ++i) {
    bool same = true;
    for (std::size_t k = 0; k < gram.size(); ++k) same = same && s[i + k] == gram[k];
    n += same ? 1 : 0;
  }
  return n;
}

// Corpus BLEU by direct counting: every distinct candidate n-gram is counted
// by scanning both sequences.
inline double bleu(const std::vector<Seq>& cands, const std::vector<Seq>& refs, int max_n) {
  double c_len = 0, r_len = 0, log_sum = 0;
  for (int n = 1; n <= max_n; ++n) {
    double matched = 0, total = 0;
    for (std::size_t p = 0; p < cands.size(); ++p) {
      const Seq& c = cands[p];
      std::vector<Seq> seen;
      for (std::size_t i = 0; i + n <= c.size(); ++i) {
        Seq g(c.begin() + static_cast<long>(i), c.begin() + static_cast<long>(i + n));
        total += 1;
        bool dup = false;
        for (const auto& s : seen) dup = dup || s == g;
        if (dup) continue;
        seen.push_back(g);
        matched += static_cast<double>(std::min(count_ngram(c, g), count_ngram(refs[p], g)));
      }
    }
    if (matched == 0 || total == 0) return 0.0;
    log_sum += std::log(matched / total);
  }
  for (std::size_t p = 0; p < cands.size(); ++p) {
    c_len += static_cast<double>(cands[p].size());
    r_len += static_cast<double>(refs[p].size());
  }
  const double bp = c_len < r_len ? std::exp(1.0 - r_len / c_len) : 1.0;
  return bp * std::exp(log_sum / max_n);
}

// Top-down memoized longest common subsequence.
inline std::size_t lcs(const Seq& a, const Seq& b) {
  std::vector<std::vector<int>> memo(a.size() + 1, std::vector<int>(b.size() + 1, -1));
  std::function<int(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> int {
    if (i == a.size() || j == b.size()) return 0;
    int& m = memo[i][j];
    if (m >= 0) return m;
    if (a[i] == b[j]) return m = 1 + go(i + 1, j + 1);
    return m = std::max(go(i + 1, j), go(i, j + 1));
  };
  return static_cast<std::size_t>(go(0, 0));
}

inline double rouge_l(const Seq& c, const Seq& r, double beta) {
  const double l = static_cast<double>(lcs(c, r));
  if (l == 0) return 0.0;
  const double p = l / static_cast<double>(c.size()), rec = l / static_cast<double>(r.size());
  return (1 + beta * beta) * p * rec / (rec + beta * beta * p);
}

// Every partial one-to-one exact matching; returns (max matches, min chunks
// among maximal matchings).
inline std::pair<std::size_t, std::size_t> meteor_alignment(const Seq& c, const Seq& r) {
  std::vector<int> to(c.size(), -1);
  std::vector<bool> used(r.size(), false);
  std::size_t best_m = 0, best_chunks = 0;
  std::function<void(std::size_t)> go = [&](std::size_t i) {
    if (i == c.size()) {
      std::size_t m = 0, chunks = 0;
      int prev_c = -2, prev_r = -2;
      for (std::size_t k = 0; k < c.size(); ++k) {
        if (to[k] < 0) continue;
        ++m;
        if (!(static_cast<int>(k) == prev_c + 1 && to[k] == prev_r + 1)) ++chunks;
        prev_c = static_cast<int>(k);
        prev_r = to[k];
      }
      if (m > best_m || (m == best_m && chunks < best_chunks)) {
        best_m = m;
        best_chunks = chunks;
      }
      return;
    }
    go(i + 1);
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (used[j] || r[j] != c[i]) continue;
      used[j] = true;
      to[i] = static_cast<int>(j);
      go(i + 1);
      to[i] = -1;
      used[j] = false;
    }
  };
  go(0);
  return {best_m, best_chunks};
}

inline double meteor_fmean(double p, double r) { return p * r / (0.9 * p + 0.1 * r); }
inline double meteor_penalty(double chunks, double matches) { return 0.5 * std::pow(chunks / matches, 3.0); }

struct MeteorCase {
  const char* cand;
  const char* ref;
  double expected;
};

// Worked by hand from Fmean = PR / (0.9P + 0.1R) and Pen = 0.5 (chunks/matches)^3.
inline std::vector<MeteorCase> meteor_hand_cases() {
  const auto f = meteor_fmean;
  const auto pen = meteor_penalty;
  return {
      {"x y", "a b", 0.0},
      {"lungs", "lungs", 0.5},
      {"a b c d e f g h i j k l m n o p q r s t", "a b c d e f g h i j k l m n o p q r s t", 1.0 - 6.25e-5},
      {"a b c", "c b a", 0.5},
      {"the cat sat on the mat", "on the mat sat the cat", 1.0 - pen(3, 6)},
      {"a b c d", "a b x c d", f(1.0, 0.8) * (1.0 - pen(2, 4))},
      {"a a b", "a b a", 1.0 - pen(2, 3)},
      {"a b", "a b c d e f", f(1.0, 1.0 / 3.0) * (1.0 - pen(1, 2))},
      {"x a y b", "a b", f(0.5, 1.0) * (1.0 - pen(2, 2))},
      {"b a b", "a b", f(2.0 / 3.0, 1.0) * (1.0 - pen(1, 2))},
  };
}

}  // namespace cxr::oracle
