#pragma once

#include <cmath>
#include <vector>

#include "cxr/random.hpp"
#include "test_util.hpp"

namespace cxr::test {

// -sum_i log(exp(s_ij/t) / sum_{k != i} exp(s_ik/t)) / 2N, or the printed form
// without log and mean, evaluated term by term.
inline double direct_loss(const std::vector<std::vector<double>>& z, const std::vector<std::size_t>& pair, double t,
                          bool literal) {
  auto dot = [&](std::size_t a, std::size_t b) {
    double s = 0;
    for (std::size_t d = 0; d < z[a].size(); ++d) s += z[a][d] * z[b][d];
    return s;
  };
  double total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    double denom = 0;
    for (std::size_t k = 0; k < z.size(); ++k)
      if (k != i) denom += std::exp(dot(i, k) / t);
    const double ratio = std::exp(dot(i, pair[i]) / t) / denom;
    total += literal ? -ratio : -std::log(ratio);
  }
  return literal ? total : total / static_cast<double>(z.size());
}

inline std::vector<std::vector<double>> random_unit_rows(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::vector<double>> rows(n, std::vector<double>(k));
  for (auto& r : rows) {
    double sq = 0;
    for (auto& v : r) {
      v = standard_normal(rng);
      sq += v * v;
    }
    for (auto& v : r) v /= std::sqrt(sq);
  }
  return rows;
}

inline TD to_tensor(const std::vector<std::vector<double>>& rows) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return TD::from({rows.size(), rows[0].size()}, std::move(flat));
}

}  // namespace cxr::test
