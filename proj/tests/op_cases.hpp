#pragma once

// Every differentiable op with a random input generator, for grad checks.

#include <functional>
#include <vector>

#include "cxr/ops.hpp"
#include "test_util.hpp"

namespace cxr::test {

struct OpCase {
  const char* name;
  std::function<TD(const std::vector<TD>&)> fn;
  std::function<std::vector<TD>(Rng&)> make;
};

inline std::vector<OpCase> op_cases() {
  namespace o = cxr::ops;
  static const std::vector<int> ids{2, 0, 4, 2, 1};
  static const std::vector<int> cols{1, 0, 3};
  static const std::vector<int> ce_targets{1, 3, -2, 0};
  static const std::vector<double> bce_t{0, 1, 0.25, 1, 0, 0.5};
  return {
      {"matmul", [](auto& a) { return o::matmul(a[0], a[1]); },
       [](Rng& r) { return std::vector<TD>{random_tensor({3, 4}, r), random_tensor({4, 2}, r)}; }},
      {"similarity", [](auto& a) { return o::similarity(a[0], a[1]); },
       [](Rng& r) { return std::vector<TD>{random_tensor({3, 4}, r), random_tensor({5, 4}, r)}; }},
      {"bmm", [](auto& a) { return o::bmm(a[0], a[1]); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 3, 4}, r), random_tensor({2, 4, 2}, r)}; }},
      {"bmm_t", [](auto& a) { return o::bmm(a[0], a[1], true); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 3, 4}, r), random_tensor({2, 5, 4}, r)}; }},
      {"conv_valid", [](auto& a) { return o::conv2d(a[0], a[1], 1, o::Padding::valid); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 2, 5, 5}, r), random_tensor({3, 2, 3, 3}, r)}; }},
      {"conv_same_s2", [](auto& a) { return o::conv2d(a[0], a[1], 2, o::Padding::same); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 2, 5, 5}, r), random_tensor({3, 2, 3, 3}, r)}; }},
      {"conv_1x1_s2", [](auto& a) { return o::conv2d(a[0], a[1], 2, o::Padding::valid); },
       [](Rng& r) { return std::vector<TD>{random_tensor({1, 3, 4, 4}, r), random_tensor({2, 3, 1, 1}, r)}; }},
      {"conv_transpose", [](auto& a) { return o::conv_transpose2d(a[0], a[1], 2); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 3, 3, 3}, r), random_tensor({3, 2, 2, 2}, r)}; }},
      {"relu", [](auto& a) { return o::relu(a[0]); },
       [](Rng& r) { return std::vector<TD>{random_tensor({3, 4}, r, 1.0, true)}; }},
      {"sigmoid", [](auto& a) { return o::sigmoid(a[0]); },
       [](Rng& r) { return std::vector<TD>{random_tensor({3, 4}, r, 3.0)}; }},
      {"tanh", [](auto& a) { return o::tanh(a[0]); },
       [](Rng& r) { return std::vector<TD>{random_tensor({3, 4}, r, 2.0)}; }},
      {"add", [](auto& a) { return o::add(a[0], a[1]); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 3}, r), random_tensor({2, 3}, r)}; }},
      {"sub", [](auto& a) { return o::sub(a[0], a[1]); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 3}, r), random_tensor({2, 3}, r)}; }},
      {"mul", [](auto& a) { return o::mul(a[0], a[1]); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 3}, r), random_tensor({2, 3}, r)}; }},
      {"scale", [](auto& a) { return o::scale(a[0], -1.7); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 3}, r)}; }},
      {"add_bias", [](auto& a) { return o::add_bias(a[0], a[1]); },
       [](Rng& r) { return std::vector<TD>{random_tensor({4, 3}, r), random_tensor({3}, r)}; }},
      {"sum", [](auto& a) { return o::sum(a[0]); }, [](Rng& r) { return std::vector<TD>{random_tensor({2, 3}, r)}; }},
      {"mean", [](auto& a) { return o::mean(a[0]); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 3}, r)}; }},
      {"sum_last", [](auto& a) { return o::sum_last(a[0]); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 3, 4}, r)}; }},
      {"mean_pool", [](auto& a) { return o::mean_pool(a[0]); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 3, 2, 3}, r)}; }},
      {"reshape", [](auto& a) { return o::reshape(a[0], {3, 4}); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 6}, r)}; }},
      {"permute", [](auto& a) { return o::permute(a[0], {2, 0, 1}); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 3, 4}, r)}; }},
      {"concat0", [](auto& a) { return o::concat<double>({a[0], a[1]}, 0); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 3}, r), random_tensor({1, 3}, r)}; }},
      {"concat1", [](auto& a) { return o::concat<double>({a[0], a[1]}, 1); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 3}, r), random_tensor({2, 2}, r)}; }},
      {"slice", [](auto& a) { return o::slice(a[0], 1, 1, 2); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 4, 3}, r)}; }},
      {"embedding", [](auto& a) { return o::embedding(a[0], std::span<const int>(ids)); },
       [](Rng& r) { return std::vector<TD>{random_tensor({5, 3}, r)}; }},
      {"gather_cols", [](auto& a) { return o::gather_cols(a[0], std::span<const int>(cols)); },
       [](Rng& r) { return std::vector<TD>{random_tensor({3, 4}, r)}; }},
      {"softmax", [](auto& a) { return o::softmax(a[0]); },
       [](Rng& r) { return std::vector<TD>{random_tensor({3, 5}, r, 2.0)}; }},
      {"log_softmax", [](auto& a) { return o::log_softmax(a[0]); },
       [](Rng& r) { return std::vector<TD>{random_tensor({3, 5}, r, 2.0)}; }},
      {"l2_normalize", [](auto& a) { return o::l2_normalize(a[0]); },
       [](Rng& r) { return std::vector<TD>{random_tensor({3, 4}, r, 1.0, true)}; }},
      {"layer_norm", [](auto& a) { return o::layer_norm(a[0], a[1], a[2]); },
       [](Rng& r) {
         return std::vector<TD>{random_tensor({3, 5}, r), random_tensor({5}, r), random_tensor({5}, r)};
       }},
      {"group_norm", [](auto& a) { return o::group_norm(a[0], a[1], a[2], 2); },
       [](Rng& r) {
         return std::vector<TD>{random_tensor({2, 4, 3, 3}, r), random_tensor({4}, r), random_tensor({4}, r)};
       }},
      {"causal_mask_softmax", [](auto& a) { return o::softmax(o::causal_mask(a[0])); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 4, 4}, r)}; }},
      {"cross_entropy", [](auto& a) { return o::cross_entropy(a[0], std::span<const int>(ce_targets), -2); },
       [](Rng& r) { return std::vector<TD>{random_tensor({4, 5}, r, 2.0)}; }},
      {"bce_with_logits", [](auto& a) { return o::bce_with_logits(a[0], std::span<const double>(bce_t)); },
       [](Rng& r) { return std::vector<TD>{random_tensor({2, 3}, r, 3.0)}; }},
  };
}

// Worst relative error over every input of every case and `seeds` seeds.
inline double worst_op_error(const OpCase& c, std::uint64_t seeds) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    Rng rng(1000 + seed);
    const auto inputs = c.make(rng);
    for (std::size_t i = 0; i < inputs.size(); ++i) worst = std::max(worst, check_input(c.fn, inputs, i, seed));
  }
  return worst;
}

}  // namespace cxr::test
