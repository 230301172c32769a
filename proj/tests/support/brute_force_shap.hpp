/*
 * Copyright 2026 The ahfx Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Shapley values by enumeration of every feature subset, using the same
// path-dependent value function as the exact algorithm: a node splitting on
// a feature in S follows x, any other split averages its children by cover.
// Test-only oracle.

#pragma once

#include <cmath>
#include <bit>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "ahfx/boosted_trees.hpp"
#include "ahfx/treeshap.hpp"

namespace ahfx::testing {

inline constexpr std::size_t kBruteForceMaxFeatures = 12;

inline double conditional_value(const gbt::Tree& t, const shap::TreeCovers& c,
                                std::span<const MaybeReal> x, std::uint32_t subset, int node = 0) {
  const auto& n = t.nodes[node];
  if (n.is_leaf()) return n.value;
  if (subset >> n.feature & 1u) {
    const auto& v = x[n.feature];
    const int next = !v ? (n.default_left ? n.left : n.right) : (*v < n.threshold ? n.left : n.right);
    return conditional_value(t, c, x, subset, next);
  }
  return shap::child_fraction(t, c, node, n.left) * conditional_value(t, c, x, subset, n.left) +
         shap::child_fraction(t, c, node, n.right) * conditional_value(t, c, x, subset, n.right);
}

inline double ensemble_value(const gbt::Ensemble& e, const std::vector<shap::TreeCovers>& covers,
                             std::span<const MaybeReal> x, std::uint32_t subset) {
  double v = e.base_score;
  for (std::size_t t = 0; t < e.trees.size(); ++t) v += conditional_value(e.trees[t], covers[t], x, subset);
  return v;
}

struct BruteForceResult {
  double expected_value = 0.0;
  std::vector<double> phi;
};

inline BruteForceResult brute_force_shap(const gbt::Ensemble& e,
                                         const std::vector<shap::TreeCovers>& covers,
                                         std::span<const MaybeReal> x) {
  const std::size_t n = e.feature_names.size();
  if (n > kBruteForceMaxFeatures)
    throw std::invalid_argument("brute_force_shap supports at most 12 features");
  const std::uint32_t full = (1u << n) - 1u;
  std::vector<double> value(std::size_t{1} << n);
  for (std::uint32_t s = 0; s <= full; ++s) value[s] = ensemble_value(e, covers, x, s);

  // weight[k] = k! (n - k - 1)! / n!
  std::vector<double> weight(n, 0.0);
  for (std::size_t k = 0; k < n; ++k)
    weight[k] = std::exp(std::lgamma(k + 1.0) + std::lgamma(static_cast<double>(n - k)) -
                         std::lgamma(n + 1.0));

  BruteForceResult r{value[0], std::vector<double>(n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bit = 1u << i;
    for (std::uint32_t s = 0; s <= full; ++s) {
      if (s & bit) continue;
      r.phi[i] += weight[static_cast<std::size_t>(std::popcount(s))] * (value[s | bit] - value[s]);
    }
  }
  return r;
}

}  // namespace ahfx::testing
