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

#include <gtest/gtest.h>

#include <random>

#include "ahfx/treeshap.hpp"
#include "support/brute_force_shap.hpp"
#include "support/random_ensemble.hpp"

namespace ahfx::shap {
namespace {

gbt::Ensemble stump(double left_cover, double right_cover) {
  gbt::Ensemble e;
  e.feature_names = {"unused", "x"};
  gbt::Tree t;
  t.nodes.resize(3);
  t.nodes[0] = {1, 2, 1, 0.5, false, 0.0, left_cover + right_cover, 1.0};
  t.nodes[1].value = -1.0;
  t.nodes[1].cover = left_cover;
  t.nodes[2].value = 1.0;
  t.nodes[2].cover = right_cover;
  e.trees.push_back(t);
  return e;
}

TEST(TreeShap, StumpExamples) {
  const std::vector<MaybeReal> x{0.0, 1.0};
  const auto a = shap_values(stump(50, 50), x);
  EXPECT_DOUBLE_EQ(a.expected_value, 0.0);
  EXPECT_DOUBLE_EQ(a.phi[1], 1.0);
  EXPECT_EQ(a.phi[0], 0.0);

  const auto b = shap_values(stump(30, 70), x);
  EXPECT_DOUBLE_EQ(b.expected_value, 0.4);
  EXPECT_DOUBLE_EQ(b.phi[1], 0.6);
}

TEST(TreeShap, MissingFollowsDefaultDirection) {
  const std::vector<MaybeReal> x{std::nullopt, std::nullopt};
  const auto r = shap_values(stump(30, 70), x);
  EXPECT_DOUBLE_EQ(r.margin, 1.0);
  EXPECT_DOUBLE_EQ(r.expected_value + r.phi[0] + r.phi[1], 1.0);
}

TEST(TreeShap, ZeroCoversSplitEvenly) {
  const auto e = stump(0, 0);
  const std::vector<TreeCovers> covers{{0.0, 0.0, 0.0}};
  const auto r = shap_values(e, covers, std::vector<MaybeReal>{0.0, 0.0});
  EXPECT_DOUBLE_EQ(r.expected_value, 0.0);
  EXPECT_DOUBLE_EQ(r.phi[1], -1.0);
  EXPECT_THROW(model_covers(e), ValidationError);
}

TEST(TreeShap, MatchesBruteForceOnRandomEnsembles) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto e = testing::random_ensemble(rng);
    const auto covers = model_covers(e);
    const auto x = testing::random_row(rng, e.feature_names.size());
    const auto fast = shap_values(e, covers, x);
    const auto slow = testing::brute_force_shap(e, covers, x);
    ASSERT_NEAR(fast.expected_value, slow.expected_value, 1e-9) << trial;
    for (std::size_t f = 0; f < fast.phi.size(); ++f)
      ASSERT_NEAR(fast.phi[f], slow.phi[f], 1e-9) << trial << " feature " << f;
  }
}

TEST(TreeShap, BruteForceRefusesThirteenFeatures) {
  gbt::Ensemble e;
  for (int f = 0; f < 13; ++f) e.feature_names.push_back("f" + std::to_string(f));
  EXPECT_THROW(testing::brute_force_shap(e, {}, std::vector<MaybeReal>(13)), std::invalid_argument);
}

TEST(TreeShap, LocalAccuracy) {
  std::mt19937_64 rng(11);
  testing::RandomEnsembleSpec spec;
  spec.max_features = 40;
  spec.max_trees = 60;
  spec.max_depth = 6;
  for (int trial = 0; trial < 100; ++trial) {
    const auto e = testing::random_ensemble(rng, spec);
    const auto x = testing::random_row(rng, e.feature_names.size(), 0.3);
    const auto r = shap_values(e, x);
    double sum = r.expected_value;
    for (double p : r.phi) sum += p;
    ASSERT_NEAR(sum, e.margin(x), 1e-9) << trial;
  }
}

TEST(TreeShap, AdditiveOverTrees) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto e = testing::random_ensemble(rng);
    const auto x = testing::random_row(rng, e.feature_names.size());
    const auto whole = shap_values(e, x);
    std::vector<double> parts(e.feature_names.size(), 0.0);
    double ev = e.base_score;
    for (const auto& t : e.trees) {
      gbt::Ensemble one;
      one.feature_names = e.feature_names;
      one.trees = {t};
      const auto r = shap_values(one, x);
      ev += r.expected_value;
      for (std::size_t f = 0; f < parts.size(); ++f) parts[f] += r.phi[f];
    }
    EXPECT_NEAR(ev, whole.expected_value, 1e-9);
    for (std::size_t f = 0; f < parts.size(); ++f) EXPECT_NEAR(parts[f], whole.phi[f], 1e-9);
  }
}

TEST(TreeShap, DummyFeatureGetsZero) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    auto e = testing::random_ensemble(rng);
    e.feature_names.push_back("dummy");
    const auto x = testing::random_row(rng, e.feature_names.size());
    EXPECT_EQ(shap_values(e, x).phi.back(), 0.0);
  }
}

TEST(TreeShap, SymmetricFeaturesShareCredit) {
  // f(x) = 1 when both a and b exceed 0, as a two-level tree either way.
  gbt::Ensemble e;
  e.feature_names = {"a", "b"};
  auto half = [](int first, int second) {
    gbt::Tree t;
    t.nodes.resize(5);
    t.nodes[0] = {1, 2, first, 0.0, false, 0.0, 4.0, 1.0};
    t.nodes[1].cover = 2.0;
    t.nodes[2] = {3, 4, second, 0.0, false, 0.0, 2.0, 1.0};
    t.nodes[3].cover = 1.0;
    t.nodes[4].value = 0.5;
    t.nodes[4].cover = 1.0;
    return t;
  };
  e.trees = {half(0, 1), half(1, 0)};
  const auto r = shap_values(e, std::vector<MaybeReal>{1.0, 1.0});
  EXPECT_DOUBLE_EQ(r.phi[0], r.phi[1]);
  EXPECT_DOUBLE_EQ(r.expected_value + r.phi[0] + r.phi[1], 1.0);
}

TEST(TreeShap, BackgroundCoversCountRows) {
  const auto e = stump(50, 50);
  FeatureTable bg({"x", "unused"});
  bg.add_row("a", {0.0, 0.0});
  bg.add_row("b", {1.0, 0.0});
  bg.add_row("c", {2.0, 0.0});
  bg.add_row("d", {std::nullopt, 0.0});
  const auto c = background_covers(e, bg);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0], (TreeCovers{4.0, 1.0, 3.0}));
  EXPECT_DOUBLE_EQ(shap_values(e, c, std::vector<MaybeReal>{0.0, 1.0}).expected_value, 0.5);
  EXPECT_THROW(background_covers(e, FeatureTable({"x", "unused"})), ValidationError);
}

TEST(Summary, BarAndBeeswarm) {
  const auto e = stump(30, 70);
  FeatureTable x({"x", "unused"});
  x.add_row("s1", {1.0, 0.0});
  x.add_row("s2", {0.0, std::nullopt});
  x.add_row("s3", {std::nullopt, 0.0});
  const auto s = shap_summary(e, model_covers(e), x, 4);
  ASSERT_EQ(s.features, (std::vector<std::string>{"x", "unused"}));
  // phi_x: 0.6, -1.4, 0.6
  EXPECT_NEAR(s.bar[0], (0.6 + 1.4 + 0.6) / 3.0, 1e-12);
  EXPECT_EQ(s.bar[1], 0.0);
  ASSERT_EQ(s.beeswarm.size(), 6u);
  EXPECT_EQ(s.beeswarm[0].scan_id, "s1");
  EXPECT_FALSE(s.beeswarm[2].value);
  EXPECT_FALSE(s.beeswarm[4].value);
  const auto bee = beeswarm_table(s);
  EXPECT_EQ(bee.rows[2][4], "1");
  EXPECT_EQ(bee.rows[2][3], "");
  EXPECT_EQ(bar_table(s).rows[0][0], "x");
}

TEST(Waterfall, RunningTotalsReachMargin) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const auto e = testing::random_ensemble(rng);
    const auto x = testing::random_row(rng, e.feature_names.size());
    const auto w = waterfall_export(e, model_covers(e), x);
    ASSERT_EQ(w.records.size(), e.feature_names.size());
    EXPECT_EQ(w.records.front().start, w.expected_value);
    EXPECT_EQ(w.records.back().end, w.margin);
    EXPECT_EQ(w.margin, e.margin(x));
    for (std::size_t i = 1; i < w.records.size(); ++i) {
      EXPECT_EQ(w.records[i].start, w.records[i - 1].end);
      EXPECT_GE(std::abs(w.records[i - 1].phi), std::abs(w.records[i].phi));
    }
  }
}

TEST(Waterfall, JsonDocument) {
  const auto e = stump(30, 70);
  const std::vector<MaybeReal> x{std::nullopt, 1.0};
  const auto j = to_json(waterfall_export(e, model_covers(e), x), "scan-1");
  EXPECT_EQ(j["scan_id"], "scan-1");
  EXPECT_EQ(j["expected_value_label"], "mean log odds");
  EXPECT_DOUBLE_EQ(j["f_x"].get<double>(), 1.0);
  EXPECT_EQ(j["records"][0]["feature"], "x");
  EXPECT_DOUBLE_EQ(j["records"][0]["start"].get<double>(), 0.4);
  EXPECT_TRUE(j["records"][1]["value"].is_null());
}

}  // namespace
}  // namespace ahfx::shap
