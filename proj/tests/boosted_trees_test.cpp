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

#include <cmath>
#include <random>

#include "ahfx/boosted_trees.hpp"

namespace ahfx::gbt {
namespace {

FeatureTable column_table(const std::vector<std::vector<MaybeReal>>& rows,
                          std::vector<std::string> names) {
  FeatureTable t(std::move(names));
  for (std::size_t r = 0; r < rows.size(); ++r) t.add_row("r" + std::to_string(r), rows[r]);
  return t;
}

BoostParams stump_params() {
  BoostParams p;
  p.eta = 1.0;
  p.lambda = 0.0;
  p.min_child_weight = 0.0;
  p.max_depth = 1;
  p.n_rounds = 1;
  p.early_stopping_rounds = 0;
  return p;
}

TEST(Train, FourPointStump) {
  const auto x = column_table({{1.0}, {2.0}, {3.0}, {4.0}}, {"x"});
  const std::vector<int> y{0, 0, 1, 1};
  const auto e = train(x, y, stump_params());
  ASSERT_EQ(e.trees.size(), 1u);
  const auto& n = e.trees[0].nodes;
  ASSERT_EQ(n.size(), 3u);
  EXPECT_EQ(n[0].threshold, 2.5);
  EXPECT_DOUBLE_EQ(n[0].gain, 2.0);
  EXPECT_DOUBLE_EQ(n[n[0].left].value, -2.0);
  EXPECT_DOUBLE_EQ(n[n[0].right].value, 2.0);
  EXPECT_DOUBLE_EQ(n[0].cover, 1.0);
  EXPECT_EQ(e.best_round, -1);
}

TEST(Train, GammaAboveGainBlocksSplit) {
  const auto x = column_table({{1.0}, {2.0}, {3.0}, {4.0}}, {"x"});
  auto p = stump_params();
  p.gamma = 2.5;
  const auto e = train(x, std::vector<int>{0, 0, 1, 1}, p);
  EXPECT_EQ(e.trees[0].nodes.size(), 1u);
}

TEST(LeafObjective, SoftThresholdAndWeights) {
  EXPECT_EQ(soft_threshold(0.5, 1.0), 0.0);
  EXPECT_EQ(soft_threshold(-3.0, 1.0), -2.0);
  EXPECT_EQ(soft_threshold(3.0, 1.0), 2.0);
  BoostParams p;
  p.lambda = 1.0;
  p.alpha = 1.0;
  EXPECT_NEAR(leaf_weight(-3.0, 2.0, p), 0.6667, 1e-4);
  EXPECT_EQ(leaf_weight(0.5, 2.0, p), 0.0);
  p.max_delta_step = 0.5;
  EXPECT_EQ(leaf_weight(-3.0, 2.0, p), 0.5);
}

TEST(LeafObjective, BalancedPositiveWeight) {
  std::vector<int> y(4672, 0);
  std::fill(y.begin(), y.begin() + 360, 1);
  EXPECT_NEAR(balanced_pos_weight(y), 11.98, 0.005);
}

struct Synthetic {
  FeatureTable x;
  std::vector<int> y;
};

Synthetic synthetic(std::uint64_t seed, std::size_t n, double missing = 0.1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::bernoulli_distribution miss(missing), pos(0.3);
  Synthetic s{FeatureTable({"a", "b", "c", "d"}), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const int y = pos(rng);
    std::vector<MaybeReal> row;
    for (double shift : {1.0, 0.5, 0.0, 0.0}) {
      const double v = z(rng) + shift * y;
      row.push_back(miss(rng) ? MaybeReal{} : MaybeReal{v});
    }
    s.x.add_row("s" + std::to_string(i), row);
    s.y.push_back(y);
  }
  return s;
}

TEST(Train, TrainingLossNonIncreasing) {
  const auto d = synthetic(1, 400);
  BoostParams p;
  p.eta = 0.3;
  p.max_depth = 3;
  p.n_rounds = 50;
  TrainLog log;
  train(d.x, d.y, p, nullptr, {}, &log);
  ASSERT_EQ(log.train_logloss.size(), 50u);
  for (std::size_t r = 1; r < log.train_logloss.size(); ++r)
    EXPECT_LE(log.train_logloss[r], log.train_logloss[r - 1] + 1e-12) << r;
}

TEST(Train, CoverAndGainInvariants) {
  const auto d = synthetic(2, 300);
  BoostParams p;
  p.max_depth = 4;
  p.n_rounds = 20;
  p.gamma = 0.1;
  p.min_child_weight = 2.0;
  p.subsample = 0.8;
  const auto e = train(d.x, d.y, p);
  for (const auto& t : e.trees) {
    EXPECT_LE(t.depth(), 4);
    for (const auto& n : t.nodes) {
      if (n.is_leaf()) continue;
      EXPECT_NEAR(n.cover, t.nodes[n.left].cover + t.nodes[n.right].cover, 1e-9 * n.cover);
      EXPECT_GT(n.gain, p.gamma);
      EXPECT_GE(t.nodes[n.left].cover, p.min_child_weight);
      EXPECT_GE(t.nodes[n.right].cover, p.min_child_weight);
    }
  }
}

TEST(Train, MissingDirectionFollowsData) {
  // Missing values occur only among positives, so they should be routed
  // towards the positive leaf.
  std::vector<std::vector<MaybeReal>> rows;
  std::vector<int> y;
  for (int i = 0; i < 20; ++i) {
    rows.push_back({i < 10 ? MaybeReal{static_cast<double>(i)} : MaybeReal{}});
    y.push_back(i >= 5);
  }
  for (int i = 0; i < 5; ++i) {
    rows.push_back({MaybeReal{20.0 + i}});
    y.push_back(1);
  }
  const auto x = column_table(rows, {"x"});
  const auto e = train(x, y, stump_params());
  const auto& root = e.trees[0].nodes[0];
  const std::vector<MaybeReal> missing{std::nullopt};
  EXPECT_GT(e.trees[0].value(missing), 0.0);
  EXPECT_EQ(root.threshold, 4.5);

  TrainOptions right_only;
  right_only.learn_missing_direction = false;
  const auto r = train(x, y, stump_params(), nullptr, right_only);
  for (const auto& n : r.trees[0].nodes) EXPECT_FALSE(n.default_left);
}

TEST(Train, MissingValueRoutedAsDefault) {
  const auto d = synthetic(3, 200, 0.3);
  BoostParams p;
  p.n_rounds = 5;
  const auto e = train(d.x, d.y, p);
  for (const auto& t : e.trees)
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
      const auto& n = t.nodes[i];
      if (n.is_leaf()) continue;
      EXPECT_EQ(n.threshold, n.threshold);  // finite midpoint
      EXPECT_TRUE(std::isfinite(n.threshold));
    }
  std::vector<MaybeReal> all_missing(4);
  double m = e.base_score;
  for (const auto& t : e.trees) {
    int n = 0;
    while (!t.nodes[n].is_leaf()) n = t.nodes[n].default_left ? t.nodes[n].left : t.nodes[n].right;
    m += t.nodes[n].value;
  }
  EXPECT_DOUBLE_EQ(predict(e, all_missing).margin, m);
}

TEST(Train, EarlyStoppingTruncatesToBestRound) {
  const auto d = synthetic(4, 300);
  const auto v = synthetic(5, 100);
  BoostParams p;
  p.n_rounds = 200;
  p.early_stopping_rounds = 5;
  p.max_depth = 6;
  Validation val{&v.x, [&](std::span<const double> prob) {
                   double s = 0.0;
                   for (std::size_t i = 0; i < prob.size(); ++i)
                     s -= v.y[i] ? -std::log(prob[i]) : -std::log(1.0 - prob[i]);
                   return s;
                 }};
  TrainLog log;
  const auto e = train(d.x, d.y, p, &val, {}, &log);
  ASSERT_GE(e.best_round, 0);
  EXPECT_EQ(e.trees.size(), static_cast<std::size_t>(e.best_round) + 1);
  const double best = log.validation_score[static_cast<std::size_t>(e.best_round)];
  for (double s : log.validation_score) EXPECT_LE(s, best);
  EXPECT_LT(log.validation_score.size(), 200u);
}

TEST(Train, RejectsBadInputs) {
  const auto x = column_table({{1.0}, {2.0}}, {"x"});
  EXPECT_THROW(train(x, std::vector<int>{1, 1}, stump_params()), ValidationError);
  EXPECT_THROW(train(x, std::vector<int>{0, 2}, stump_params()), ValidationError);
  EXPECT_THROW(train(x, std::vector<int>{0}, stump_params()), ValidationError);
  auto p = stump_params();
  p.eta = 0.0;
  EXPECT_THROW(train(x, std::vector<int>{0, 1}, p), ValidationError);
}

TEST(Train, DeterministicAcrossThreadCounts) {
  const auto d = synthetic(6, 500);
  BoostParams p;
  p.n_rounds = 30;
  p.subsample = 0.7;
  p.seed = 42;
  TrainOptions one, many;
  many.threads = 8;
  EXPECT_EQ(serialize(train(d.x, d.y, p, nullptr, one)), serialize(train(d.x, d.y, p, nullptr, many)));
  auto q = p;
  q.seed = 43;
  EXPECT_NE(serialize(train(d.x, d.y, p)), serialize(train(d.x, d.y, q)));
}

TEST(ModelDocument, RoundTripsExactly) {
  const auto d = synthetic(7, 200);
  BoostParams p;
  p.n_rounds = 10;
  p.scale_pos_weight = ScalePosWeight::balanced_classes();
  const auto e = train(d.x, d.y, p);
  const auto back = deserialize(serialize(e));
  EXPECT_EQ(back, e);
  EXPECT_EQ(serialize(back), serialize(e));
  for (std::size_t r = 0; r < d.x.rows(); ++r)
    EXPECT_EQ(predict(back, d.x.row(r)).margin, predict(e, d.x.row(r)).margin);
}

TEST(ModelDocument, RejectsTruncatedAndForeignVersions) {
  const auto d = synthetic(8, 100);
  BoostParams p;
  p.n_rounds = 3;
  const auto text = serialize(train(d.x, d.y, p));
  EXPECT_THROW(deserialize(text.substr(0, text.size() / 2)), ValidationError);
  auto j = json::parse(text);
  j["schema_version"] = 2;
  EXPECT_THROW(from_json(j), SchemaVersionError);
  j.erase("schema_version");
  EXPECT_THROW(from_json(j), SchemaVersionError);
  j = json::parse(text);
  j["trees"][0]["nodes"][0]["left"] = 0;
  EXPECT_THROW(from_json(j), ValidationError);
}

TEST(Predict, AlignsByName) {
  const auto x = column_table({{1.0, 0.0}, {2.0, 0.0}, {3.0, 0.0}, {4.0, 0.0}}, {"x", "pad"});
  const auto e = train(x, std::vector<int>{0, 0, 1, 1}, stump_params());
  const std::vector<MaybeReal> vals{9.0, 3.5, 1.0};
  const auto pr = predict(e, {"other", "x", "pad"}, vals);
  EXPECT_DOUBLE_EQ(pr.margin, 2.0);
  EXPECT_DOUBLE_EQ(pr.probability, sigmoid(2.0));
  EXPECT_THROW(predict(e, {"pad"}, std::vector<MaybeReal>{1.0}), ValidationError);
}

TEST(Predict, EmptyEnsembleGivesHalf) {
  Ensemble e;
  e.feature_names = {"x"};
  EXPECT_EQ(predict(e, std::vector<MaybeReal>{1.0}).probability, 0.5);
}

TEST(Importance, SumsGainPerFeature) {
  Ensemble e;
  e.feature_names = {"a", "b", "c"};
  Tree t;
  t.nodes = {Node{1, 2, 0, 0.0, false, 0.0, 4.0, 3.0}, Node{3, 4, 1, 0.0, false, 0.0, 2.0, 1.5},
             Node{}, Node{}, Node{}};
  e.trees = {t, t};
  const auto imp = feature_importance_gain(e);
  EXPECT_EQ(imp.at("a"), 6.0);
  EXPECT_EQ(imp.at("b"), 3.0);
  EXPECT_EQ(imp.at("c"), 0.0);
}

TEST(Params, JsonRoundTripAndValidation) {
  BoostParams p;
  p.eta = 0.05;
  p.scale_pos_weight = ScalePosWeight::fixed(3.5);
  p.seed = 123456789012345ULL;
  EXPECT_EQ(BoostParams::from_json(p.to_json()), p);
  EXPECT_THROW(BoostParams::from_json(json{{"subsample", 0.0}}), ValidationError);
  EXPECT_THROW(ScalePosWeight::parse("-1"), ValidationError);
  EXPECT_TRUE(ScalePosWeight::parse("balanced").balanced);
}

}  // namespace
}  // namespace ahfx::gbt
