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

// Second-order gradient boosted decision trees for binary logistic loss.
//
// Trees are grown level by level with an exact greedy split search over the
// presorted present values of every feature. Rows with a missing value are
// sent to whichever side gives the larger gain and that side is recorded as
// the node's default direction. Leaf weights carry L1 (soft threshold) and
// L2 regularisation and may be clipped by max_delta_step. Leaves store the
// shrunken weight, so a margin is base_score plus the sum of leaf values.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "ahfx/common.hpp"
#include "ahfx/dataio.hpp"

namespace ahfx::gbt {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

class SchemaVersionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Weight of positive rows: a fixed factor or N_neg / N_pos of the training
// rows ("balanced").
struct ScalePosWeight {
  bool balanced = false;
  double value = 1.0;

  static ScalePosWeight fixed(double v) { return {false, v}; }
  static ScalePosWeight balanced_classes() { return {true, 1.0}; }

  std::string to_string() const { return balanced ? "balanced" : format_real(value); }
  static ScalePosWeight parse(const std::string& s) {
    if (s == "balanced") return balanced_classes();
    auto v = parse_real(s);
    if (!v || !(*v > 0.0)) throw ValidationError("scale_pos_weight must be > 0 or 'balanced'");
    return fixed(*v);
  }
  bool operator==(const ScalePosWeight&) const = default;
};

struct BoostParams {
  double eta = 0.3;
  double gamma = 0.0;
  int max_depth = 6;
  double min_child_weight = 1.0;
  double max_delta_step = 0.0;  // 0 disables clipping
  double subsample = 1.0;
  double lambda = 1.0;
  double alpha = 0.0;
  ScalePosWeight scale_pos_weight;
  int n_rounds = 100;
  int early_stopping_rounds = 10;  // 0 disables; needs a validation set
  std::uint64_t seed = 0;
  double base_score = 0.0;  // log-odds

  void validate() const {
    if (!(eta > 0.0 && eta <= 1.0)) throw ValidationError("eta must lie in (0, 1]");
    if (!(subsample > 0.0 && subsample <= 1.0)) throw ValidationError("subsample must lie in (0, 1]");
    if (max_depth < 1) throw ValidationError("max_depth must be >= 1");
    if (!(gamma >= 0.0) || !(min_child_weight >= 0.0) || !(max_delta_step >= 0.0) ||
        !(lambda >= 0.0) || !(alpha >= 0.0))
      throw ValidationError("regularisers must be >= 0");
    if (n_rounds < 0 || early_stopping_rounds < 0)
      throw ValidationError("round counts must be >= 0");
    if (!scale_pos_weight.balanced && !(scale_pos_weight.value > 0.0))
      throw ValidationError("scale_pos_weight must be > 0");
  }

  json to_json() const {
    return json{{"eta", eta},
                {"gamma", gamma},
                {"max_depth", max_depth},
                {"min_child_weight", min_child_weight},
                {"max_delta_step", max_delta_step},
                {"subsample", subsample},
                {"lambda", lambda},
                {"alpha", alpha},
                {"scale_pos_weight", scale_pos_weight.to_string()},
                {"n_rounds", n_rounds},
                {"early_stopping_rounds", early_stopping_rounds},
                {"seed", seed},
                {"base_score", base_score}};
  }

  // Missing keys keep their current value.
  void update_from_json(const json& j) {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("eta", eta);
    get("gamma", gamma);
    get("max_depth", max_depth);
    get("min_child_weight", min_child_weight);
    get("max_delta_step", max_delta_step);
    get("subsample", subsample);
    get("lambda", lambda);
    get("alpha", alpha);
    if (j.contains("scale_pos_weight")) {
      const auto& s = j.at("scale_pos_weight");
      scale_pos_weight = s.is_string() ? ScalePosWeight::parse(s.get<std::string>())
                                       : ScalePosWeight::fixed(s.get<double>());
    }
    get("n_rounds", n_rounds);
    get("early_stopping_rounds", early_stopping_rounds);
    get("seed", seed);
    get("base_score", base_score);
  }

  static BoostParams from_json(const json& j) {
    BoostParams p;
    p.update_from_json(j);
    p.validate();
    return p;
  }

  bool operator==(const BoostParams&) const = default;
};

// Flat node. A leaf has left == right == -1.
struct Node {
  int left = -1;
  int right = -1;
  int feature = -1;
  double threshold = 0.0;  // value < threshold goes left
  bool default_left = false;
  double value = 0.0;  // leaf: shrunken weight (log-odds increment)
  double cover = 0.0;  // hessian sum of the training rows reaching the node
  double gain = 0.0;   // split: loss reduction before the gamma penalty

  bool is_leaf() const { return left < 0; }
  bool operator==(const Node&) const = default;
};

struct Tree {
  std::vector<Node> nodes;  // nodes[0] is the root

  // Index of the leaf reached by `row` (indexed by ensemble feature).
  int leaf_index(std::span<const MaybeReal> row) const {
    int n = 0;
    while (!nodes[n].is_leaf()) {
      const Node& node = nodes[n];
      const MaybeReal& v = row[node.feature];
      if (!v) n = node.default_left ? node.left : node.right;
      else n = *v < node.threshold ? node.left : node.right;
    }
    return n;
  }
  double value(std::span<const MaybeReal> row) const { return nodes[leaf_index(row)].value; }

  int depth(int n = 0) const {
    if (nodes[n].is_leaf()) return 0;
    return 1 + std::max(depth(nodes[n].left), depth(nodes[n].right));
  }
  bool operator==(const Tree&) const = default;
};

struct Ensemble {
  std::vector<Tree> trees;
  double base_score = 0.0;
  std::vector<std::string> feature_names;
  BoostParams params;
  int best_round = -1;  // last kept round under early stopping, else -1

  double margin(std::span<const MaybeReal> row) const {
    double m = base_score;
    for (const auto& t : trees) m += t.value(row);
    return m;
  }
  bool operator==(const Ensemble&) const = default;
};

// ---------------------------------------------------------------------------
// Leaf objective

inline double soft_threshold(double g, double alpha) {
  if (g > alpha) return g - alpha;
  if (g < -alpha) return g + alpha;
  return 0.0;
}

// Optimal leaf weight for gradient sum G and hessian sum H.
inline double leaf_weight(double G, double H, const BoostParams& p) {
  const double denom = H + p.lambda;
  if (!(denom > 0.0)) return 0.0;
  double w = -soft_threshold(G, p.alpha) / denom;
  if (p.max_delta_step > 0.0) w = std::clamp(w, -p.max_delta_step, p.max_delta_step);
  return w;
}

// Twice the objective reduction achieved by the optimal leaf weight:
// T(G)^2 / (H + lambda) without clipping, the general form otherwise.
inline double leaf_score(double G, double H, const BoostParams& p) {
  const double denom = H + p.lambda;
  if (!(denom > 0.0)) return 0.0;
  if (p.max_delta_step <= 0.0) {
    const double t = soft_threshold(G, p.alpha);
    return t * t / denom;
  }
  const double w = leaf_weight(G, H, p);
  return -(2.0 * (G * w + p.alpha * std::abs(w)) + denom * w * w);
}

// Loss reduction of a split, before subtracting gamma.
inline double split_gain(double GL, double HL, double GR, double HR, const BoostParams& p) {
  return 0.5 * (leaf_score(GL, HL, p) + leaf_score(GR, HR, p) - leaf_score(GL + GR, HL + HR, p));
}

// ---------------------------------------------------------------------------
// Training

// Column-major view of a feature table for training.
struct Matrix {
  std::size_t n_rows = 0;
  std::vector<std::string> names;
  std::vector<std::vector<MaybeReal>> columns;

  static Matrix from_table(const FeatureTable& t) {
    Matrix m;
    m.n_rows = t.rows();
    m.names = t.names();
    m.columns.assign(t.cols(), std::vector<MaybeReal>(t.rows()));
    for (std::size_t r = 0; r < t.rows(); ++r)
      for (std::size_t c = 0; c < t.cols(); ++c) m.columns[c][r] = t.at(r, c);
    return m;
  }
  std::vector<MaybeReal> row(std::size_t r) const {
    std::vector<MaybeReal> out(columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) out[c] = columns[c][r];
    return out;
  }
};

// Held-out rows for early stopping. `score` maps probabilities of the
// validation rows to a quality where larger is better (e.g. AUROC).
struct Validation {
  const FeatureTable* features = nullptr;
  std::function<double(std::span<const double>)> score;
};

struct TrainOptions {
  bool learn_missing_direction = true;  // false: missing values always go right
  unsigned threads = 1;
};

struct TrainLog {
  std::vector<double> train_logloss;     // weighted, after each round
  std::vector<double> validation_score;  // after each round, when validating
};

inline double weighted_logloss(std::span<const double> margins, std::span<const int> labels,
                               double pos_weight) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < margins.size(); ++i) {
    const double w = labels[i] ? pos_weight : 1.0;
    // log(1 + e^-m) for positives, log(1 + e^m) for negatives, overflow-safe.
    const double m = labels[i] ? margins[i] : -margins[i];
    const double loss = m > 0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
    num += w * loss;
    den += w;
  }
  return num / den;
}

namespace detail {

struct GradPair {
  double g = 0.0;
  double h = 0.0;
};

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
  bool default_left = false;
  bool valid() const { return feature >= 0; }
};

// Uniform double in [0, 1) from the top 53 bits; independent of the
// standard library's distribution implementations.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const std::vector<std::vector<std::uint32_t>>& sorted,
              const std::vector<std::vector<std::uint32_t>>& missing, const BoostParams& p,
              const TrainOptions& opt)
      : x_(x), sorted_(sorted), missing_(missing), p_(p), opt_(opt) {}

  Tree build(const std::vector<GradPair>& gp, const std::vector<std::uint8_t>& in_sample) {
    const std::size_t n = x_.n_rows;
    Tree tree;
    position_.assign(n, -1);
    GradPair root;
    std::size_t root_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!in_sample[i]) continue;
      position_[i] = 0;
      root.g += gp[i].g;
      root.h += gp[i].h;
      ++root_count;
    }
    tree.nodes.push_back(Node{});
    totals_ = {root};
    counts_ = {root_count};

    std::vector<int> frontier{0};
    for (int depth = 0; depth < p_.max_depth && !frontier.empty(); ++depth) {
      auto best = find_splits(frontier, gp);
      std::vector<int> next;
      std::map<int, std::pair<int, int>> children;
      for (std::size_t f = 0; f < frontier.size(); ++f) {
        const int nid = frontier[f];
        const auto& s = best[f];
        if (!s.valid()) continue;
        Node& node = tree.nodes[nid];
        node.feature = s.feature;
        node.threshold = s.threshold;
        node.default_left = s.default_left;
        node.gain = s.gain;
        const int l = static_cast<int>(tree.nodes.size());
        tree.nodes[nid].left = l;
        tree.nodes[nid].right = l + 1;
        tree.nodes.push_back(Node{});
        tree.nodes.push_back(Node{});
        totals_.resize(tree.nodes.size());
        counts_.resize(tree.nodes.size());
        children[nid] = {l, l + 1};
        next.push_back(l);
        next.push_back(l + 1);
      }
      if (children.empty()) break;
      // Route sampled rows and accumulate child totals in row order.
      for (std::size_t i = 0; i < n; ++i) {
        const int nid = position_[i];
        if (nid < 0) continue;
        auto it = children.find(nid);
        if (it == children.end()) continue;
        const Node& node = tree.nodes[nid];
        const MaybeReal& v = x_.columns[node.feature][i];
        const bool go_left = v ? (*v < node.threshold) : node.default_left;
        const int child = go_left ? it->second.first : it->second.second;
        position_[i] = child;
        totals_[child].g += gp[i].g;
        totals_[child].h += gp[i].h;
        ++counts_[child];
      }
      frontier = std::move(next);
    }
    for (std::size_t nid = 0; nid < tree.nodes.size(); ++nid) {
      Node& node = tree.nodes[nid];
      if (node.is_leaf()) {
        node.cover = totals_[nid].h;
        node.value = p_.eta * leaf_weight(totals_[nid].g, totals_[nid].h, p_);
      }
    }
    fix_cover(tree, 0);
    return tree;
  }

 private:
  // Parent cover is the exact sum of its children's covers.
  static double fix_cover(Tree& t, int n) {
    Node& node = t.nodes[n];
    if (node.is_leaf()) return node.cover;
    const double c = fix_cover(t, node.left) + fix_cover(t, node.right);
    t.nodes[n].cover = c;
    return c;
  }

  std::vector<SplitCandidate> find_splits(const std::vector<int>& frontier,
                                          const std::vector<GradPair>& gp) const {
    const std::size_t n_features = x_.columns.size();
    // slot[node id] -> frontier position
    std::vector<int> slot(totals_.size(), -1);
    for (std::size_t f = 0; f < frontier.size(); ++f) slot[frontier[f]] = static_cast<int>(f);

    std::vector<std::vector<SplitCandidate>> per_feature(n_features);
    parallel_for(n_features, opt_.threads, [&](std::size_t feat) {
      per_feature[feat] = scan_feature(static_cast<int>(feat), frontier, slot, gp);
    });

    // Lowest feature index wins ties; within a feature the scan keeps the
    // lowest threshold.
    std::vector<SplitCandidate> best(frontier.size());
    for (std::size_t feat = 0; feat < n_features; ++feat)
      for (std::size_t f = 0; f < frontier.size(); ++f) {
        const auto& c = per_feature[feat][f];
        if (c.valid() && (!best[f].valid() || c.gain > best[f].gain)) best[f] = c;
      }
    return best;
  }

  std::vector<SplitCandidate> scan_feature(int feat, const std::vector<int>& frontier,
                                           const std::vector<int>& slot,
                                           const std::vector<GradPair>& gp) const {
    const std::size_t k = frontier.size();
    std::vector<GradPair> miss(k);
    std::vector<std::size_t> miss_count(k, 0);
    for (auto i : missing_[feat]) {
      const int nid = position_[i];
      if (nid < 0 || slot[nid] < 0) continue;
      const int s = slot[nid];
      miss[s].g += gp[i].g;
      miss[s].h += gp[i].h;
      ++miss_count[s];
    }

    struct Acc {
      GradPair left;
      std::size_t count = 0;
      double last = 0.0;
      bool started = false;
    };
    std::vector<Acc> acc(k);
    std::vector<SplitCandidate> best(k);
    const auto& col = x_.columns[feat];

    auto consider = [&](std::size_t s, double threshold) {
      const int nid = frontier[s];
      const GradPair& total = totals_[nid];
      const std::size_t total_count = counts_[nid];
      // Missing rows to the right, then to the left.
      for (int dir = 0; dir < 2; ++dir) {
        const bool default_left = dir == 1;
        if (default_left && (miss_count[s] == 0 || !opt_.learn_missing_direction)) continue;
        GradPair L = acc[s].left;
        std::size_t lc = acc[s].count;
        if (default_left) {
          L.g += miss[s].g;
          L.h += miss[s].h;
          lc += miss_count[s];
        }
        const GradPair R{total.g - L.g, total.h - L.h};
        const std::size_t rc = total_count - lc;
        if (lc == 0 || rc == 0) continue;
        if (L.h < p_.min_child_weight || R.h < p_.min_child_weight) continue;
        const double gain = split_gain(L.g, L.h, R.g, R.h, p_);
        if (!(gain > p_.gamma)) continue;
        if (!best[s].valid() || gain > best[s].gain)
          best[s] = SplitCandidate{gain, feat, threshold, default_left};
      }
    };

    for (auto i : sorted_[feat]) {
      const int nid = position_[i];
      if (nid < 0 || slot[nid] < 0) continue;
      const auto s = static_cast<std::size_t>(slot[nid]);
      const double v = *col[i];
      Acc& a = acc[s];
      if (a.started && v > a.last) consider(s, a.last + (v - a.last) / 2.0);
      a.left.g += gp[i].g;
      a.left.h += gp[i].h;
      ++a.count;
      a.last = v;
      a.started = true;
    }
    return best;
  }

  const Matrix& x_;
  const std::vector<std::vector<std::uint32_t>>& sorted_;
  const std::vector<std::vector<std::uint32_t>>& missing_;
  const BoostParams& p_;
  const TrainOptions& opt_;
  std::vector<int> position_;
  std::vector<GradPair> totals_;
  std::vector<std::size_t> counts_;
};

}  // namespace detail

inline double balanced_pos_weight(std::span<const int> labels) {
  std::size_t pos = 0;
  for (int y : labels) pos += y == 1;
  const std::size_t neg = labels.size() - pos;
  return static_cast<double>(neg) / static_cast<double>(pos);
}

inline Ensemble train(const FeatureTable& features, std::span<const int> labels,
                      const BoostParams& params, const Validation* validation = nullptr,
                      const TrainOptions& options = {}, TrainLog* log = nullptr) {
  params.validate();
  if (features.rows() == 0) throw ValidationError("cannot train on an empty feature table");
  if (features.cols() == 0) throw ValidationError("cannot train without features");
  if (labels.size() != features.rows())
    throw ValidationError("label count does not match feature rows");
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError("labels must be 0 or 1");
    pos += y == 1;
  }
  if (pos == 0 || pos == labels.size())
    throw ValidationError("training labels contain a single class");

  const Matrix x = Matrix::from_table(features);
  const std::size_t n = x.n_rows;
  const double pos_weight =
      params.scale_pos_weight.balanced ? balanced_pos_weight(labels) : params.scale_pos_weight.value;

  std::vector<std::vector<std::uint32_t>> sorted(x.columns.size()), missing(x.columns.size());
  for (std::size_t c = 0; c < x.columns.size(); ++c) {
    const auto& col = x.columns[c];
    for (std::uint32_t i = 0; i < n; ++i) (col[i] ? sorted[c] : missing[c]).push_back(i);
    std::stable_sort(sorted[c].begin(), sorted[c].end(),
                     [&](std::uint32_t a, std::uint32_t b) { return *col[a] < *col[b]; });
  }

  Ensemble model;
  model.base_score = params.base_score;
  model.feature_names = x.names;
  model.params = params;

  std::vector<double> margin(n, params.base_score);
  std::vector<detail::GradPair> gp(n);
  std::vector<std::uint8_t> in_sample(n, 1);
  std::mt19937_64 rng(params.seed);
  detail::TreeBuilder builder(x, sorted, missing, params, options);

  std::optional<Matrix> vx;
  std::vector<double> vmargin;
  if (validation) {
    if (!validation->features || !validation->score)
      throw ValidationError("validation set needs features and a scorer");
    vx = Matrix::from_table(validation->features->select_columns(x.names));
    vmargin.assign(vx->n_rows, params.base_score);
  }
  double best_score = -std::numeric_limits<double>::infinity();
  int best_round = -1;
  std::vector<MaybeReal> row_buf;

  for (int round = 0; round < params.n_rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(margin[i]);
      const double w = labels[i] ? pos_weight : 1.0;
      gp[i] = {w * (p - labels[i]), w * std::max(p * (1.0 - p), 1e-16)};
    }
    if (params.subsample < 1.0)
      for (std::size_t i = 0; i < n; ++i)
        in_sample[i] = detail::unit_uniform(rng) < params.subsample;

    Tree tree = builder.build(gp, in_sample);
    for (std::size_t i = 0; i < n; ++i) {
      row_buf = x.row(i);
      margin[i] += tree.value(row_buf);
    }
    model.trees.push_back(std::move(tree));
    if (log) log->train_logloss.push_back(weighted_logloss(margin, labels, pos_weight));

    if (vx) {
      std::vector<double> prob(vx->n_rows);
      for (std::size_t i = 0; i < vx->n_rows; ++i) {
        row_buf = vx->row(i);
        vmargin[i] += model.trees.back().value(row_buf);
        prob[i] = sigmoid(vmargin[i]);
      }
      const double s = validation->score(prob);
      if (log) log->validation_score.push_back(s);
      if (s > best_score) {
        best_score = s;
        best_round = round;
      } else if (params.early_stopping_rounds > 0 &&
                 round - best_round >= params.early_stopping_rounds) {
        break;
      }
    }
  }
  if (vx && params.early_stopping_rounds > 0 && best_round >= 0) {
    model.trees.resize(static_cast<std::size_t>(best_round) + 1);
    model.best_round = best_round;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Prediction

struct Prediction {
  double margin = 0.0;
  double probability = 0.5;
};

// Aligns `values` (named by `names`) to the ensemble's feature order. Names
// the ensemble does not use are ignored.
inline std::vector<MaybeReal> align_row(const Ensemble& e, const std::vector<std::string>& names,
                                        std::span<const MaybeReal> values) {
  std::vector<MaybeReal> row(e.feature_names.size());
  for (std::size_t f = 0; f < e.feature_names.size(); ++f) {
    auto it = std::find(names.begin(), names.end(), e.feature_names[f]);
    if (it == names.end())
      throw ValidationError("input lacks model feature '" + e.feature_names[f] + "'");
    row[f] = values[static_cast<std::size_t>(it - names.begin())];
  }
  return row;
}

inline Prediction predict(const Ensemble& e, std::span<const MaybeReal> aligned_row) {
  const double m = e.margin(aligned_row);
  return {m, sigmoid(m)};
}

inline Prediction predict(const Ensemble& e, const std::vector<std::string>& names,
                          std::span<const MaybeReal> values) {
  const auto row = align_row(e, names, values);
  return predict(e, row);
}

// Predictions for every row of a table, in row order.
inline std::vector<Prediction> predict_table(const Ensemble& e, const FeatureTable& t) {
  const auto view = t.select_columns(e.feature_names);
  std::vector<Prediction> out(view.rows());
  for (std::size_t r = 0; r < view.rows(); ++r) out[r] = predict(e, view.row(r));
  return out;
}

// Total realized split gain per ensemble feature.
inline std::map<std::string, double> feature_importance_gain(const Ensemble& e) {
  std::map<std::string, double> out;
  for (const auto& n : e.feature_names) out[n] = 0.0;
  for (const auto& t : e.trees)
    for (const auto& node : t.nodes)
      if (!node.is_leaf()) out[e.feature_names[node.feature]] += node.gain;
  return out;
}

// ---------------------------------------------------------------------------
// Model document

inline json to_json(const Ensemble& e) {
  json trees = json::array();
  for (const auto& t : e.trees) {
    json nodes = json::array();
    for (const auto& n : t.nodes)
      nodes.push_back({{"left", n.left},
                       {"right", n.right},
                       {"feature", n.feature},
                       {"threshold", n.threshold},
                       {"default_left", n.default_left},
                       {"value", n.value},
                       {"cover", n.cover},
                       {"gain", n.gain}});
    trees.push_back({{"nodes", std::move(nodes)}});
  }
  return json{{"schema_version", kSchemaVersion},
              {"params", e.params.to_json()},
              {"base_score", e.base_score},
              {"feature_names", e.feature_names},
              {"best_round", e.best_round},
              {"trees", std::move(trees)}};
}

inline std::string serialize(const Ensemble& e) { return to_json(e).dump(1) + "\n"; }

inline Ensemble from_json(const json& j) {
  if (!j.is_object() || !j.contains("schema_version"))
    throw SchemaVersionError("model document has no schema_version");
  const auto& v = j.at("schema_version");
  if (!v.is_number_integer() || v.get<int>() != kSchemaVersion)
    throw SchemaVersionError("model schema_version " + v.dump() + " is not supported (reader " +
                             std::to_string(kSchemaVersion) + ")");
  try {
    Ensemble e;
    e.params = BoostParams::from_json(j.at("params"));
    e.base_score = j.at("base_score").get<double>();
    e.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    e.best_round = j.value("best_round", -1);
    const int n_features = static_cast<int>(e.feature_names.size());
    for (const auto& jt : j.at("trees")) {
      Tree t;
      for (const auto& jn : jt.at("nodes")) {
        Node n;
        n.left = jn.at("left").get<int>();
        n.right = jn.at("right").get<int>();
        n.feature = jn.at("feature").get<int>();
        n.threshold = jn.at("threshold").get<double>();
        n.default_left = jn.at("default_left").get<bool>();
        n.value = jn.at("value").get<double>();
        n.cover = jn.at("cover").get<double>();
        n.gain = jn.at("gain").get<double>();
        t.nodes.push_back(n);
      }
      const int count = static_cast<int>(t.nodes.size());
      if (count == 0) throw ValidationError("model tree has no nodes");
      for (int i = 0; i < count; ++i) {
        const Node& n = t.nodes[i];
        if ((n.left < 0) != (n.right < 0))
          throw ValidationError("model node " + std::to_string(i) + " has one child");
        if (!n.is_leaf() && (n.left <= i || n.right <= i || n.left >= count ||
                             n.right >= count || n.feature < 0 || n.feature >= n_features))
          throw ValidationError("model node " + std::to_string(i) + " is malformed");
      }
      e.trees.push_back(std::move(t));
    }
    return e;
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("malformed model document: ") + ex.what());
  }
}

inline Ensemble deserialize(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("cannot parse model document: ") + ex.what());
  }
  return from_json(j);
}

inline void save_model(const Ensemble& e, const std::string& path) {
  csv::write_file(path, serialize(e));
}

inline Ensemble load_model(const std::string& path) { return deserialize(csv::read_file(path)); }

}  // namespace ahfx::gbt
