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

// Exact path-dependent Shapley attributions for boosted tree ensembles, and
// the tabular exports behind beeswarm, bar and waterfall plots.
//
// The value function of a feature subset S is the expectation of the tree
// output when features in S follow x and every other split sends weight to
// both children in proportion to their covers. Attributions are in log-odds.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ahfx/boosted_trees.hpp"
#include "ahfx/common.hpp"
#include "ahfx/dataio.hpp"

namespace ahfx::shap {

using json = nlohmann::json;

struct Explanation {
  double expected_value = 0.0;  // phi_0
  std::vector<double> phi;      // per ensemble feature
  double margin = 0.0;          // f(x)
};

// Node covers used to weight absent features: either the training covers
// stored in the model, or counts of background rows reaching each node.
using TreeCovers = std::vector<double>;

inline std::vector<TreeCovers> model_covers(const gbt::Ensemble& e) {
  std::vector<TreeCovers> out;
  for (const auto& t : e.trees) {
    TreeCovers c(t.nodes.size());
    for (std::size_t i = 0; i < t.nodes.size(); ++i) c[i] = t.nodes[i].cover;
    if (!t.nodes.front().is_leaf() && !(c.front() > 0.0))
      throw ValidationError("ensemble has no node covers; use a background table");
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<TreeCovers> background_covers(const gbt::Ensemble& e,
                                                 const FeatureTable& background) {
  if (background.rows() == 0) throw ValidationError("background table is empty");
  const auto view = background.select_columns(e.feature_names);
  std::vector<TreeCovers> out;
  for (const auto& t : e.trees) {
    TreeCovers c(t.nodes.size(), 0.0);
    for (std::size_t r = 0; r < view.rows(); ++r) {
      const auto row = view.row(r);
      int n = 0;
      c[0] += 1.0;
      while (!t.nodes[n].is_leaf()) {
        const auto& node = t.nodes[n];
        const auto& v = row[node.feature];
        n = !v ? (node.default_left ? node.left : node.right)
               : (*v < node.threshold ? node.left : node.right);
        c[n] += 1.0;
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

// Share of a node's weight sent to `child`. Equal shares when neither child
// has cover.
inline double child_fraction(const gbt::Tree& t, const TreeCovers& c, int node, int child) {
  const auto& n = t.nodes[node];
  const double total = c[n.left] + c[n.right];
  if (!(total > 0.0)) return 0.5;
  return c[child] / total;
}

// Cover-weighted mean leaf value of one tree.
inline double tree_expected_value(const gbt::Tree& t, const TreeCovers& c, int node = 0) {
  const auto& n = t.nodes[node];
  if (n.is_leaf()) return n.value;
  return child_fraction(t, c, node, n.left) * tree_expected_value(t, c, n.left) +
         child_fraction(t, c, node, n.right) * tree_expected_value(t, c, n.right);
}

namespace detail {

struct PathElement {
  int feature = -1;
  double zero_fraction = 0.0;
  double one_fraction = 0.0;
  double pweight = 0.0;
};

using Path = std::vector<PathElement>;

inline void extend_path(Path& path, int depth, double zero_fraction, double one_fraction,
                        int feature) {
  path[depth] = {feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
  for (int i = depth - 1; i >= 0; --i) {
    path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) / (depth + 1.0);
    path[i].pweight = zero_fraction * path[i].pweight * (depth - i) / (depth + 1.0);
  }
}

inline void unwind_path(Path& path, int depth, int index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next = path[depth].pweight;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0.0) {
      const double tmp = path[i].pweight;
      path[i].pweight = next * (depth + 1) / ((i + 1) * one);
      next = tmp - path[i].pweight * zero * (depth - i) / (depth + 1.0);
    } else {
      path[i].pweight = path[i].pweight * (depth + 1) / (zero * (depth - i));
    }
  }
  for (int i = index; i < depth; ++i) {
    path[i].feature = path[i + 1].feature;
    path[i].zero_fraction = path[i + 1].zero_fraction;
    path[i].one_fraction = path[i + 1].one_fraction;
  }
}

// Total permutation weight if element `index` were unwound.
inline double unwound_path_sum(const Path& path, int depth, int index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next = path[depth].pweight;
  double total = 0.0;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0.0) {
      const double tmp = next * (depth + 1) / ((i + 1) * one);
      total += tmp;
      next = path[i].pweight - tmp * zero * (depth - i) / (depth + 1.0);
    } else if (zero != 0.0) {
      total += path[i].pweight / zero / ((depth - i) / (depth + 1.0));
    }
  }
  return total;
}

class TreeExplainer {
 public:
  TreeExplainer(const gbt::Tree& t, const TreeCovers& c, std::span<const MaybeReal> row,
                std::vector<double>& phi)
      : t_(t), c_(c), row_(row), phi_(phi) {}

  void run() { recurse(0, Path{}, 0, 1.0, 1.0, -1); }

 private:
  // `parent` holds path elements [0, depth); every level extends its own copy.
  void recurse(int node, const Path& parent, int depth, double zero_fraction,
               double one_fraction, int feature) {
    Path path(parent.begin(), parent.begin() + depth);
    path.resize(static_cast<std::size_t>(depth) + 1);
    extend_path(path, depth, zero_fraction, one_fraction, feature);

    const auto& n = t_.nodes[node];
    if (n.is_leaf()) {
      for (int i = 1; i <= depth; ++i) {
        const double w = unwound_path_sum(path, depth, i);
        const auto& el = path[i];
        phi_[el.feature] += w * (el.one_fraction - el.zero_fraction) * n.value;
      }
      return;
    }

    const auto& v = row_[n.feature];
    const int hot = !v ? (n.default_left ? n.left : n.right)
                       : (*v < n.threshold ? n.left : n.right);
    const int cold = hot == n.left ? n.right : n.left;
    double incoming_zero = 1.0, incoming_one = 1.0;

    // A feature already on the path is unwound and re-extended here.
    int d = depth;
    for (int index = 1; index <= depth; ++index) {
      if (path[index].feature != n.feature) continue;
      incoming_zero = path[index].zero_fraction;
      incoming_one = path[index].one_fraction;
      unwind_path(path, d, index);
      --d;
      break;
    }
    recurse(hot, path, d + 1, child_fraction(t_, c_, node, hot) * incoming_zero, incoming_one,
            n.feature);
    recurse(cold, path, d + 1, child_fraction(t_, c_, node, cold) * incoming_zero, 0.0,
            n.feature);
  }

  const gbt::Tree& t_;
  const TreeCovers& c_;
  std::span<const MaybeReal> row_;
  std::vector<double>& phi_;
};

}  // namespace detail

// Attributions of a single tree, added into `phi`.
inline void tree_shap(const gbt::Tree& t, const TreeCovers& covers,
                      std::span<const MaybeReal> row, std::vector<double>& phi) {
  detail::TreeExplainer(t, covers, row, phi).run();
}

// `row` is aligned to the ensemble's feature order.
inline Explanation shap_values(const gbt::Ensemble& e, const std::vector<TreeCovers>& covers,
                               std::span<const MaybeReal> row) {
  if (covers.size() != e.trees.size()) throw ValidationError("covers do not match ensemble");
  Explanation out;
  out.phi.assign(e.feature_names.size(), 0.0);
  out.expected_value = e.base_score;
  for (std::size_t t = 0; t < e.trees.size(); ++t) {
    out.expected_value += tree_expected_value(e.trees[t], covers[t]);
    tree_shap(e.trees[t], covers[t], row, out.phi);
  }
  out.margin = e.margin(row);
  return out;
}

inline Explanation shap_values(const gbt::Ensemble& e, std::span<const MaybeReal> row) {
  return shap_values(e, model_covers(e), row);
}

// ---------------------------------------------------------------------------
// Cohort summary: bar values and beeswarm rows

struct BeeswarmRow {
  std::string scan_id;
  std::string feature;
  double phi = 0.0;
  MaybeReal value;  // nullopt: missing marker
};

struct ShapSummary {
  std::vector<std::string> features;  // sorted by bar value, descending
  std::vector<double> bar;            // mean |phi|, aligned with `features`
  std::vector<BeeswarmRow> beeswarm;  // feature-major in `features` order
  std::vector<double> expected_values;
};

inline ShapSummary shap_summary(const gbt::Ensemble& e, const std::vector<TreeCovers>& covers,
                                const FeatureTable& x, unsigned threads = 1) {
  if (x.rows() == 0) throw ValidationError("shap_summary needs at least one row");
  const auto view = x.select_columns(e.feature_names);
  std::vector<Explanation> ex(view.rows());
  parallel_for(view.rows(), threads,
               [&](std::size_t r) { ex[r] = shap_values(e, covers, view.row(r)); });

  const std::size_t nf = e.feature_names.size();
  std::vector<double> bar(nf, 0.0);
  for (std::size_t f = 0; f < nf; ++f) {
    for (const auto& x_r : ex) bar[f] += std::abs(x_r.phi[f]);
    bar[f] /= static_cast<double>(ex.size());
  }
  std::vector<std::size_t> order(nf);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return bar[a] > bar[b]; });

  ShapSummary s;
  for (auto f : order) {
    s.features.push_back(e.feature_names[f]);
    s.bar.push_back(bar[f]);
    for (std::size_t r = 0; r < view.rows(); ++r)
      s.beeswarm.push_back({view.scan_ids()[r], e.feature_names[f], ex[r].phi[f], view.at(r, f)});
  }
  for (const auto& x_r : ex) s.expected_values.push_back(x_r.expected_value);
  return s;
}

inline csv::Table bar_table(const ShapSummary& s) {
  csv::Table t;
  t.header = {"feature", "mean_abs_shap"};
  for (std::size_t i = 0; i < s.features.size(); ++i)
    t.rows.push_back({s.features[i], format_real(s.bar[i])});
  return t;
}

inline csv::Table beeswarm_table(const ShapSummary& s) {
  csv::Table t;
  t.header = {"scan_id", "feature", "shap", "value", "missing"};
  for (const auto& r : s.beeswarm)
    t.rows.push_back({r.scan_id, r.feature, format_real(r.phi),
                      r.value ? format_real(*r.value) : std::string(), r.value ? "0" : "1"});
  return t;
}

// ---------------------------------------------------------------------------
// Waterfall for a single prediction

struct WaterfallRecord {
  std::string feature;
  double phi = 0.0;
  MaybeReal value;
  double start = 0.0;  // running total before this feature
  double end = 0.0;    // running total after it
};

struct Waterfall {
  double expected_value = 0.0;  // mean log odds
  double margin = 0.0;          // f(x)
  std::vector<WaterfallRecord> records;  // by |phi| descending
};

inline Waterfall waterfall_export(const gbt::Ensemble& e, const std::vector<TreeCovers>& covers,
                                  std::span<const MaybeReal> row) {
  const auto ex = shap_values(e, covers, row);
  std::vector<std::size_t> order(ex.phi.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(ex.phi[a]) > std::abs(ex.phi[b]);
  });
  Waterfall w;
  w.expected_value = ex.expected_value;
  w.margin = ex.margin;
  double running = ex.expected_value;
  for (auto f : order) {
    WaterfallRecord r{e.feature_names[f], ex.phi[f], row[f], running, running + ex.phi[f]};
    running = r.end;
    w.records.push_back(std::move(r));
  }
  // Pin the last total to f(x); the summation order above differs from the
  // margin's by at most rounding.
  if (std::abs(running - ex.margin) > 1e-9)
    throw std::logic_error("waterfall does not reach the model margin");
  if (!w.records.empty()) w.records.back().end = ex.margin;
  return w;
}

inline json to_json(const Waterfall& w, const std::string& scan_id) {
  json records = json::array();
  for (const auto& r : w.records)
    records.push_back({{"feature", r.feature},
                       {"shap", r.phi},
                       {"value", r.value ? json(*r.value) : json(nullptr)},
                       {"start", r.start},
                       {"end", r.end}});
  return json{{"scan_id", scan_id},
              {"expected_value", w.expected_value},
              {"expected_value_label", "mean log odds"},
              {"f_x", w.margin},
              {"probability", sigmoid(w.margin)},
              {"records", std::move(records)}};
}

}  // namespace ahfx::shap
