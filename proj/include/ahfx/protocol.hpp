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

// Training protocol: subject-level train/test split, grouped and label
// balanced folds, exhaustive grid search scored by study-level CV AUROC,
// forward feature selection by gain importance, recorded manual pruning,
// study aggregation and latest-study test selection.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ahfx/boosted_trees.hpp"
#include "ahfx/common.hpp"
#include "ahfx/dataio.hpp"
#include "ahfx/evaluation.hpp"

namespace ahfx::protocol {

using json = nlohmann::json;

// Fisher-Yates with an explicitly specified index draw, so the permutation
// for a seed does not depend on the standard library implementation.
template <typename T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do x = rng();
    while (x >= limit);
    std::swap(v[i - 1], v[static_cast<std::size_t>(x % bound)]);
  }
}

struct Split {
  std::vector<std::string> train;  // subjects, manifest order
  std::vector<std::string> test;
};

inline Split split_subjects(const std::vector<std::string>& subjects, double test_fraction,
                            std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ValidationError("test_fraction must lie in (0, 1)");
  if (subjects.size() < 2) throw ValidationError("need at least 2 subjects to split");
  const auto n = static_cast<long long>(subjects.size());
  const long long n_test =
      std::clamp(std::llround(static_cast<double>(n) * test_fraction), 1LL, n - 1);
  std::vector<std::size_t> order(subjects.size());
  std::iota(order.begin(), order.end(), 0);
  seeded_shuffle(order, seed);
  std::vector<std::uint8_t> is_test(subjects.size(), 0);
  for (long long i = 0; i < n_test; ++i) is_test[order[static_cast<std::size_t>(i)]] = 1;
  Split s;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    (is_test[i] ? s.test : s.train).push_back(subjects[i]);
  return s;
}

inline Split split_cohort(const CohortManifest& manifest, double test_fraction, std::uint64_t seed) {
  return split_subjects(manifest.subjects(), test_fraction, seed);
}

// Train and test partition the subject list exactly.
inline void check_split(const Split& s, const std::vector<std::string>& subjects) {
  std::set<std::string> seen;
  for (const auto* side : {&s.train, &s.test})
    for (const auto& id : *side)
      if (!seen.insert(id).second) throw ValidationError("subject '" + id + "' is on both sides of the split");
  if (seen != std::set<std::string>(subjects.begin(), subjects.end()))
    throw ValidationError("split does not cover the subject list");
}

struct FoldAssignment {
  int k = 0;
  std::map<std::string, int> fold_of;  // subject -> fold

  int fold(const std::string& subject) const {
    auto it = fold_of.find(subject);
    if (it == fold_of.end()) throw ValidationError("subject '" + subject + "' has no fold");
    return it->second;
  }
};

// Subjects are shuffled, then positives are dealt round-robin, then the
// negatives continue the same deal.
inline FoldAssignment make_folds(const std::vector<std::string>& subjects,
                                 const std::map<std::string, int>& subject_label, int k,
                                 std::uint64_t seed) {
  if (k < 2) throw ValidationError("fold count must be >= 2");
  if (static_cast<std::size_t>(k) > subjects.size())
    throw ValidationError("fold count exceeds subject count");
  std::vector<std::string> order = subjects;
  seeded_shuffle(order, seed);
  FoldAssignment fa;
  fa.k = k;
  int next = 0;
  for (int pass = 1; pass >= 0; --pass)
    for (const auto& s : order) {
      auto it = subject_label.find(s);
      const int y = it == subject_label.end() ? 0 : it->second;
      if (y != pass) continue;
      fa.fold_of[s] = next;
      next = (next + 1) % k;
    }
  return fa;
}

// ---------------------------------------------------------------------------
// Scan-level training data joined with study labels

struct CvData {
  FeatureTable features;             // one row per scan
  std::vector<int> labels;           // study label of each scan
  std::vector<std::string> study;    // study of each scan
  std::vector<std::string> subject;  // subject of each scan
};

// Scans of `subjects` that have a feature row and a labelled study, in
// manifest order.
inline CvData build_cv_data(const CohortManifest& manifest, const FeatureTable& features,
                            const StudyLabels& labels, const std::vector<std::string>& subjects) {
  const std::set<std::string> wanted(subjects.begin(), subjects.end());
  const auto lab = labels.as_map();
  CvData d;
  d.features = FeatureTable(features.names());
  for (const auto& r : manifest.rows()) {
    if (!wanted.count(r.subject_id)) continue;
    auto l = lab.find(r.study_id);
    auto row = features.find_row(r.scan_id);
    if (l == lab.end() || !row) continue;
    d.features.add_row(r.scan_id, features.row(*row));
    d.labels.push_back(l->second);
    d.study.push_back(r.study_id);
    d.subject.push_back(r.subject_id);
  }
  return d;
}

inline CvData subset(const CvData& d, const std::vector<std::size_t>& rows) {
  CvData out;
  out.features = FeatureTable(d.features.names());
  for (auto r : rows) {
    out.features.add_row(d.features.scan_ids()[r], d.features.row(r));
    out.labels.push_back(d.labels[r]);
    out.study.push_back(d.study[r]);
    out.subject.push_back(d.subject[r]);
  }
  return out;
}

// Mean probability of a study's scans.
inline double aggregate_study(std::span<const double> scan_probabilities) {
  if (scan_probabilities.empty()) throw ValidationError("study has no scan predictions");
  double sum = 0.0;
  for (double p : scan_probabilities) sum += p;
  return sum / static_cast<double>(scan_probabilities.size());
}

struct StudyScores {
  std::vector<std::string> study;  // first-appearance order
  std::vector<double> score;
  std::vector<int> label;
};

inline StudyScores aggregate_by_study(std::span<const double> scan_probabilities,
                                      const std::vector<std::string>& scan_study,
                                      std::span<const int> scan_labels) {
  StudyScores out;
  std::unordered_map<std::string, std::size_t> idx;
  std::vector<std::vector<double>> members;
  for (std::size_t i = 0; i < scan_study.size(); ++i) {
    auto [it, inserted] = idx.emplace(scan_study[i], out.study.size());
    if (inserted) {
      out.study.push_back(scan_study[i]);
      out.label.push_back(scan_labels[i]);
      members.emplace_back();
    }
    members[it->second].push_back(scan_probabilities[i]);
  }
  for (const auto& m : members) out.score.push_back(aggregate_study(m));
  return out;
}

// ---------------------------------------------------------------------------
// Grid search

struct GridSpec {
  // Parameter name -> candidates, in listing order. Values are JSON numbers
  // or strings ("balanced", "auto").
  std::vector<std::pair<std::string, std::vector<json>>> params;

  std::size_t size() const {
    std::size_t n = 1;
    for (const auto& [name, values] : params) n *= values.size();
    return n;
  }

  // Combination `index` in row-major order (last parameter fastest).
  std::vector<json> combination(std::size_t index) const {
    std::vector<json> out(params.size());
    for (std::size_t p = params.size(); p-- > 0;) {
      const auto& values = params[p].second;
      out[p] = values[index % values.size()];
      index /= values.size();
    }
    return out;
  }

  json to_json() const {
    json j = json::array();
    for (const auto& [name, values] : params) j.push_back({{"name", name}, {"values", values}});
    return j;
  }
  static GridSpec from_json(const json& j) {
    GridSpec g;
    for (const auto& e : j) g.params.emplace_back(e.at("name").get<std::string>(),
                                                  e.at("values").get<std::vector<json>>());
    g.validate();
    return g;
  }

  void validate() const {
    if (params.empty()) throw ValidationError("grid has no parameters");
    for (const auto& [name, values] : params)
      if (values.empty()) throw ValidationError("grid parameter '" + name + "' has no values");
  }
};

// Search space of the published tuning table.
inline GridSpec default_grid() {
  GridSpec g;
  g.params = {{"eta", {0.05, 0.1, 0.2, 0.3}},
              {"gamma", {0, 1}},
              {"max_depth", {1, 2, 3}},
              {"min_child_weight", {0, 1}},
              {"max_delta_step", {0}},
              {"subsample", {0.5, 1.0}},
              {"lambda", {0, 1}},
              {"alpha", {0, 1, 2, 3, 4, 8}},
              {"tree_method", {"auto"}},
              {"scale_pos_weight", {1, "balanced"}}};
  return g;
}

// Parameter columns selected by the published initial and final tuning.
inline std::vector<std::pair<std::string, json>> published_initial_params() {
  return {{"eta", 0.2},       {"gamma", 0},          {"max_depth", 2},  {"min_child_weight", 1},
          {"max_delta_step", 0}, {"subsample", 0.5}, {"lambda", 0},     {"alpha", 3},
          {"tree_method", "auto"}, {"scale_pos_weight", 1}};
}
inline std::vector<std::pair<std::string, json>> published_final_params() {
  return {{"eta", 0.2},       {"gamma", 0},          {"max_depth", 1},  {"min_child_weight", 0},
          {"max_delta_step", 0}, {"subsample", 1.0}, {"lambda", 0},     {"alpha", 4},
          {"tree_method", "auto"}, {"scale_pos_weight", 1}};
}

// Row-major index of a point, or nullopt when some value is not a candidate.
inline std::optional<std::size_t> grid_index_of(const GridSpec& g,
                                                const std::vector<std::pair<std::string, json>>& point) {
  std::size_t index = 0;
  for (const auto& [name, values] : g.params) {
    auto it = std::find_if(point.begin(), point.end(), [&](const auto& p) { return p.first == name; });
    if (it == point.end()) return std::nullopt;
    auto pos = std::find_if(values.begin(), values.end(), [&](const json& v) {
      if (v.is_number() && it->second.is_number()) return v.get<double>() == it->second.get<double>();
      return v == it->second;
    });
    if (pos == values.end()) return std::nullopt;
    index = index * values.size() + static_cast<std::size_t>(pos - values.begin());
  }
  return index;
}

inline gbt::BoostParams apply_combination(gbt::BoostParams base, const GridSpec& g,
                                          const std::vector<json>& combo) {
  for (std::size_t p = 0; p < g.params.size(); ++p) {
    const auto& name = g.params[p].first;
    if (name == "tree_method") {
      const auto v = combo[p].get<std::string>();
      if (v != "auto" && v != "exact")
        throw ValidationError("tree_method '" + v + "' is not supported (exact only)");
      continue;
    }
    static const std::set<std::string> known = {
        "eta",    "gamma",  "max_depth", "min_child_weight", "max_delta_step", "subsample",
        "lambda", "alpha",  "scale_pos_weight", "n_rounds", "early_stopping_rounds"};
    if (!known.count(name)) throw ValidationError("unknown grid parameter '" + name + "'");
    base.update_from_json(json{{name, combo[p]}});
  }
  base.validate();
  return base;
}

struct FoldResult {
  double auroc = 0.0;
  int rounds = 0;  // trees kept after early stopping
};

struct CvOptions {
  unsigned threads = 1;
};

// Trains on k-1 folds and scores the held-out fold by study-level AUROC,
// with early stopping against the same held-out fold.
inline FoldResult evaluate_fold(const CvData& data, const FoldAssignment& folds, int fold,
                                const gbt::BoostParams& params) {
  std::vector<std::size_t> tr, va;
  for (std::size_t i = 0; i < data.subject.size(); ++i)
    (folds.fold(data.subject[i]) == fold ? va : tr).push_back(i);
  const CvData train = subset(data, tr);
  const CvData valid = subset(data, va);
  auto study_auroc = [&](std::span<const double> prob) {
    const auto s = aggregate_by_study(prob, valid.study, valid.labels);
    return eval::auroc(s.score, s.label);
  };
  gbt::Validation v{&valid.features, study_auroc};
  const auto model = gbt::train(train.features, train.labels, params, &v);
  std::vector<double> prob;
  for (const auto& p : gbt::predict_table(model, valid.features)) prob.push_back(p.probability);
  return {study_auroc(prob), static_cast<int>(model.trees.size())};
}

struct CvRow {
  std::size_t combination = 0;
  std::vector<FoldResult> folds;
  double mean_auroc = 0.0;
  double mean_rounds = 0.0;
};

struct GridResult {
  gbt::BoostParams best;  // n_rounds set to the mean kept rounds of the best row
  std::size_t best_index = 0;
  std::vector<CvRow> rows;
};

inline GridResult grid_search(const CvData& data, const FoldAssignment& folds, const GridSpec& grid,
                              const gbt::BoostParams& base, const CvOptions& opt = {}) {
  grid.validate();
  const std::size_t n = grid.size();
  const auto k = static_cast<std::size_t>(folds.k);
  std::vector<gbt::BoostParams> params(n);
  for (std::size_t c = 0; c < n; ++c) params[c] = apply_combination(base, grid, grid.combination(c));

  std::vector<FoldResult> results(n * k);
  parallel_for(n * k, opt.threads, [&](std::size_t task) {
    const std::size_t c = task / k;
    try {
      results[task] = evaluate_fold(data, folds, static_cast<int>(task % k), params[c]);
    } catch (const std::exception& e) {
      throw ValidationError("grid combination " + std::to_string(c) + " " +
                            json(grid.combination(c)).dump() + " failed: " + e.what());
    }
  });

  GridResult g;
  double best = -1.0;
  for (std::size_t c = 0; c < n; ++c) {
    CvRow row;
    row.combination = c;
    for (std::size_t f = 0; f < k; ++f) {
      row.folds.push_back(results[c * k + f]);
      row.mean_auroc += results[c * k + f].auroc;
      row.mean_rounds += results[c * k + f].rounds;
    }
    row.mean_auroc /= static_cast<double>(k);
    row.mean_rounds /= static_cast<double>(k);
    if (row.mean_auroc > best) {
      best = row.mean_auroc;
      g.best_index = c;
    }
    g.rows.push_back(std::move(row));
  }
  g.best = params[g.best_index];
  g.best.n_rounds = std::max(1, static_cast<int>(std::lround(g.rows[g.best_index].mean_rounds)));
  return g;
}

inline csv::Table cv_table(const GridSpec& grid, const GridResult& r) {
  csv::Table t;
  t.header.push_back("combination");
  for (const auto& [name, values] : grid.params) t.header.push_back(name);
  t.header.insert(t.header.end(), {"fold", "auroc", "rounds"});
  auto cell = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  for (const auto& row : r.rows) {
    const auto combo = grid.combination(row.combination);
    std::vector<std::string> prefix{std::to_string(row.combination)};
    for (const auto& v : combo) prefix.push_back(cell(v));
    for (std::size_t f = 0; f < row.folds.size(); ++f) {
      auto cells = prefix;
      cells.insert(cells.end(), {std::to_string(f), format_real(row.folds[f].auroc),
                                 std::to_string(row.folds[f].rounds)});
      t.rows.push_back(std::move(cells));
    }
    auto cells = prefix;
    cells.insert(cells.end(), {"mean", format_real(row.mean_auroc), format_real(row.mean_rounds)});
    t.rows.push_back(std::move(cells));
  }
  return t;
}

// Mean held-out study-level AUROC of `params` on the given feature columns.
inline double cv_auroc(const CvData& data, const FoldAssignment& folds,
                       const gbt::BoostParams& params, const std::vector<std::string>& columns,
                       unsigned threads = 1) {
  CvData view = data;
  view.features = data.features.select_columns(columns);
  std::vector<FoldResult> r(static_cast<std::size_t>(folds.k));
  parallel_for(r.size(), threads, [&](std::size_t f) {
    r[f] = evaluate_fold(view, folds, static_cast<int>(f), params);
  });
  double sum = 0.0;
  for (const auto& x : r) sum += x.auroc;
  return sum / static_cast<double>(r.size());
}

// ---------------------------------------------------------------------------
// Feature selection

struct SelectionStep {
  std::size_t step = 0;
  std::string candidate;
  double importance = 0.0;
  double cv_auroc = 0.0;
  bool accepted = false;
};

struct SelectionTrace {
  std::vector<SelectionStep> steps;
  std::vector<std::string> selected;
  double baseline = 0.5;  // AUROC of the empty model
};

// Candidates ranked by total gain of a model trained on all features; each
// is kept iff it raises the mean CV AUROC by more than `epsilon`.
inline SelectionTrace forward_select(const CvData& data, const FoldAssignment& folds,
                                     const gbt::BoostParams& params, double epsilon = 1e-4,
                                     unsigned threads = 1) {
  if (data.features.cols() == 0) throw ValidationError("forward selection needs features");
  gbt::BoostParams full = params;
  const auto ranking_model = gbt::train(data.features, data.labels, full);
  const auto importance = gbt::feature_importance_gain(ranking_model);
  std::vector<std::string> ranked = data.features.names();
  std::stable_sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    return importance.at(a) > importance.at(b);
  });

  SelectionTrace trace;
  double best = trace.baseline;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    auto trial = trace.selected;
    trial.push_back(ranked[i]);
    const double score = cv_auroc(data, folds, params, trial, threads);
    SelectionStep s{i, ranked[i], importance.at(ranked[i]), score, score > best + epsilon};
    if (s.accepted) {
      best = score;
      trace.selected = std::move(trial);
    }
    trace.steps.push_back(s);
  }
  return trace;
}

inline json to_json(const SelectionTrace& t) {
  json steps = json::array();
  for (const auto& s : t.steps)
    steps.push_back({{"step", s.step},
                     {"candidate", s.candidate},
                     {"importance", s.importance},
                     {"cv_auroc", s.cv_auroc},
                     {"accepted", s.accepted}});
  return json{{"baseline", t.baseline}, {"steps", std::move(steps)}, {"selected", t.selected}};
}

inline std::vector<std::string> prune_features(const std::vector<std::string>& selected,
                                               const std::vector<std::string>& drop) {
  for (const auto& d : drop)
    if (std::find(selected.begin(), selected.end(), d) == selected.end())
      throw ValidationError("cannot drop '" + d + "': not among the selected features");
  std::vector<std::string> out;
  for (const auto& s : selected)
    if (std::find(drop.begin(), drop.end(), s) == drop.end()) out.push_back(s);
  return out;
}

// ---------------------------------------------------------------------------
// Test studies

struct TestStudies {
  std::vector<std::string> studies;  // one per test subject, subject order
  std::vector<std::string> warnings;
};

// Per subject, the study with the latest acquisition; equal timestamps fall
// back to the lexicographically greatest study_id.
inline TestStudies select_test_studies(const CohortManifest& manifest,
                                       const std::vector<std::string>& test_subjects) {
  std::map<std::string, std::map<std::string, long long>> per_subject;  // subject -> study -> ts
  for (const auto& r : manifest.rows()) {
    auto& ts = per_subject[r.subject_id][r.study_id];
    ts = std::max(ts, manifest.timestamp_seconds(r));
  }
  TestStudies out;
  for (const auto& subj : test_subjects) {
    auto it = per_subject.find(subj);
    if (it == per_subject.end()) throw ValidationError("test subject '" + subj + "' has no studies");
    const std::string* best = nullptr;
    long long best_ts = 0;
    bool tie = false;
    for (const auto& [study, ts] : it->second) {
      if (!best || ts > best_ts) {
        best = &study;
        best_ts = ts;
        tie = false;
      } else if (ts == best_ts) {
        best = &study;  // map order: later key is lexicographically greater
        tie = true;
      }
    }
    if (tie)
      out.warnings.push_back("subject '" + subj + "' has studies with equal latest timestamp; using '" +
                             *best + "'");
    out.studies.push_back(*best);
  }
  return out;
}

// Subject label: positive if any labelled study is positive.
inline std::map<std::string, int> subject_labels(const CohortManifest& manifest,
                                                 const StudyLabels& labels) {
  const auto lab = labels.as_map();
  std::map<std::string, int> out;
  for (const auto& r : manifest.rows()) {
    auto& y = out[r.subject_id];
    auto it = lab.find(r.study_id);
    if (it != lab.end() && it->second) y = 1;
  }
  return out;
}

}  // namespace ahfx::protocol
