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

// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "ahfx/cli.hpp"
#include "support/brute_force_shap.hpp"
#include "support/random_ensemble.hpp"

namespace {

using namespace ahfx;
namespace fs = std::filesystem;
using json = nlohmann::json;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fixed(double v, int digits) { return format_fixed(v, digits); }

// 1. Published confusion counts render the published rates.
Outcome published_counts() {
  std::vector<double> scores;
  std::vector<int> labels;
  auto add = [&](int n, double s, int y) {
    for (int i = 0; i < n; ++i) {
      scores.push_back(s);
      labels.push_back(y);
    }
  };
  add(63, 0.9, 1);
  add(62, 0.1, 1);
  add(64, 0.8, 0);
  add(1335, 0.2, 0);
  const auto rep = eval::confusion_report(scores, labels, 0.26840377, {}, 2000, 0);
  const auto& b = rep.blocks.at(0);
  const std::string got = fixed(*b.rates.tpr.value, 2) + " " + fixed(*b.rates.fnr.value, 2) + " " +
                          fixed(*b.rates.fpr.value, 2) + " " + fixed(*b.rates.tnr.value, 2) + " " +
                          fixed(b.predicted_prevalence, 2);
  const auto table = eval::render_table(rep);
  const bool rendered = table.find("\t0.50 (") != std::string::npos &&
                        table.find("Predicted prevalence\t0.08") != std::string::npos;
  return {got == "0.50 0.50 0.05 0.95 0.08" && rendered, "TPR FNR FPR TNR pred.prev = " + got};
}

// 2. Expected value of the explanation figure as a probability.
Outcome figure_probability() {
  const double p = sigmoid(-2.603);
  const bool ok = fixed(p, 4) == "0.0689" && std::abs(p - 0.07) <= 0.005;
  return {ok, "sigmoid(-2.603) = " + fixed(p, 4)};
}

// 3. Tuning grid size and the two published parameter columns.
Outcome grid_fidelity() {
  const auto g = protocol::default_grid();
  std::set<std::string> seen;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto combo = g.combination(i);
    seen.insert(json(combo).dump());
    protocol::apply_combination(gbt::BoostParams{}, g, combo);
  }
  const auto init = protocol::grid_index_of(g, protocol::published_initial_params());
  const auto fin = protocol::grid_index_of(g, protocol::published_final_params());
  const bool ok = g.size() == 2304 && seen.size() == 2304 && init && fin;
  return {ok, std::to_string(seen.size()) + " distinct combinations; initial #" +
                  (init ? std::to_string(*init) : "none") + ", final #" +
                  (fin ? std::to_string(*fin) : "none")};
}

// 4. TreeSHAP against brute-force Shapley values and local accuracy.
Outcome shap_exactness() {
  std::mt19937_64 rng(20240601);
  double worst_phi = 0.0, worst_local = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto e = testing::random_ensemble(rng);
    const auto covers = shap::model_covers(e);
    const auto x = testing::random_row(rng, e.feature_names.size());
    const auto fast = shap::shap_values(e, covers, x);
    const auto slow = testing::brute_force_shap(e, covers, x);
    worst_phi = std::max(worst_phi, std::abs(fast.expected_value - slow.expected_value));
    for (std::size_t f = 0; f < fast.phi.size(); ++f)
      worst_phi = std::max(worst_phi, std::abs(fast.phi[f] - slow.phi[f]));
  }
  testing::RandomEnsembleSpec big;
  big.max_features = 30;
  big.max_trees = 50;
  big.max_depth = 6;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto e = testing::random_ensemble(rng, trial % 2 ? big : testing::RandomEnsembleSpec{});
    const auto x = testing::random_row(rng, e.feature_names.size(), 0.2);
    const auto r = shap::shap_values(e, x);
    double sum = r.expected_value;
    for (double p : r.phi) sum += p;
    worst_local = std::max(worst_local, std::abs(sum - e.margin(x)));
  }
  std::ostringstream d;
  d << "max |phi - brute| = " << worst_phi << ", max local-accuracy gap = " << worst_local;
  return {worst_phi <= 1e-9 && worst_local <= 1e-9, d.str()};
}

// 5. Boosting arithmetic and monotone training loss.
Outcome boosting_correctness() {
  FeatureTable x({"x"});
  for (int i = 1; i <= 4; ++i) x.add_row("r" + std::to_string(i), {static_cast<double>(i)});
  gbt::BoostParams p;
  p.eta = 1.0;
  p.lambda = 0.0;
  p.min_child_weight = 0.0;
  p.max_depth = 1;
  p.n_rounds = 1;
  p.early_stopping_rounds = 0;
  const auto e = gbt::train(x, std::vector<int>{0, 0, 1, 1}, p);
  const auto& n = e.trees.at(0).nodes;
  const bool stump = n.size() == 3 && n[n[0].left].value == -2.0 && n[n[0].right].value == 2.0 &&
                     n[0].gain == 2.0;

  gbt::BoostParams q;
  q.lambda = 1.0;
  q.alpha = 1.0;
  const double w0 = gbt::leaf_weight(0.5, 2.0, q);
  const double w1 = gbt::leaf_weight(-3.0, 2.0, q);
  const bool soft = std::abs(w0) <= 1e-12 && std::abs(w1 - 2.0 / 3.0) <= 1e-12;

  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  FeatureTable big({"a", "b", "c"});
  std::vector<int> y;
  for (int i = 0; i < 500; ++i) {
    const int label = i % 3 == 0;
    big.add_row("s" + std::to_string(i), {z(rng) + label, z(rng) + 0.5 * label, z(rng)});
    y.push_back(label);
  }
  gbt::BoostParams r;
  r.n_rounds = 50;
  r.max_depth = 3;
  r.subsample = 1.0;
  gbt::TrainLog log;
  gbt::train(big, y, r, nullptr, {}, &log);
  bool monotone = log.train_logloss.size() == 50;
  for (std::size_t i = 1; i < log.train_logloss.size(); ++i)
    monotone = monotone && log.train_logloss[i] <= log.train_logloss[i - 1];
  std::ostringstream d;
  d << "stump leaves " << n[n[0].left].value << "/" << n[n[0].right].value << " gain " << n[0].gain
    << "; soft-threshold weights " << w0 << ", " << fixed(w1, 4) << "; logloss "
    << fixed(log.train_logloss.front(), 4) << " -> " << fixed(log.train_logloss.back(), 4);
  return {stump && soft && monotone, d.str()};
}

// 6. Phantom volumes and diameters against closed forms.
Outcome volumetry_oracle() {
  struct Case {
    phantom::Shape shape;
    std::array<double, 3> params;
    double spacing;
  };
  const std::vector<Case> suite{
      {phantom::Shape::ellipsoid, {30, 20, 10}, 1.0},  {phantom::Shape::ellipsoid, {12, 12, 12}, 1.0},
      {phantom::Shape::ellipsoid, {24, 18, 15}, 1.5},  {phantom::Shape::cylinder, {10, 10, 25}, 1.0},
      {phantom::Shape::cylinder, {15, 12, 20}, 1.0},   {phantom::Shape::box, {10, 10, 10}, 1.0},
      {phantom::Shape::box, {12, 15, 20}, 0.5}};
  bool ok = true;
  double worst_vol = 0.0, worst_diam_ratio = 0.0;
  for (const auto& c : suite) {
    phantom::PhantomSpec s;
    std::array<int, 3> dims;
    std::array<double, 3> center;
    for (int a = 0; a < 3; ++a) {
      dims[a] = static_cast<int>(std::ceil((2.0 * c.params[a] + 8.0) / c.spacing));
      center[a] = dims[a] * c.spacing / 2.0;
    }
    s.geometry = {dims, {c.spacing, c.spacing, c.spacing}};
    s.shapes.push_back({"vena_cava_inferior", c.shape, center, c.params, 30});
    const auto ph = phantom::build_phantom(s);
    const auto mask = volumetry::mask_of(ph.labels, ph.label_map.code("vena_cava_inferior"));
    if (2.0 * std::min({c.params[0], c.params[1], c.params[2]}) / c.spacing < 20.0) ok = false;
    const auto& truth = ph.truths.at(0);
    const double vol = volumetry::measure_volume(mask) * 1000.0;
    const double rel = std::abs(vol - truth.volume_mm3) / truth.volume_mm3;
    worst_vol = std::max(worst_vol, rel);
    if (rel > 0.02) ok = false;
    if (c.shape == phantom::Shape::box &&
        std::abs(static_cast<double>(volumetry::voxel_count(mask)) * std::pow(c.spacing, 3) -
                 truth.volume_mm3) > 1e-9 * truth.volume_mm3)
      ok = false;
    const double diag = c.spacing * std::sqrt(3.0);
    const double d = *volumetry::measure_diameter(mask);
    worst_diam_ratio = std::max(worst_diam_ratio, std::abs(d - truth.diameter_mm) / diag);
    if (std::abs(d - truth.diameter_mm) > diag) ok = false;
  }
  bool refines = true;
  for (const auto& c : suite) {
    if (c.shape != phantom::Shape::ellipsoid) continue;
    std::array<double, 3> extent;
    for (int a = 0; a < 3; ++a) extent[a] = std::ceil((2.0 * c.params[a] + 8.0) / c.spacing) * c.spacing;
    double last = std::numeric_limits<double>::infinity();
    for (double sp : {c.spacing, c.spacing / 2.0, c.spacing / 4.0}) {
      phantom::PhantomSpec s;
      std::array<int, 3> dims;
      std::array<double, 3> center;
      for (int a = 0; a < 3; ++a) {
        dims[a] = static_cast<int>(std::lround(extent[a] / sp));
        center[a] = extent[a] / 2.0;
      }
      s.geometry = {dims, {sp, sp, sp}};
      s.shapes.push_back({"lung", phantom::Shape::ellipsoid, center, c.params, -800});
      const auto ph = phantom::build_phantom(s);
      const double vol =
          volumetry::measure_volume(volumetry::mask_of(ph.labels, ph.label_map.code("lung"))) * 1000.0;
      const double err = std::abs(vol - ph.truths[0].volume_mm3);
      if (!(err < last)) refines = false;
      last = err;
    }
  }
  std::ostringstream d;
  d << suite.size() << " shapes; worst volume error " << fixed(100.0 * worst_vol, 3)
    << "%; worst diameter error " << fixed(worst_diam_ratio, 3)
    << " voxel diagonals; refinement strictly reduces error: " << (refines ? "yes" : "no");
  return {ok && refines, d.str()};
}

// 8. Report miner against the reference evaluator's frozen findings.
Outcome miner_suite() {
  std::ifstream in(std::string(AHFX_TEST_DATA_DIR) + "/miner_cases.json");
  const auto cases = json::parse(in);
  const auto rules = miner::default_ruleset();
  std::size_t mismatches = 0;
  for (const auto& c : cases) {
    const auto text = c.at("text").get<std::string>();
    const auto got = miner::extract_findings(text, rules);
    const auto& want = c.at("findings");
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i)
      same = miner::to_string(got[i].category) == want[i].at("category").get<std::string>() &&
             miner::to_string(got[i].polarity) == want[i].at("polarity").get<std::string>() &&
             got[i].begin == want[i].at("begin").get<std::size_t>() &&
             got[i].end == want[i].at("end").get<std::size_t>() &&
             got[i].text == want[i].at("text").get<std::string>();
    const auto label = miner::resolve_study_label(c.at("id").get<std::string>(), got);
    const std::string want_label = c.at("label").get<std::string>();
    same = same && (label.label == miner::AhfLabel::positive) == (want_label == "positive");
    if (!same) ++mismatches;
  }
  using miner::Category, miner::Polarity;
  const auto pleural_only = miner::resolve_study_label(
      "p", {miner::Finding{Category::pleural_effusion, Polarity::positive, 0, 1, "x"}});
  const auto none = miner::resolve_study_label("n", {});
  const bool rule_ok = pleural_only.label == miner::AhfLabel::negative &&
                       none.label == miner::AhfLabel::negative;
  return {cases.size() >= 12 && mismatches == 0 && rule_ok,
          std::to_string(cases.size()) + " snippets, " + std::to_string(mismatches) +
              " mismatches; pleural-only and empty reports resolve negative: " +
              (rule_ok ? "yes" : "no")};
}

// 7 and 9. Full command-line pipeline on a Table-1-scale synthetic cohort.
struct PipelineRun {
  bool ok = false;
  std::string error;
  double bayes = 0.0;
  double test_auroc = 0.0;
  double train_fpr = 1.0;
  std::size_t grid_size = 0;
  std::vector<std::string> selected;
  fs::path dir;
};

json cohort_spec() {
  // Four informative features at d = 0.7965 give a Mahalanobis separation of
  // 1.593 and a Bayes AUROC of 0.870; four noise features carry missingness.
  json features = json::array();
  for (int i = 0; i < 4; ++i)
    features.push_back({{"name", "signal_" + std::to_string(i)}, {"mean_neg", 0.0}, {"mean_pos", 0.7965}});
  for (int i = 0; i < 4; ++i)
    features.push_back({{"name", "noise_" + std::to_string(i)},
                        {"mean_neg", 0.0},
                        {"mean_pos", 0.0},
                        {"missing_rate", 0.1}});
  return {{"n_subjects", 4672}, {"prevalence", 0.077}, {"seed", 4672}, {"features", features}};
}

json reduced_grid() {
  return json::array({{{"name", "eta"}, {"values", {0.1, 0.3}}},
                      {{"name", "max_depth"}, {"values", {1, 2}}},
                      {{"name", "min_child_weight"}, {"values", {0, 1}}},
                      {{"name", "lambda"}, {"values", {0, 1}}},
                      {{"name", "alpha"}, {"values", {0, 4}}},
                      {{"name", "tree_method"}, {"values", {"auto"}}},
                      {{"name", "scale_pos_weight"}, {"values", {1}}}});
}

PipelineRun run_pipeline(const fs::path& dir, unsigned threads) {
  PipelineRun r;
  r.dir = dir;
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto p = [&](const std::string& name) { return (dir / name).string(); };
  csv::write_file(p("cohort.json"), cohort_spec().dump(1));
  csv::write_file(p("grid.json"), reduced_grid().dump(1));
  csv::write_file(p("base.json"), json{{"n_rounds", 300}, {"early_stopping_rounds", 20}}.dump());
  csv::write_file(p("run.json"), json{{"seed", 11}, {"params", json::parse(csv::read_file(p("base.json")))}}.dump(1));
  const std::string t = std::to_string(threads);
  std::ostringstream sink;
  auto step = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "ahfx");
    args.insert(args.end(), {"--threads", t});
    std::ostringstream err;
    const int code = cli::run_subcommand(args, sink, err);
    if (code != 0) throw std::runtime_error(args[1] + " exited " + std::to_string(code) + ": " + err.str());
  };
  try {
    step({"phantom", "--spec", p("cohort.json"), "--out", p("cohort")});
    const std::vector<std::string> data{"--config", p("run.json"), "--manifest", p("cohort/manifest.csv"),
                                        "--features", p("cohort/features.csv"), "--labels",
                                        p("cohort/labels.csv")};
    auto with = [&](std::vector<std::string> head) {
      head.insert(head.end(), data.begin(), data.end());
      return head;
    };
    step(with({"tune", "--grid", p("grid.json"), "--out", p("tune")}));
    step(with({"select-features", "--params", p("tune/best_params.json"), "--out", p("select")}));
    step(with({"train", "--params", p("tune/best_params.json"), "--selected", p("select/selected.json"),
               "--out", p("train")}));
    const std::vector<std::string> pred{"predict", "--config", p("run.json"), "--model",
                                        p("train/model.json"), "--features", p("cohort/features.csv"),
                                        "--manifest", p("cohort/manifest.csv")};
    auto sub = pred;
    sub.insert(sub.end(), {"--subset", "train", "--out", p("pred_train")});
    step(sub);
    sub = pred;
    sub.insert(sub.end(), {"--subset", "test", "--out", p("pred_test")});
    step(sub);
    step({"calibrate-threshold", "--scores", p("pred_train/study_scores.csv"), "--labels",
          p("cohort/labels.csv"), "--out", p("threshold")});
    step({"evaluate", "--config", p("run.json"), "--scores", p("pred_test/study_scores.csv"), "--labels",
          p("cohort/labels.csv"), "--threshold-file", p("threshold/threshold.json"), "--train-scores",
          p("pred_train/study_scores.csv"), "--out", p("evaluate")});

    auto load = [&](const std::string& name) { return json::parse(csv::read_file(p(name))); };
    r.bayes = load("cohort/generating_params.json").at("bayes_auroc").get<double>();
    r.test_auroc = load("evaluate/eval_report.json").at("auroc").get<double>();
    r.train_fpr = load("threshold/threshold.json").at("fpr").get<double>();
    r.grid_size = csv::read(p("tune/cv_table.csv")).rows.size() / 4;
    r.selected = load("select/selected.json").at("final").get<std::vector<std::string>>();
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

Outcome end_to_end(const PipelineRun& r) {
  if (!r.ok) return {false, "pipeline failed: " + r.error};
  const bool ok = r.grid_size >= 32 && std::abs(r.test_auroc - r.bayes) <= 0.03 &&
                  r.test_auroc <= r.bayes + 0.02 && r.train_fpr <= 0.05;
  std::string sel;
  for (const auto& s : r.selected) sel += (sel.empty() ? "" : ",") + s;
  return {ok, "bayes " + fixed(r.bayes, 4) + ", held-out study AUROC " + fixed(r.test_auroc, 4) +
                  ", train FPR " + fixed(r.train_fpr, 4) + ", grid " + std::to_string(r.grid_size) +
                  " combos, selected [" + sel + "]"};
}

Outcome determinism(const PipelineRun& a, const PipelineRun& b) {
  if (!a.ok || !b.ok) return {false, "pipeline failed: " + (a.ok ? b.error : a.error)};
  std::vector<std::string> differ;
  for (const char* f : {"train/model.json", "select/selection_trace.json", "evaluate/eval_report.json",
                        "tune/cv_table.csv", "pred_test/study_scores.csv", "threshold/threshold.json"})
    if (csv::read_file((a.dir / f).string()) != csv::read_file((b.dir / f).string())) differ.push_back(f);
  std::string d = "model, selection trace, eval report, cv table, scores, threshold compared";
  for (const auto& f : differ) d += "; differs: " + f;
  return {differ.empty(), d};
}

}  // namespace

int main() {
  using clock = std::chrono::steady_clock;
  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    const auto t0 = clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << " (" << fixed(secs, 2)
              << " s): " << o.detail << std::endl;
  };

  report(1, "published confusion counts", published_counts);
  report(2, "explanation figure probability", figure_probability);
  report(3, "tuning grid fidelity", grid_fidelity);
  report(4, "TreeSHAP exactness", shap_exactness);
  report(5, "boosting correctness", boosting_correctness);
  report(6, "volumetry oracle", volumetry_oracle);

  const fs::path root = fs::current_path() / "acceptance_runs";
  PipelineRun serial, parallel;
  double serial_secs = 0.0;
  report(7, "end-to-end synthetic pipeline", [&] {
    const auto t0 = clock::now();
    serial = run_pipeline(root / "threads_1", 1);
    serial_secs = std::chrono::duration<double>(clock::now() - t0).count();
    return end_to_end(serial);
  });
  report(8, "report miner suite", miner_suite);
  report(9, "determinism across thread counts", [&] {
    parallel = run_pipeline(root / "threads_8", 8);
    auto o = determinism(serial, parallel);
    o.detail += "; single-thread pipeline took " + fixed(serial_secs, 1) + " s";
    return o;
  });

  std::cout << (failures == 0 ? "all 9 criteria passed" : std::to_string(failures) + " of 9 criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
