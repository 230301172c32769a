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

// Subcommand driver. run_subcommand() is the whole command line surface and
// runs in-process so tests can call it directly.

#pragma once

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ahfx/boosted_trees.hpp"
#include "ahfx/common.hpp"
#include "ahfx/csv.hpp"
#include "ahfx/dataio.hpp"
#include "ahfx/evaluation.hpp"
#include "ahfx/phantom.hpp"
#include "ahfx/protocol.hpp"
#include "ahfx/report_miner.hpp"
#include "ahfx/treeshap.hpp"
#include "ahfx/volumetry.hpp"

namespace ahfx::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitUsage = 64;

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> v = {
      "mine-labels", "measure", "zstats",   "tune",               "select-features", "train",
      "predict",     "explain", "evaluate", "calibrate-threshold", "phantom",        "summary"};
  return v;
}

inline std::string usage() {
  std::string s = "usage: ahfx <subcommand> [--config FILE] [--seed N] [--out DIR] [--threads N] ...\n"
                   "subcommands:\n";
  for (const auto& c : subcommands()) s += "  " + c + "\n";
  s += "run 'ahfx <subcommand> --help' for its options\n";
  return s;
}

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

// Experiment settings shared by the stages. Command-line flags override
// values loaded from --config.
struct RunConfig {
  std::string manifest;
  std::string reports;
  std::string rules;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  json grid;    // null: default search space
  json params;  // base booster parameters (object), may be null
  int k = 3;
  double test_fraction = 0.3262;
  double target_fpr = 0.05;
  double epsilon = 1e-4;
  std::size_t n_boot = 2000;
  std::vector<std::string> drop;

  static RunConfig from_json(const json& j) {
    RunConfig c;
    c.manifest = j.value("manifest", c.manifest);
    c.reports = j.value("reports", c.reports);
    c.rules = j.value("rules", c.rules);
    c.out = j.value("out", c.out);
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("grid")) c.grid = j.at("grid");
    if (j.contains("params")) c.params = j.at("params");
    c.k = j.value("k", c.k);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.target_fpr = j.value("target_fpr", c.target_fpr);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.n_boot = j.value("n_boot", c.n_boot);
    c.drop = j.value("drop", c.drop);
    return c;
  }

  json to_json() const {
    return json{{"manifest", manifest}, {"reports", reports},
                {"rules", rules},       {"out", out},
                {"seed", seed.value_or(0)}, {"grid", grid},
                {"params", params},     {"k", k},
                {"test_fraction", test_fraction}, {"target_fpr", target_fpr},
                {"epsilon", epsilon},   {"n_boot", n_boot},
                {"drop", drop}};
  }

  std::uint64_t seed_value() const { return seed.value_or(0); }

  protocol::GridSpec grid_spec() const {
    if (grid.is_null()) return protocol::default_grid();
    if (grid.is_array()) return protocol::GridSpec::from_json(grid);
    // Object form: parameter -> candidate list, replacing or adding to the
    // default space.
    auto g = protocol::default_grid();
    for (const auto& [name, values] : grid.items()) {
      auto it = std::find_if(g.params.begin(), g.params.end(),
                             [&](const auto& p) { return p.first == name; });
      auto v = values.get<std::vector<json>>();
      if (it == g.params.end()) g.params.emplace_back(name, std::move(v));
      else it->second = std::move(v);
    }
    g.validate();
    return g;
  }

  gbt::BoostParams base_params() const {
    gbt::BoostParams p;
    if (params.is_object()) p.update_from_json(params);
    p.seed = seed_value();
    p.validate();
    return p;
  }
};

// Per-run state: effective config, hashed inputs and manifest extras.
class Run {
 public:
  Run(std::string subcommand, RunConfig config, unsigned threads, std::ostream& out, std::ostream& err)
      : config(std::move(config)), threads(threads), out(out), err(err), subcommand_(std::move(subcommand)) {}

  void log(const std::string& msg) const { err << "ahfx " << subcommand_ << ": " << msg << "\n"; }

  // Existence check for every input before any work is done.
  void require_inputs(const std::vector<std::pair<std::string, std::string>>& named) {
    for (const auto& [flag, path] : named) {
      if (path.empty()) throw ValidationError("missing required input --" + flag);
      if (!fs::is_regular_file(path)) throw IoError("input not found: " + path);
    }
    for (const auto& [flag, path] : named) inputs_[flag] = {path, sha256_hex(csv::read_file(path))};
  }

  fs::path out_path(const std::string& name) {
    const fs::path file = fs::path(config.out) / name;
    std::error_code ec;
    fs::create_directories(file.parent_path(), ec);
    if (ec || !fs::is_directory(file.parent_path()))
      throw IoError("cannot create output directory: " + file.parent_path().string());
    outputs_.push_back(name);
    return file;
  }

  void write(const std::string& name, const std::string& bytes) {
    csv::write_file(out_path(name).string(), bytes);
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(1) + "\n"); }

  json extra = json::object();

  void write_run_manifest() {
    json in = json::object();
    for (const auto& [flag, e] : inputs_) in[flag] = {{"path", e.first}, {"sha256", e.second}};
    json m{{"tool", "ahfx"},
           {"subcommand", subcommand_},
           {"seed", config.seed_value()},
           {"config", config.to_json()},
           {"inputs", in},
           {"outputs", outputs_}};
    for (const auto& [k, v] : extra.items()) m[k] = v;
    csv::write_file(out_path("run_manifest.json").string(), m.dump(1) + "\n");
  }

  RunConfig config;
  unsigned threads;
  std::ostream& out;
  std::ostream& err;

 private:
  std::string subcommand_;
  std::map<std::string, std::pair<std::string, std::string>> inputs_;
  std::vector<std::string> outputs_;
};

// ---------------------------------------------------------------------------
// Shared stage helpers

inline fs::path resolve_relative(const std::string& base_file, const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute()) return path;
  return fs::path(base_file).parent_path() / path;
}

inline json read_json(const std::string& path) {
  const auto text = csv::read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline std::vector<std::string> read_feature_list(const std::string& path) {
  const auto j = read_json(path);
  if (j.is_array()) return j.get<std::vector<std::string>>();
  if (j.contains("final")) return j.at("final").get<std::vector<std::string>>();
  if (j.contains("selected")) return j.at("selected").get<std::vector<std::string>>();
  throw ValidationError("'" + path + "' holds no feature list");
}

struct Prepared {
  CohortManifest manifest;
  FeatureTable features;
  StudyLabels labels;
  protocol::Split split;
  protocol::FoldAssignment folds;
  protocol::CvData train;
};

inline std::uint64_t fold_seed(std::uint64_t seed) { return seed + 1; }

inline Prepared prepare(Run& run, const std::string& features_path, const std::string& labels_path,
                        const std::vector<std::string>& columns = {}) {
  Prepared p;
  p.manifest = read_manifest(run.config.manifest);
  p.features = read_feature_table(features_path);
  if (!columns.empty()) p.features = p.features.select_columns(columns);
  p.labels = read_labels(labels_path);
  const auto subjects = p.manifest.subjects();
  p.split = protocol::split_cohort(p.manifest, run.config.test_fraction, run.config.seed_value());
  protocol::check_split(p.split, subjects);
  const auto subject_label = protocol::subject_labels(p.manifest, p.labels);
  std::map<std::string, int> train_labels;
  for (const auto& s : p.split.train) train_labels[s] = subject_label.at(s);
  p.folds = protocol::make_folds(p.split.train, train_labels, run.config.k,
                                 fold_seed(run.config.seed_value()));
  p.train = protocol::build_cv_data(p.manifest, p.features, p.labels, p.split.train);
  if (p.train.labels.empty()) throw ValidationError("no labelled training scans");
  run.log("train subjects " + std::to_string(p.split.train.size()) + ", test subjects " +
          std::to_string(p.split.test.size()) + ", training scans " +
          std::to_string(p.train.labels.size()));
  return p;
}

inline json split_json(const protocol::Split& s) { return json{{"train", s.train}, {"test", s.test}}; }

inline json folds_json(const protocol::FoldAssignment& f) {
  json j = json::object();
  for (const auto& [s, k] : f.fold_of) j[s] = k;
  return json{{"k", f.k}, {"fold_of", j}};
}

struct StudyScoreFile {
  std::vector<std::string> study;
  std::vector<double> score;
  std::vector<std::optional<Sex>> sex;
};

inline StudyScoreFile read_study_scores(const std::string& path) {
  const auto t = csv::read(path);
  const int cs = t.require_column("study_id", path);
  const int cp = t.require_column("score", path);
  const auto sex_col = t.column("sex");
  StudyScoreFile f;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    auto v = parse_real(r[cp]);
    if (!v || !std::isfinite(*v))
      throw ValidationError(path + " row " + std::to_string(i + 1) + ": invalid score '" + r[cp] + "'");
    f.study.push_back(r[cs]);
    f.score.push_back(*v);
    std::optional<Sex> sex;
    if (sex_col >= 0) {
      const auto& s = r[sex_col];
      if (s == "F") sex = Sex::female;
      else if (s == "M") sex = Sex::male;
      else if (!s.empty())
        throw ValidationError(path + " row " + std::to_string(i + 1) + ": sex must be F or M");
    }
    f.sex.push_back(sex);
  }
  return f;
}

// Scores joined with labels; unlabelled studies are dropped with a log line.
struct Labelled {
  std::vector<double> score;
  std::vector<int> label;
  std::vector<Sex> sex;  // empty unless every study has a sex
};

inline Labelled join_labels(const Run& run, const StudyScoreFile& f, const StudyLabels& labels) {
  const auto m = labels.as_map();
  Labelled out;
  bool all_sex = true;
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < f.study.size(); ++i) {
    auto it = m.find(f.study[i]);
    if (it == m.end()) {
      ++dropped;
      continue;
    }
    out.score.push_back(f.score[i]);
    out.label.push_back(it->second);
    if (f.sex[i]) out.sex.push_back(*f.sex[i]);
    else all_sex = false;
  }
  if (!all_sex) out.sex.clear();
  if (dropped) run.log(std::to_string(dropped) + " scored studies have no label and are skipped");
  if (out.score.empty()) throw ValidationError("no scored study has a label");
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

struct Args {
  std::string features, labels, params, selected, model, scores, spec, reports, rules, overrides,
      zref, scan, subset = "all", threshold_file, train_scores, grid, background;
  std::optional<double> threshold;
  bool waterfall = false, projections = false;
};

inline void cmd_mine_labels(Run& run, const Args& a) {
  const std::string reports = a.reports.empty() ? run.config.reports : a.reports;
  const std::string rules_path = a.rules.empty() ? run.config.rules : a.rules;
  std::vector<std::pair<std::string, std::string>> in{{"reports", reports}};
  if (!rules_path.empty()) in.emplace_back("rules", rules_path);
  if (!a.overrides.empty()) in.emplace_back("overrides", a.overrides);
  run.require_inputs(in);
  const auto rules = rules_path.empty() ? miner::default_ruleset() : miner::load_ruleset(rules_path);
  auto corpus = miner::mine_corpus(miner::read_reports(reports), rules);
  if (!a.overrides.empty()) miner::apply_overrides(corpus, read_labels(a.overrides));
  const auto labels = miner::to_study_labels(corpus);
  write_labels(labels, run.out_path("labels.csv").string());
  run.write("label_summary.csv", csv::render(miner::summary_table(corpus.summary)));
  run.log("labelled " + std::to_string(labels.study_ids.size()) + " studies, " +
          std::to_string(corpus.summary.positive_studies) + " positive");
}

inline void cmd_measure(Run& run, const Args& a) {
  std::vector<std::pair<std::string, std::string>> in{{"manifest", run.config.manifest}};
  if (!a.zref.empty()) in.emplace_back("zref", a.zref);
  run.require_inputs(in);
  const auto manifest = read_manifest(run.config.manifest);
  const auto& rows = manifest.rows();
  std::vector<volumetry::Measurements> meas(rows.size());
  std::vector<volumetry::FeatureVector> fvs(rows.size());
  std::vector<std::map<std::string, std::string>> projections(rows.size());
  parallel_for(rows.size(), run.threads, [&](std::size_t i) {
    const auto& r = rows[i];
    const auto ct = read_volume(resolve_relative(run.config.manifest, r.volume_path).string());
    const auto seg = read_volume(resolve_relative(run.config.manifest, r.mask_path).string());
    if (ct.kind != VolumeKind::intensity_hu)
      throw ValidationError("scan '" + r.scan_id + "': volume_path is not an intensity volume");
    if (seg.kind != VolumeKind::label || !seg.label_map)
      throw ValidationError("scan '" + r.scan_id + "': mask_path is not a label volume");
    meas[i] = volumetry::measure_scan(ct.intensity, seg.labels, *seg.label_map);
    fvs[i] = volumetry::base_features(meas[i], {r.age, r.sex, r.contrast_flag});
    if (a.projections) {
      const auto set = volumetry::derive_structures(seg.labels, *seg.label_map);
      for (const auto& [name, mask] : set.masks)
        for (auto axis : {volumetry::Axis::x, volumetry::Axis::y, volumetry::Axis::z})
          projections[i][name + "_" + std::to_string(static_cast<int>(axis))] =
              volumetry::encode_pgm(volumetry::render_projection(mask, axis));
    }
  });
  if (rows.empty()) throw ValidationError("manifest has no scans");
  FeatureTable base(fvs.front().names);
  for (std::size_t i = 0; i < rows.size(); ++i) base.add_row(rows[i].scan_id, fvs[i].values);
  if (!a.zref.empty()) {
    const auto ref = volumetry::ZReference::from_json(read_json(a.zref));
    write_feature_table(volumetry::with_zscores(base, ref), run.out_path("features.csv").string());
  } else {
    write_feature_table(base, run.out_path("features.csv").string());
  }
  csv::Table t;
  t.header = {"scan_id", "structure", "volume_ml", "mean_hu", "median_hu", "diameter_mm"};
  auto cell = [](const MaybeReal& v) { return v ? format_real(*v) : std::string(); };
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (const auto& [name, m] : meas[i].structures)
      t.rows.push_back({rows[i].scan_id, name, format_real(m.volume_ml), cell(m.mean_hu),
                        cell(m.median_hu), cell(m.diameter_mm)});
  run.write("measurements.csv", csv::render(t));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (const auto& [name, bytes] : projections[i])
      run.write("projections/" + rows[i].scan_id + "_" + name + ".pgm", bytes);
  run.log("measured " + std::to_string(rows.size()) + " scans");
}

inline void cmd_zstats(Run& run, const Args& a) {
  run.require_inputs({{"manifest", run.config.manifest}, {"features", a.features}});
  const auto manifest = read_manifest(run.config.manifest);
  const auto table = read_feature_table(a.features);
  const auto split = protocol::split_cohort(manifest, run.config.test_fraction, run.config.seed_value());
  protocol::check_split(split, manifest.subjects());
  const std::set<std::string> train(split.train.begin(), split.train.end());
  std::vector<std::string> scans;
  for (const auto& r : manifest.rows())
    if (train.count(r.subject_id) && table.find_row(r.scan_id)) scans.push_back(r.scan_id);
  const auto ref = volumetry::fit_zscore_reference(table, scans);
  run.write_json("zref.json", ref.to_json());
  write_feature_table(volumetry::with_zscores(table, ref), run.out_path("features_z.csv").string());
  run.write_json("split.json", split_json(split));
  run.log("fitted Z reference on " + std::to_string(scans.size()) + " training scans");
}

inline std::vector<std::string> columns_arg(const Args& a) {
  return a.selected.empty() ? std::vector<std::string>{} : read_feature_list(a.selected);
}

inline void cmd_tune(Run& run, const Args& a) {
  std::vector<std::pair<std::string, std::string>> in{
      {"manifest", run.config.manifest}, {"features", a.features}, {"labels", a.labels}};
  if (!a.selected.empty()) in.emplace_back("selected", a.selected);
  if (!a.grid.empty()) in.emplace_back("grid", a.grid);
  if (!a.params.empty()) in.emplace_back("params", a.params);
  run.require_inputs(in);
  if (!a.grid.empty()) run.config.grid = read_json(a.grid);
  if (!a.params.empty()) run.config.params = read_json(a.params);
  auto p = prepare(run, a.features, a.labels, columns_arg(a));
  const auto grid = run.config.grid_spec();
  run.log("grid search over " + std::to_string(grid.size()) + " combinations x " +
          std::to_string(p.folds.k) + " folds");
  const auto result = protocol::grid_search(p.train, p.folds, grid, run.config.base_params(),
                                            {run.threads});
  run.write("cv_table.csv", csv::render(protocol::cv_table(grid, result)));
  run.write_json("best_params.json", result.best.to_json());
  run.write_json("split.json", split_json(p.split));
  run.write_json("folds.json", folds_json(p.folds));
  run.extra["grid"] = grid.to_json();
  run.extra["params"] = result.best.to_json();
  run.extra["best_combination"] = result.best_index;
  run.extra["best_cv_auroc"] = result.rows[result.best_index].mean_auroc;
  run.log("best combination " + std::to_string(result.best_index) + " cv auroc " +
          format_fixed(result.rows[result.best_index].mean_auroc, 4));
}

inline gbt::BoostParams params_arg(Run& run, const Args& a) {
  if (a.params.empty()) return run.config.base_params();
  auto p = gbt::BoostParams::from_json(read_json(a.params));
  return p;
}

inline void cmd_select_features(Run& run, const Args& a) {
  std::vector<std::pair<std::string, std::string>> in{
      {"manifest", run.config.manifest}, {"features", a.features}, {"labels", a.labels}};
  if (!a.params.empty()) in.emplace_back("params", a.params);
  if (!a.selected.empty()) in.emplace_back("selected", a.selected);
  run.require_inputs(in);
  const auto params = params_arg(run, a);
  auto p = prepare(run, a.features, a.labels, columns_arg(a));
  const auto trace =
      protocol::forward_select(p.train, p.folds, params, run.config.epsilon, run.threads);
  const auto final_set = protocol::prune_features(trace.selected, run.config.drop);
  run.write_json("selection_trace.json", protocol::to_json(trace));
  run.write_json("selected.json",
                 json{{"selected", trace.selected}, {"drop", run.config.drop}, {"final", final_set}});
  run.extra["params"] = params.to_json();
  run.extra["selection_trace"] = protocol::to_json(trace);
  run.extra["drop"] = run.config.drop;
  run.log("selected " + std::to_string(trace.selected.size()) + " features, " +
          std::to_string(final_set.size()) + " after pruning");
}

inline void cmd_train(Run& run, const Args& a) {
  std::vector<std::pair<std::string, std::string>> in{
      {"manifest", run.config.manifest}, {"features", a.features}, {"labels", a.labels}};
  if (!a.params.empty()) in.emplace_back("params", a.params);
  if (!a.selected.empty()) in.emplace_back("selected", a.selected);
  run.require_inputs(in);
  const auto params = params_arg(run, a);
  auto p = prepare(run, a.features, a.labels, columns_arg(a));
  gbt::TrainOptions opt;
  opt.threads = run.threads;
  const auto model = gbt::train(p.train.features, p.train.labels, params, nullptr, opt);
  gbt::save_model(model, run.out_path("model.json").string());
  run.write_json("split.json", split_json(p.split));
  run.extra["params"] = params.to_json();
  run.extra["features"] = model.feature_names;
  run.log("trained " + std::to_string(model.trees.size()) + " trees on " +
          std::to_string(model.feature_names.size()) + " features");
}

inline void cmd_predict(Run& run, const Args& a) {
  std::vector<std::pair<std::string, std::string>> in{{"model", a.model}, {"features", a.features}};
  if (!run.config.manifest.empty()) in.emplace_back("manifest", run.config.manifest);
  run.require_inputs(in);
  if (a.subset != "all" && a.subset != "train" && a.subset != "test")
    throw ValidationError("--subset must be all, train or test");
  if (a.subset != "all" && run.config.manifest.empty())
    throw ValidationError("--subset " + a.subset + " needs --manifest");
  const auto model = gbt::load_model(a.model);
  const auto table = read_feature_table(a.features);
  const auto preds = gbt::predict_table(model, table);

  csv::Table scans;
  scans.header = {"scan_id", "margin", "probability"};
  for (std::size_t r = 0; r < table.rows(); ++r)
    scans.rows.push_back({table.scan_ids()[r], format_real(preds[r].margin),
                          format_real(preds[r].probability)});
  run.write("scan_scores.csv", csv::render(scans));
  if (run.config.manifest.empty()) return;

  const auto manifest = read_manifest(run.config.manifest);
  std::set<std::string> keep_studies;
  if (a.subset != "all") {
    const auto split =
        protocol::split_cohort(manifest, run.config.test_fraction, run.config.seed_value());
    protocol::check_split(split, manifest.subjects());
    if (a.subset == "test") {
      auto sel = protocol::select_test_studies(manifest, split.test);
      for (const auto& w : sel.warnings) run.log("warning: " + w);
      keep_studies.insert(sel.studies.begin(), sel.studies.end());
    } else {
      const std::set<std::string> train(split.train.begin(), split.train.end());
      for (const auto& r : manifest.rows())
        if (train.count(r.subject_id)) keep_studies.insert(r.study_id);
    }
  }
  std::vector<double> prob;
  std::vector<std::string> study_of;
  std::vector<int> dummy;
  std::map<std::string, Sex> sex_of;
  for (const auto& r : manifest.rows()) {
    if (a.subset != "all" && !keep_studies.count(r.study_id)) continue;
    auto row = table.find_row(r.scan_id);
    if (!row) continue;
    prob.push_back(preds[*row].probability);
    study_of.push_back(r.study_id);
    dummy.push_back(0);
    sex_of[r.study_id] = r.sex;
  }
  const auto studies = protocol::aggregate_by_study(prob, study_of, dummy);
  csv::Table st;
  st.header = {"study_id", "subject_id", "sex", "score"};
  for (std::size_t i = 0; i < studies.study.size(); ++i)
    st.rows.push_back({studies.study[i], manifest.subject_of_study(studies.study[i]),
                       to_string(sex_of.at(studies.study[i])), format_real(studies.score[i])});
  run.write("study_scores.csv", csv::render(st));
  run.log("scored " + std::to_string(table.rows()) + " scans, " +
          std::to_string(studies.study.size()) + " studies (" + a.subset + ")");
}

inline void cmd_explain(Run& run, const Args& a) {
  std::vector<std::pair<std::string, std::string>> in{{"model", a.model}, {"features", a.features}};
  if (!a.background.empty()) in.emplace_back("background", a.background);
  run.require_inputs(in);
  const auto model = gbt::load_model(a.model);
  const auto table = read_feature_table(a.features);
  const auto covers = a.background.empty()
                          ? shap::model_covers(model)
                          : shap::background_covers(model, read_feature_table(a.background));
  if (!a.scan.empty()) {
    auto row = table.find_row(a.scan);
    if (!row) throw ValidationError("scan '" + a.scan + "' is not in " + a.features);
    const auto aligned = gbt::align_row(model, table.names(), table.row(*row));
    const auto w = shap::waterfall_export(model, covers, aligned);
    if (a.waterfall) run.write_json("waterfall_" + a.scan + ".json", shap::to_json(w, a.scan));
    json phi = json::object();
    for (const auto& r : w.records) phi[r.feature] = r.phi;
    run.write_json("shap_" + a.scan + ".json",
                   json{{"scan_id", a.scan}, {"expected_value", w.expected_value},
                        {"margin", w.margin}, {"phi", phi}});
    run.out << "f(x) = " << format_real(w.margin) << "  E[f(x)] = " << format_real(w.expected_value)
            << "\n";
    return;
  }
  const auto s = shap::shap_summary(model, covers, table, run.threads);
  run.write("shap_bar.csv", csv::render(shap::bar_table(s)));
  run.write("shap_beeswarm.csv", csv::render(shap::beeswarm_table(s)));
  run.log("explained " + std::to_string(table.rows()) + " scans");
}

inline void cmd_calibrate(Run& run, const Args& a) {
  run.require_inputs({{"scores", a.scores}, {"labels", a.labels}});
  const auto joined = join_labels(run, read_study_scores(a.scores), read_labels(a.labels));
  const double t = eval::calibrate_threshold(joined.score, joined.label, run.config.target_fpr);
  const auto pt = eval::point_at(joined.score, joined.label, t);
  const json j{{"threshold", std::isfinite(t) ? json(t) : json(format_real(t))},
               {"target_fpr", run.config.target_fpr},
               {"fpr", pt.fpr},
               {"tpr", pt.tpr}};
  run.write_json("threshold.json", j);
  run.out << format_real(t) << "\n";
}

inline double threshold_arg(const Args& a) {
  if (a.threshold) return *a.threshold;
  if (a.threshold_file.empty()) throw ValidationError("evaluate needs --threshold or --threshold-file");
  const auto j = read_json(a.threshold_file).at("threshold");
  if (j.is_string()) {
    auto v = parse_real(j.get<std::string>());
    if (!v) throw ValidationError("unreadable threshold in " + a.threshold_file);
    return *v;
  }
  return j.get<double>();
}

inline void cmd_evaluate(Run& run, const Args& a) {
  std::vector<std::pair<std::string, std::string>> in{{"scores", a.scores}, {"labels", a.labels}};
  if (!a.threshold_file.empty()) in.emplace_back("threshold-file", a.threshold_file);
  if (!a.train_scores.empty()) in.emplace_back("train-scores", a.train_scores);
  run.require_inputs(in);
  const double t = threshold_arg(a);
  const auto labels = read_labels(a.labels);
  const auto joined = join_labels(run, read_study_scores(a.scores), labels);
  const auto rep = eval::confusion_report(joined.score, joined.label, t, joined.sex,
                                          run.config.n_boot, run.config.seed_value(), run.threads);
  const auto table = eval::render_table(rep);
  run.write_json("eval_report.json", eval::to_json(rep));
  run.write("eval_table.txt", table);
  run.write("roc.csv", csv::render(eval::roc_table(eval::roc_curve(joined.score, joined.label))));
  if (!a.train_scores.empty()) {
    const auto train = join_labels(run, read_study_scores(a.train_scores), labels);
    json pts = json::array();
    for (const auto& p : eval::roc_points_of_interest(train.score, train.label, joined.score, joined.label))
      pts.push_back({{"name", p.name},
                     {"threshold", std::isfinite(p.threshold) ? json(p.threshold) : json(format_real(p.threshold))},
                     {"fpr", p.fpr},
                     {"tpr", p.tpr}});
    run.write_json("roc_points.json", pts);
  }
  run.out << table;
}

inline void cmd_phantom(Run& run, const Args& a) {
  run.require_inputs({{"spec", a.spec}});
  const auto spec = read_json(a.spec);
  if (spec.contains("shapes")) {
    const auto ps = phantom::PhantomSpec::from_json(spec);
    const auto ph = phantom::build_phantom(ps);
    write_volume(ph.intensity, run.out_path("phantom_ct.hdr.json").string());
    run.out_path("phantom_ct.raw");
    write_volume(ph.labels, ph.label_map, run.out_path("phantom_seg.hdr.json").string());
    run.out_path("phantom_seg.raw");
    ManifestRow r;
    r.subject_id = "P0";
    r.study_id = "P0-T0";
    r.scan_id = "P0-T0-C0";
    r.acquisition_timestamp = "2020-01-01";
    r.age = 70;
    r.volume_path = "phantom_ct";
    r.mask_path = "phantom_seg";
    write_manifest(CohortManifest({r}), run.out_path("manifest.csv").string());
    run.write_json("truths.json", phantom::truths_json(ph.truths));
    run.log("phantom with " + std::to_string(ph.truths.size()) + " structures");
    return;
  }
  const auto cs = phantom::CohortGenSpec::from_json(spec);
  const auto c = phantom::generate_cohort(cs);
  write_manifest(c.manifest, run.out_path("manifest.csv").string());
  write_feature_table(c.features, run.out_path("features.csv").string());
  write_labels(c.labels, run.out_path("labels.csv").string());
  const double bayes = phantom::bayes_auroc(cs);
  run.write_json("generating_params.json", json{{"spec", cs.to_json()}, {"bayes_auroc", bayes}});
  run.log("cohort of " + std::to_string(cs.n_subjects) + " subjects, " +
          std::to_string(c.manifest.size()) + " scans, bayes auroc " + format_fixed(bayes, 4));
}

inline void cmd_summary(Run& run, const Args& a) {
  run.require_inputs({{"manifest", run.config.manifest}, {"labels", a.labels}});
  const auto manifest = read_manifest(run.config.manifest);
  const auto labels = read_labels(a.labels);
  const auto split = protocol::split_cohort(manifest, run.config.test_fraction, run.config.seed_value());
  protocol::check_split(split, manifest.subjects());
  const auto s = eval::cohort_summary(manifest, labels, {{"Train", split.train}, {"Test", split.test}});
  const auto text = eval::render_summary(s);
  run.write("summary.txt", text);
  run.out << text;
}

// ---------------------------------------------------------------------------

inline int run_subcommand(const std::vector<std::string>& argv, std::ostream& out = std::cout,
                          std::ostream& err = std::cerr) {
  if (argv.size() < 2) {
    err << usage();
    return kExitUsage;
  }
  const std::string sub = argv[1];
  if (sub == "-h" || sub == "--help") {
    out << usage();
    return kExitOk;
  }
  const auto& subs = subcommands();
  if (std::find(subs.begin(), subs.end(), sub) == subs.end()) {
    err << "ahfx: unknown subcommand '" << sub << "'\n" << usage();
    return kExitUsage;
  }

  CLI::App app{"ahfx " + sub, "ahfx " + sub};
  std::string config_path, out_dir, manifest;
  std::optional<std::uint64_t> seed;
  std::optional<double> target_fpr, test_fraction, epsilon;
  std::optional<std::size_t> n_boot;
  std::optional<int> k;
  std::vector<std::string> drop;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  Args a;
  app.add_option("--config", config_path, "run configuration JSON");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--threads", threads, "worker cap")->check(CLI::PositiveNumber);
  app.add_option("--manifest", manifest, "cohort manifest CSV");
  app.add_option("--test-fraction", test_fraction);
  app.add_option("--k", k, "fold count");

  if (sub == "mine-labels") {
    app.add_option("--reports", a.reports, "reports JSON lines");
    app.add_option("--rules", a.rules, "rule CSV (default: built-in rules)");
    app.add_option("--overrides", a.overrides, "manual label corrections CSV");
  } else if (sub == "measure") {
    app.add_option("--zref", a.zref, "Z reference JSON");
    app.add_flag("--projections", a.projections, "write PGM projections");
  } else if (sub == "zstats") {
    app.add_option("--features", a.features);
  } else if (sub == "tune" || sub == "select-features" || sub == "train") {
    app.add_option("--features", a.features);
    app.add_option("--labels", a.labels);
    app.add_option("--selected", a.selected, "feature list JSON restricting the columns");
    app.add_option("--params", a.params, "booster parameters JSON");
    if (sub == "tune") app.add_option("--grid", a.grid, "grid JSON");
    if (sub == "select-features") {
      app.add_option("--epsilon", epsilon);
      app.add_option("--drop", drop, "features removed after selection");
    }
  } else if (sub == "predict") {
    app.add_option("--model", a.model);
    app.add_option("--features", a.features);
    app.add_option("--subset", a.subset, "all, train or test");
  } else if (sub == "explain") {
    app.add_option("--model", a.model);
    app.add_option("--features", a.features);
    app.add_option("--scan", a.scan);
    app.add_flag("--waterfall", a.waterfall);
    app.add_option("--background", a.background, "feature CSV whose rows define the covers");
  } else if (sub == "calibrate-threshold") {
    app.add_option("--scores", a.scores);
    app.add_option("--labels", a.labels);
    app.add_option("--target-fpr", target_fpr);
  } else if (sub == "evaluate") {
    app.add_option("--scores", a.scores);
    app.add_option("--labels", a.labels);
    app.add_option("--threshold", a.threshold);
    app.add_option("--threshold-file", a.threshold_file);
    app.add_option("--train-scores", a.train_scores);
    app.add_option("--n-boot", n_boot);
  } else if (sub == "phantom") {
    app.add_option("--spec", a.spec);
  } else if (sub == "summary") {
    app.add_option("--labels", a.labels);
  }

  std::vector<std::string> rest(argv.rbegin(), argv.rend() - 2);  // CLI11 wants reversed args
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "ahfx " << sub << ": " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) {
      if (!fs::is_regular_file(config_path)) throw IoError("input not found: " + config_path);
      cfg = RunConfig::from_json(read_json(config_path));
    }
    if (seed) cfg.seed = seed;
    if (!out_dir.empty()) cfg.out = out_dir;
    if (!manifest.empty()) cfg.manifest = manifest;
    if (test_fraction) cfg.test_fraction = *test_fraction;
    if (k) cfg.k = *k;
    if (target_fpr) cfg.target_fpr = *target_fpr;
    if (epsilon) cfg.epsilon = *epsilon;
    if (n_boot) cfg.n_boot = *n_boot;
    if (!drop.empty()) cfg.drop = drop;

    Run run(sub, cfg, threads, out, err);
    if (sub == "mine-labels") cmd_mine_labels(run, a);
    else if (sub == "measure") cmd_measure(run, a);
    else if (sub == "zstats") cmd_zstats(run, a);
    else if (sub == "tune") cmd_tune(run, a);
    else if (sub == "select-features") cmd_select_features(run, a);
    else if (sub == "train") cmd_train(run, a);
    else if (sub == "predict") cmd_predict(run, a);
    else if (sub == "explain") cmd_explain(run, a);
    else if (sub == "calibrate-threshold") cmd_calibrate(run, a);
    else if (sub == "evaluate") cmd_evaluate(run, a);
    else if (sub == "phantom") cmd_phantom(run, a);
    else if (sub == "summary") cmd_summary(run, a);
    run.write_run_manifest();
    return kExitOk;
  } catch (const IoError& e) {
    err << "ahfx " << sub << ": " << e.what() << "\n";
    return kExitIo;
  } catch (const ValidationError& e) {
    err << "ahfx " << sub << ": " << e.what() << "\n";
    return kExitValidation;
  } catch (const json::exception& e) {
    err << "ahfx " << sub << ": " << e.what() << "\n";
    return kExitValidation;
  }
}

inline int run_subcommand(int argc, const char* const* argv) {
  return run_subcommand(std::vector<std::string>(argv, argv + argc));
}

}  // namespace ahfx::cli
