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

// ROC analysis, threshold calibration at a target false positive rate,
// confusion reports with percentile-bootstrap intervals, and cohort summary
// tables.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ahfx/common.hpp"
#include "ahfx/dataio.hpp"

namespace ahfx::eval {

using json = nlohmann::json;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline void check_binary(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
  for (double s : scores)
    if (std::isnan(s)) throw ValidationError("score is NaN");
  for (int y : labels)
    if (y != 0 && y != 1) throw ValidationError("labels must be 0 or 1");
}

// Mann-Whitney AUROC: fraction of (positive, negative) pairs ordered
// correctly, ties counting one half. Computed from midranks.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_binary(scores, labels);
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += y;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("AUROC needs both classes");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the positive rank sum, kept integral.
  long long twice_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // ranks i+1..j share the midrank (i+1+j)/2
    const long long twice_mid = static_cast<long long>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) twice_rank_sum += twice_mid;
    i = j;
  }
  const double u = static_cast<double>(twice_rank_sum) / 2.0 -
                   static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct RocPoint {
  double threshold = kInf;  // positive when score >= threshold
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) at +inf to (1,1) at the lowest score
};

inline RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_binary(scores, labels);
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += y;
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("ROC needs both classes");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RocCurve c;
  c.points.push_back({kInf, 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      (labels[order[i]] ? tp : fp)++;
      ++i;
    }
    c.points.push_back({t, static_cast<double>(fp) / static_cast<double>(n_neg),
                        static_cast<double>(tp) / static_cast<double>(n_pos)});
  }
  return c;
}

struct RocResult {
  RocCurve curve;
  double auroc = 0.5;
};

inline RocResult roc_and_auroc(std::span<const double> scores, std::span<const int> labels) {
  return {roc_curve(scores, labels), auroc(scores, labels)};
}

inline csv::Table roc_table(const RocCurve& c) {
  csv::Table t;
  t.header = {"threshold", "fpr", "tpr"};
  for (const auto& p : c.points)
    t.rows.push_back({format_real(p.threshold), format_real(p.fpr), format_real(p.tpr)});
  return t;
}

// Smallest candidate threshold (observed scores and +inf) whose false
// positive rate on the given data is at most `target_fpr`.
inline double calibrate_threshold(std::span<const double> scores, std::span<const int> labels,
                                  double target_fpr = 0.05) {
  check_binary(scores, labels);
  if (!(target_fpr >= 0.0 && target_fpr <= 1.0))
    throw ValidationError("target FPR must lie in [0, 1]");
  std::vector<double> neg;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!labels[i]) neg.push_back(scores[i]);
  if (neg.empty()) throw ValidationError("threshold calibration needs at least one negative");
  std::sort(neg.begin(), neg.end());
  std::vector<double> candidates(scores.begin(), scores.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  candidates.push_back(kInf);
  const double allowed = target_fpr * static_cast<double>(neg.size()) * (1.0 + 1e-12);
  for (double t : candidates) {
    const auto at_or_above =
        static_cast<double>(neg.end() - std::lower_bound(neg.begin(), neg.end(), t));
    if (at_or_above <= allowed) return t;
  }
  return kInf;
}

// ---------------------------------------------------------------------------
// Confusion reports

struct Counts {
  std::size_t tp = 0, fn = 0, fp = 0, tn = 0;
  std::size_t total() const { return tp + fn + fp + tn; }
  bool operator==(const Counts&) const = default;
};

inline Counts confusion_counts(std::span<const double> scores, std::span<const int> labels,
                               double threshold) {
  Counts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i]) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  return c;
}

struct Rate {
  MaybeReal value;  // missing when the denominator is zero
  MaybeReal lo, hi;
};

struct Rates {
  Rate tpr, fnr, fpr, tnr;
};

inline Rates rates_of(const Counts& c) {
  auto ratio = [](std::size_t a, std::size_t b) -> MaybeReal {
    if (b == 0) return std::nullopt;
    return static_cast<double>(a) / static_cast<double>(b);
  };
  Rates r;
  r.tpr.value = ratio(c.tp, c.tp + c.fn);
  r.fnr.value = ratio(c.fn, c.tp + c.fn);
  r.fpr.value = ratio(c.fp, c.fp + c.tn);
  r.tnr.value = ratio(c.tn, c.fp + c.tn);
  return r;
}

struct Block {
  std::string group;  // "All", "Female", "Male"
  Counts counts;
  Rates rates;
  double prevalence = 0.0;            // (TP + FN) / N
  double predicted_prevalence = 0.0;  // (TP + FP) / N
};

struct EvalReport {
  MaybeReal auroc;
  double threshold = 0.0;
  std::size_t n_boot = 0;
  std::uint64_t seed = 0;
  std::vector<Block> blocks;
  std::vector<std::string> notices;
};

namespace detail {

// Percentile at probability q of sorted values, linear interpolation.
inline double percentile(const std::vector<double>& sorted, double q) {
  if (sorted.size() == 1) return sorted.front();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline std::uint64_t replica_seed(std::uint64_t master, std::uint64_t block, std::uint64_t replica) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(replica)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

inline Block make_block(std::string group, std::span<const double> scores,
                        std::span<const int> labels, double threshold, std::size_t n_boot,
                        std::uint64_t seed, std::uint64_t block_id, unsigned threads) {
  Block b;
  b.group = std::move(group);
  b.counts = confusion_counts(scores, labels, threshold);
  b.rates = rates_of(b.counts);
  const double n = static_cast<double>(b.counts.total());
  b.prevalence = static_cast<double>(b.counts.tp + b.counts.fn) / n;
  b.predicted_prevalence = static_cast<double>(b.counts.tp + b.counts.fp) / n;
  if (n_boot == 0) return b;

  // Each replica resamples studies with replacement from its own stream.
  std::vector<Rates> reps(n_boot);
  const std::size_t m = scores.size();
  parallel_for(n_boot, threads, [&](std::size_t r) {
    std::mt19937_64 rng(replica_seed(seed, block_id, r));
    Counts c;
    for (std::size_t i = 0; i < m; ++i) {
      // Unbiased index in [0, m) by rejection.
      const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                  std::numeric_limits<std::uint64_t>::max() % m;
      std::uint64_t v;
      do v = rng();
      while (v >= limit);
      const std::size_t k = static_cast<std::size_t>(v % m);
      const bool pred = scores[k] >= threshold;
      if (labels[k]) (pred ? c.tp : c.fn)++;
      else (pred ? c.fp : c.tn)++;
    }
    reps[r] = rates_of(c);
  });
  auto interval = [&](Rate Rates::*field, Rate& out) {
    if (!out.value) return;
    std::vector<double> v;
    for (const auto& rep : reps)
      if ((rep.*field).value) v.push_back(*(rep.*field).value);
    if (v.empty()) return;
    std::sort(v.begin(), v.end());
    out.lo = percentile(v, 0.025);
    out.hi = percentile(v, 0.975);
  };
  interval(&Rates::tpr, b.rates.tpr);
  interval(&Rates::fnr, b.rates.fnr);
  interval(&Rates::fpr, b.rates.fpr);
  interval(&Rates::tnr, b.rates.tnr);
  return b;
}

}  // namespace detail

// Overall and per-sex blocks at `threshold`. Empty sex groups are omitted
// with a notice; an empty `sex` span yields the overall block only.
inline EvalReport confusion_report(std::span<const double> scores, std::span<const int> labels,
                                   double threshold, std::span<const Sex> sex,
                                   std::size_t n_boot = 2000, std::uint64_t seed = 0,
                                   unsigned threads = 1) {
  check_binary(scores, labels);
  if (!sex.empty() && sex.size() != scores.size())
    throw ValidationError("sex vector is not aligned with scores");
  if (scores.empty()) throw ValidationError("confusion report needs at least one study");
  EvalReport rep;
  rep.threshold = threshold;
  rep.n_boot = n_boot;
  rep.seed = seed;
  bool both = false;
  {
    bool p = false, q = false;
    for (int y : labels) (y ? p : q) = true;
    both = p && q;
  }
  if (both) rep.auroc = auroc(scores, labels);
  rep.blocks.push_back(detail::make_block("All", scores, labels, threshold, n_boot, seed, 0, threads));
  if (sex.empty()) {
    rep.notices.push_back("sex not available; subgroups omitted");
    return rep;
  }
  const std::pair<Sex, const char*> groups[] = {{Sex::female, "Female"}, {Sex::male, "Male"}};
  std::uint64_t id = 1;
  for (const auto& [s, name] : groups) {
    std::vector<double> gs;
    std::vector<int> gl;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (sex[i] == s) {
        gs.push_back(scores[i]);
        gl.push_back(labels[i]);
      }
    if (gs.empty()) {
      rep.notices.push_back(std::string("subgroup ") + name + " is empty and omitted");
      ++id;
      continue;
    }
    rep.blocks.push_back(detail::make_block(name, gs, gl, threshold, n_boot, seed, id++, threads));
  }
  return rep;
}

inline json to_json(const Rate& r) {
  auto opt = [](const MaybeReal& v) { return v ? json(*v) : json(nullptr); };
  return json{{"value", opt(r.value)}, {"lo", opt(r.lo)}, {"hi", opt(r.hi)}};
}

inline json to_json(const EvalReport& r) {
  json blocks = json::array();
  for (const auto& b : r.blocks)
    blocks.push_back({{"group", b.group},
                      {"tp", b.counts.tp},
                      {"fn", b.counts.fn},
                      {"fp", b.counts.fp},
                      {"tn", b.counts.tn},
                      {"tpr", to_json(b.rates.tpr)},
                      {"fnr", to_json(b.rates.fnr)},
                      {"fpr", to_json(b.rates.fpr)},
                      {"tnr", to_json(b.rates.tnr)},
                      {"prevalence", b.prevalence},
                      {"predicted_prevalence", b.predicted_prevalence}});
  return json{{"auroc", r.auroc ? json(*r.auroc) : json(nullptr)},
              {"threshold", std::isfinite(r.threshold) ? json(r.threshold)
                                                       : json(format_real(r.threshold))},
              {"n_boot", r.n_boot},
              {"seed", r.seed},
              {"blocks", std::move(blocks)},
              {"notices", r.notices}};
}

inline std::string fmt_rate(const Rate& r) {
  if (!r.value) return "NA";
  std::string s = format_fixed(*r.value, 2);
  if (r.lo && r.hi) s += " (" + format_fixed(*r.lo, 2) + "-" + format_fixed(*r.hi, 2) + ")";
  return s;
}

// Plain-text rendering in the layout of the published test-set table.
inline std::string render_table(const EvalReport& r) {
  std::ostringstream out;
  out << "Test set classifications using threshold = " << format_real(r.threshold) << "\n";
  if (r.auroc) out << "AUROC = " << format_fixed(*r.auroc, 3) << "\n";
  out << "Group\tCondition\tP+\tP-\tTotal\tTPR/FPR\tFNR/TNR\tPrevalence\n";
  for (const auto& b : r.blocks) {
    const auto& c = b.counts;
    out << b.group << "\tC+\t" << c.tp << "\t" << c.fn << "\t" << (c.tp + c.fn) << "\t"
        << fmt_rate(b.rates.tpr) << "\t" << fmt_rate(b.rates.fnr) << "\t"
        << format_fixed(b.prevalence, 2) << "\n";
    out << "\tC-\t" << c.fp << "\t" << c.tn << "\t" << (c.fp + c.tn) << "\t"
        << fmt_rate(b.rates.fpr) << "\t" << fmt_rate(b.rates.tnr) << "\t\n";
    out << "\tTotal\t" << (c.tp + c.fp) << "\t" << (c.fn + c.tn) << "\t" << c.total()
        << "\tPredicted prevalence\t" << format_fixed(b.predicted_prevalence, 2) << "\t\n";
  }
  for (const auto& n : r.notices) out << "Note: " << n << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Points of interest on a ROC curve

struct Annotation {
  std::string name;
  double threshold = kInf;
  double fpr = 0.0;  // on the test data
  double tpr = 0.0;
};

inline RocPoint point_at(std::span<const double> scores, std::span<const int> labels, double t) {
  const auto c = confusion_counts(scores, labels, t);
  return {t, static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn),
          static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn)};
}

inline std::vector<Annotation> roc_points_of_interest(std::span<const double> train_scores,
                                                      std::span<const int> train_labels,
                                                      std::span<const double> test_scores,
                                                      std::span<const int> test_labels) {
  std::vector<Annotation> out;
  auto add = [&](std::string name, double t) {
    const auto p = point_at(test_scores, test_labels, t);
    out.push_back({std::move(name), t, p.fpr, p.tpr});
  };
  add("train_fpr_0.05", calibrate_threshold(train_scores, train_labels, 0.05));
  add("test_tnr_0.90", calibrate_threshold(test_scores, test_labels, 0.10));

  const auto curve = roc_curve(test_scores, test_labels);
  const RocPoint* best = &curve.points.front();
  double best_d = kInf;
  for (const auto& p : curve.points) {
    const double d = std::hypot(p.fpr, 1.0 - p.tpr);
    if (d < best_d) {
      best_d = d;
      best = &p;
    }
  }
  out.push_back({"closest_to_perfect", best->threshold, best->fpr, best->tpr});

  // Largest threshold reaching TPR >= 0.90.
  for (const auto& p : curve.points)
    if (p.tpr >= 0.90 - 1e-12) {
      out.push_back({"test_tpr_0.90", p.threshold, p.fpr, p.tpr});
      break;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Cohort summary

struct SummaryRow {
  std::string split;
  std::string group;  // Male, Female, Total
  std::size_t size = 0;
  double age_min = 0.0, age_max = 0.0, age_mean = 0.0;
  double prevalence = 0.0;
};

struct CohortSummary {
  std::vector<SummaryRow> rows;
  std::vector<std::string> notices;
};

// Per subject: age at the latest study, positive if any study is positive.
// `splits` maps a split name to its subjects, in display order.
inline CohortSummary cohort_summary(
    const CohortManifest& manifest, const StudyLabels& labels,
    const std::vector<std::pair<std::string, std::vector<std::string>>>& splits) {
  struct Subject {
    Sex sex = Sex::female;
    double age = 0.0;
    long long ts = std::numeric_limits<long long>::min();
    bool positive = false;
  };
  const auto lab = labels.as_map();
  std::map<std::string, Subject> subjects;
  for (const auto& r : manifest.rows()) {
    auto& s = subjects[r.subject_id];
    const long long ts = manifest.timestamp_seconds(r);
    if (ts > s.ts) {
      s.ts = ts;
      s.age = r.age;
      s.sex = r.sex;
    }
    auto it = lab.find(r.study_id);
    if (it != lab.end() && it->second) s.positive = true;
  }
  CohortSummary out;
  for (const auto& [split, ids] : splits) {
    for (const char* group : {"Male", "Female", "Total"}) {
      SummaryRow row{split, group};
      double sum = 0.0;
      std::size_t pos = 0;
      for (const auto& id : ids) {
        auto it = subjects.find(id);
        if (it == subjects.end()) throw ValidationError("summary: unknown subject '" + id + "'");
        const auto& s = it->second;
        if (std::string(group) == "Male" && s.sex != Sex::male) continue;
        if (std::string(group) == "Female" && s.sex != Sex::female) continue;
        if (row.size == 0 || s.age < row.age_min) row.age_min = s.age;
        if (row.size == 0 || s.age > row.age_max) row.age_max = s.age;
        sum += s.age;
        pos += s.positive;
        ++row.size;
      }
      if (row.size == 0) {
        out.notices.push_back("split " + split + " group " + group + " is empty and omitted");
        continue;
      }
      row.age_mean = sum / static_cast<double>(row.size);
      row.prevalence = static_cast<double>(pos) / static_cast<double>(row.size);
      out.rows.push_back(row);
    }
  }
  return out;
}

inline std::string render_summary(const CohortSummary& s) {
  auto age = [](double a) {
    return a == std::floor(a) ? std::to_string(static_cast<long long>(a)) : format_real(a);
  };
  std::ostringstream out;
  out << "Dataset\tGroup\tSize\tAge range\tAge mean\tPrevalence\n";
  std::string last;
  for (const auto& r : s.rows) {
    out << (r.split == last ? "" : r.split) << "\t" << r.group << "\t" << r.size << "\t"
        << age(r.age_min) << "-" << age(r.age_max) << "\t" << format_fixed(r.age_mean, 2) << "\t"
        << format_fixed(r.prevalence, 3) << "\n";
    last = r.split;
  }
  for (const auto& n : s.notices) out << "Note: " << n << "\n";
  return out.str();
}

// Review of misclassified studies on a five-point likelihood scale, as
// supplied by an external reader.
inline std::string render_review_table(const std::array<std::size_t, 5>& false_positives,
                                       const std::array<std::size_t, 5>& false_negatives) {
  static const char* kScale[] = {"Very unlikely", "Somewhat unlikely", "Neutral",
                                 "Somewhat likely", "Very likely"};
  std::ostringstream out;
  out << "\t";
  for (const char* s : kScale) out << s << "\t";
  out << "All\n";
  auto row = [&](const char* name, const std::array<std::size_t, 5>& v) {
    const std::size_t total = std::accumulate(v.begin(), v.end(), std::size_t{0});
    out << name << "\t";
    for (auto c : v) {
      const long pct = total ? std::lround(100.0 * static_cast<double>(c) / static_cast<double>(total)) : 0;
      out << c << " (" << pct << "%)\t";
    }
    out << total << "\n";
  };
  row("False positives", false_positives);
  row("False negatives", false_negatives);
  return out.str();
}

}  // namespace ahfx::eval
