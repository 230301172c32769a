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

// Analytic ground truth: voxelized geometric phantoms with closed-form
// volumes and diameters, and synthetic Gaussian cohorts with a computable
// Bayes-optimal AUROC.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ahfx/common.hpp"
#include "ahfx/dataio.hpp"

namespace ahfx::phantom {

using json = nlohmann::json;

enum class Shape { ellipsoid, cylinder, box };

inline Shape parse_shape(const std::string& s) {
  if (s == "ellipsoid") return Shape::ellipsoid;
  if (s == "cylinder") return Shape::cylinder;
  if (s == "box") return Shape::box;
  throw ValidationError("unknown phantom shape '" + s + "'");
}

inline std::string to_string(Shape s) {
  switch (s) {
    case Shape::ellipsoid: return "ellipsoid";
    case Shape::cylinder: return "cylinder";
    case Shape::box: return "box";
  }
  return "";
}

// Shape parameters, all in mm along axes (0, 1, 2):
//   ellipsoid: semi-axes
//   cylinder:  cross-section semi-axes on axes 0 and 1, half-length on axis 2
//   box:       half-extents
struct PhantomShape {
  std::string structure;
  Shape shape = Shape::ellipsoid;
  std::array<double, 3> center{0, 0, 0};
  std::array<double, 3> params{1, 1, 1};
  int fill_hu = 0;
};

struct PhantomSpec {
  Geometry geometry;
  int background_hu = -1000;
  std::vector<PhantomShape> shapes;  // later shapes overwrite earlier ones

  static PhantomSpec from_json(const json& j) {
    PhantomSpec s;
    s.geometry.dims = j.at("dims").get<std::array<int, 3>>();
    s.geometry.spacing = j.at("spacing_mm").get<std::array<double, 3>>();
    s.background_hu = j.value("background_hu", -1000);
    for (const auto& e : j.at("shapes")) {
      PhantomShape p;
      p.structure = e.at("structure").get<std::string>();
      p.shape = parse_shape(e.at("shape").get<std::string>());
      p.center = e.at("center_mm").get<std::array<double, 3>>();
      p.params = e.at("params_mm").get<std::array<double, 3>>();
      p.fill_hu = e.value("fill_hu", 0);
      s.shapes.push_back(p);
    }
    s.validate();
    return s;
  }

  json to_json() const {
    json shapes_j = json::array();
    for (const auto& p : shapes)
      shapes_j.push_back({{"structure", p.structure},
                          {"shape", to_string(p.shape)},
                          {"center_mm", p.center},
                          {"params_mm", p.params},
                          {"fill_hu", p.fill_hu}});
    return {{"dims", geometry.dims},
            {"spacing_mm", geometry.spacing},
            {"background_hu", background_hu},
            {"shapes", shapes_j}};
  }

  void validate() const {
    geometry.validate();
    const auto map = LabelMap::standard();
    std::set<std::string> seen;
    for (const auto& p : shapes) {
      if (!map.contains(p.structure))
        throw ValidationError("phantom structure '" + p.structure + "' is not in the vocabulary");
      if (!seen.insert(p.structure).second)
        throw ValidationError("phantom structure '" + p.structure + "' appears twice");
      for (int a = 0; a < 3; ++a) {
        if (!(p.params[a] > 0.0) || !std::isfinite(p.params[a]))
          throw ValidationError("phantom '" + p.structure + "': parameters must be positive");
        const double extent = geometry.dims[a] * geometry.spacing[a];
        if (p.center[a] - p.params[a] < 0.0 || p.center[a] + p.params[a] > extent)
          throw ValidationError("phantom '" + p.structure + "' exceeds the grid bounds on axis " +
                                std::to_string(a));
      }
    }
  }
};

struct Truth {
  std::string structure;
  double volume_mm3 = 0.0;
  double diameter_mm = 0.0;  // diameter of the largest inscribed sphere
};

inline Truth analytic_truth(const PhantomShape& p) {
  const auto& [a, b, c] = p.params;
  Truth t{p.structure, 0.0, 2.0 * std::min({a, b, c})};
  switch (p.shape) {
    case Shape::ellipsoid: t.volume_mm3 = 4.0 / 3.0 * std::numbers::pi * a * b * c; break;
    case Shape::cylinder: t.volume_mm3 = std::numbers::pi * a * b * 2.0 * c; break;
    case Shape::box: t.volume_mm3 = 8.0 * a * b * c; break;
  }
  return t;
}

// Center-point membership; voxel (i, j, k) has its center at
// ((i + 0.5) s0, (j + 0.5) s1, (k + 0.5) s2).
inline bool contains(const PhantomShape& p, const std::array<double, 3>& x) {
  std::array<double, 3> u;
  for (int a = 0; a < 3; ++a) u[a] = (x[a] - p.center[a]) / p.params[a];
  switch (p.shape) {
    case Shape::ellipsoid: return u[0] * u[0] + u[1] * u[1] + u[2] * u[2] <= 1.0;
    case Shape::cylinder: return u[0] * u[0] + u[1] * u[1] <= 1.0 && std::abs(u[2]) <= 1.0;
    case Shape::box: return std::abs(u[0]) <= 1.0 && std::abs(u[1]) <= 1.0 && std::abs(u[2]) <= 1.0;
  }
  return false;
}

struct Phantom {
  IntensityGrid intensity;
  LabelGrid labels;
  LabelMap label_map;
  std::vector<Truth> truths;
};

inline Phantom build_phantom(const PhantomSpec& spec) {
  spec.validate();
  const auto& g = spec.geometry;
  Phantom ph{IntensityGrid(g, static_cast<std::int16_t>(spec.background_hu)), LabelGrid(g, 0),
             LabelMap::standard(), {}};
  for (const auto& p : spec.shapes) {
    const auto code = ph.label_map.code(p.structure);
    for (int i = 0; i < g.dims[0]; ++i)
      for (int j = 0; j < g.dims[1]; ++j)
        for (int k = 0; k < g.dims[2]; ++k) {
          const std::array<double, 3> x{(i + 0.5) * g.spacing[0], (j + 0.5) * g.spacing[1],
                                        (k + 0.5) * g.spacing[2]};
          if (!contains(p, x)) continue;
          ph.labels.at(i, j, k) = code;
          ph.intensity.at(i, j, k) = static_cast<std::int16_t>(p.fill_hu);
        }
    ph.truths.push_back(analytic_truth(p));
  }
  return ph;
}

inline json truths_json(const std::vector<Truth>& truths) {
  json j = json::object();
  for (const auto& t : truths)
    j[t.structure] = {{"volume_mm3", t.volume_mm3},
                      {"volume_ml", t.volume_mm3 / 1000.0},
                      {"diameter_mm", t.diameter_mm}};
  return j;
}

// ---------------------------------------------------------------------------
// Synthetic cohorts

struct FeatureGen {
  std::string name;
  std::string distribution = "gaussian";
  double mean_neg = 0.0;
  double mean_pos = 0.0;
  double sd = 1.0;
  double missing_rate = 0.0;
};

struct CohortGenSpec {
  int n_subjects = 100;
  double prevalence = 0.1;
  std::uint64_t seed = 0;
  std::vector<FeatureGen> features;
  double female_fraction = 0.5;
  double age_mean = 70.0;
  double age_sd = 12.0;
  double replicate_sd = 0.05;  // scan-to-scan noise around the study's latent vector
  int max_studies = 2;
  int max_scans = 3;

  void validate() const {
    if (n_subjects < 1) throw ValidationError("cohort needs at least one subject");
    if (!(prevalence > 0.0 && prevalence < 1.0))
      throw ValidationError("prevalence must lie in (0, 1)");
    if (features.empty()) throw ValidationError("cohort spec has no features");
    std::set<std::string> names;
    for (const auto& f : features) {
      if (!names.insert(f.name).second)
        throw ValidationError("duplicate cohort feature '" + f.name + "'");
      if (!(f.sd > 0.0)) throw ValidationError("feature '" + f.name + "': sd must be positive");
      if (!(f.missing_rate >= 0.0 && f.missing_rate < 1.0))
        throw ValidationError("feature '" + f.name + "': missing_rate must lie in [0, 1)");
    }
    if (!(female_fraction >= 0.0 && female_fraction <= 1.0))
      throw ValidationError("female_fraction must lie in [0, 1]");
    if (!(age_sd >= 0.0) || !(replicate_sd >= 0.0))
      throw ValidationError("age_sd and replicate_sd must be non-negative");
    if (max_studies < 1 || max_scans < 1) throw ValidationError("max_studies and max_scans must be >= 1");
  }

  static CohortGenSpec from_json(const json& j) {
    CohortGenSpec s;
    s.n_subjects = j.at("n_subjects").get<int>();
    s.prevalence = j.at("prevalence").get<double>();
    s.seed = j.value("seed", std::uint64_t{0});
    const double default_missing = j.value("missing_rate", 0.0);
    for (const auto& e : j.at("features")) {
      FeatureGen f;
      f.name = e.at("name").get<std::string>();
      f.distribution = e.value("distribution", std::string("gaussian"));
      f.mean_neg = e.at("mean_neg").get<double>();
      f.mean_pos = e.at("mean_pos").get<double>();
      f.sd = e.value("sd", 1.0);
      f.missing_rate = e.value("missing_rate", default_missing);
      s.features.push_back(f);
    }
    s.female_fraction = j.value("female_fraction", s.female_fraction);
    s.age_mean = j.value("age_mean", s.age_mean);
    s.age_sd = j.value("age_sd", s.age_sd);
    s.replicate_sd = j.value("replicate_sd", s.replicate_sd);
    s.max_studies = j.value("max_studies", s.max_studies);
    s.max_scans = j.value("max_scans", s.max_scans);
    s.validate();
    return s;
  }

  json to_json() const {
    json fs = json::array();
    for (const auto& f : features)
      fs.push_back({{"name", f.name},
                    {"distribution", f.distribution},
                    {"mean_neg", f.mean_neg},
                    {"mean_pos", f.mean_pos},
                    {"sd", f.sd},
                    {"missing_rate", f.missing_rate}});
    return {{"n_subjects", n_subjects},   {"prevalence", prevalence},
            {"seed", seed},               {"features", fs},
            {"female_fraction", female_fraction}, {"age_mean", age_mean},
            {"age_sd", age_sd},           {"replicate_sd", replicate_sd},
            {"max_studies", max_studies}, {"max_scans", max_scans}};
  }
};

struct Cohort {
  CohortManifest manifest;
  FeatureTable features;
  StudyLabels labels;
  std::vector<int> subject_labels;  // manifest subject order
};

namespace detail {

inline std::mt19937_64 subject_rng(std::uint64_t seed, std::uint64_t subject) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(subject), static_cast<std::uint32_t>(subject >> 32)};
  return std::mt19937_64(seq);
}

// Draws are built from raw 64-bit words so results do not depend on the
// standard library's distribution implementations.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double standard_normal(std::mt19937_64& rng) {
  double u1;
  do u1 = uniform01(rng);
  while (u1 <= 0.0);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(uniform01(rng) * (hi - lo + 1));
}

inline std::string pad(int v, int width) {
  auto s = std::to_string(v);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

}  // namespace detail

// Exactly llround(n * prevalence) subjects are positive, chosen by a seeded
// shuffle (clamped so both classes are present when n >= 2). Each subject
// has 1..max_studies studies sharing its class; each study draws a latent
// feature vector and 1..max_scans scans that are noisy replicates of it.
inline Cohort generate_cohort(const CohortGenSpec& spec) {
  spec.validate();
  const int n = spec.n_subjects;
  long long n_pos = std::llround(n * spec.prevalence);
  if (n >= 2) n_pos = std::clamp(n_pos, 1LL, static_cast<long long>(n) - 1);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  {
    auto rng = detail::subject_rng(spec.seed, std::numeric_limits<std::uint64_t>::max());
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(detail::uniform01(rng) * static_cast<double>(i));
      std::swap(order[i - 1], order[j]);
    }
  }
  std::vector<int> label(static_cast<std::size_t>(n), 0);
  for (long long i = 0; i < n_pos; ++i) label[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;

  std::vector<std::string> names;
  for (const auto& f : spec.features) names.push_back(f.name);
  Cohort c;
  c.features = FeatureTable(names);
  std::vector<ManifestRow> rows;
  const int width = static_cast<int>(std::to_string(n).size());
  for (int s = 0; s < n; ++s) {
    auto rng = detail::subject_rng(spec.seed, static_cast<std::uint64_t>(s));
    const int y = label[static_cast<std::size_t>(s)];
    const std::string subject = "S" + detail::pad(s, width);
    const Sex sex = detail::uniform01(rng) < spec.female_fraction ? Sex::female : Sex::male;
    double age = spec.age_mean + spec.age_sd * detail::standard_normal(rng);
    age = std::round(std::clamp(age, 18.0, 105.0));
    const int n_studies = detail::uniform_int(rng, 1, spec.max_studies);
    for (int st = 0; st < n_studies; ++st) {
      const std::string study = subject + "-T" + std::to_string(st);
      std::vector<double> latent;
      for (const auto& f : spec.features)
        latent.push_back((y ? f.mean_pos : f.mean_neg) + f.sd * detail::standard_normal(rng));
      const int n_scans = detail::uniform_int(rng, 1, spec.max_scans);
      for (int sc = 0; sc < n_scans; ++sc) {
        ManifestRow r;
        r.subject_id = subject;
        r.study_id = study;
        r.scan_id = study + "-C" + std::to_string(sc);
        r.acquisition_timestamp = "2020-" + detail::pad(1 + st, 2) + "-01T08:" + detail::pad(sc, 2) + ":00";
        r.sex = sex;
        r.age = age + st;
        r.contrast_flag = sc % 2 == 1;
        std::vector<MaybeReal> cells;
        for (std::size_t fi = 0; fi < spec.features.size(); ++fi) {
          const double v = latent[fi] + spec.replicate_sd * detail::standard_normal(rng);
          const bool missing = detail::uniform01(rng) < spec.features[fi].missing_rate;
          cells.push_back(missing ? MaybeReal{} : MaybeReal{v});
        }
        c.features.add_row(r.scan_id, std::move(cells));
        rows.push_back(std::move(r));
      }
      c.labels.study_ids.push_back(study);
      c.labels.labels.push_back(y);
    }
    c.subject_labels.push_back(y);
  }
  c.manifest = CohortManifest(std::move(rows));
  return c;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// AUROC of the true log-likelihood ratio of one latent study vector. With a
// shared per-feature variance the ratio is linear, so its class-conditional
// laws are N(+-d^2/2, d^2); the AUROC integral over them is evaluated with
// composite Simpson's rule.
inline double bayes_auroc(const CohortGenSpec& spec) {
  double d2 = 0.0;
  for (const auto& f : spec.features) {
    if (f.distribution != "gaussian")
      throw ValidationError("bayes_auroc needs Gaussian features; '" + f.name + "' is '" +
                            f.distribution + "'");
    if (!(f.sd > 0.0)) throw ValidationError("feature '" + f.name + "': sd must be positive");
    const double z = (f.mean_pos - f.mean_neg) / f.sd;
    d2 += z * z;
  }
  if (d2 == 0.0) return 0.5;
  const double d = std::sqrt(d2);
  // P(L_pos > L_neg) = integral of pdf_pos(l) * cdf_neg(l) dl
  const double mu_pos = d2 / 2.0, mu_neg = -d2 / 2.0;
  const double lo = mu_pos - 12.0 * d, hi = mu_pos + 12.0 * d;
  const int m = 20000;
  const double h = (hi - lo) / m;
  auto f = [&](double l) {
    const double z = (l - mu_pos) / d;
    const double pdf = std::exp(-0.5 * z * z) / (d * std::sqrt(2.0 * std::numbers::pi));
    return pdf * normal_cdf((l - mu_neg) / d);
  };
  double sum = f(lo) + f(hi);
  for (int i = 1; i < m; ++i) sum += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return sum * h / 3.0;
}

}  // namespace ahfx::phantom
