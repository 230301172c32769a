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

// Measurements on segmented chest CT volumes: derived structures, volumes,
// densities, inscribed diameters, ratios, robust Z scores and the resulting
// feature vector.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "ahfx/common.hpp"
#include "ahfx/dataio.hpp"

namespace ahfx::volumetry {

// Distance from the lung surface that still counts as lung boundary.
inline constexpr double kBoundaryBandMm = 10.0;
// Consistency constant of the modified Z score.
inline constexpr double kModifiedZScale = 0.6745;

// ---------------------------------------------------------------------------
// Distance transform

namespace detail {

// Lower envelope of parabolas along one line. `f` holds squared distances
// (infinity where unknown); sites sit at i * step. Two virtual background
// sites at -1 and n model the exterior of the grid.
inline void edt_line(std::vector<double>& f, double step, std::vector<double>& xs,
                     std::vector<double>& fs, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  xs.clear();
  fs.clear();
  xs.push_back(-step);
  fs.push_back(0.0);
  for (int i = 0; i < n; ++i) {
    if (f[i] < inf) {
      xs.push_back(i * step);
      fs.push_back(f[i]);
    }
  }
  xs.push_back(n * step);
  fs.push_back(0.0);

  const int m = static_cast<int>(xs.size());
  v.assign(m, 0);
  z.assign(m + 1, 0.0);
  int k = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = 1; q < m; ++q) {
    double s = ((fs[q] + xs[q] * xs[q]) - (fs[v[k]] + xs[v[k]] * xs[v[k]])) /
               (2.0 * (xs[q] - xs[v[k]]));
    // z[0] is -inf, so this stops at k == 0 at the latest.
    while (s <= z[k]) {
      --k;
      s = ((fs[q] + xs[q] * xs[q]) - (fs[v[k]] + xs[v[k]] * xs[v[k]])) /
          (2.0 * (xs[q] - xs[v[k]]));
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (int i = 0; i < n; ++i) {
    const double x = i * step;
    while (z[k + 1] < x) ++k;
    const double d = x - xs[v[k]];
    f[i] = d * d + fs[v[k]];
  }
}

}  // namespace detail

// Squared Euclidean distance (mm^2) from each voxel centre to the nearest
// voxel centre outside the mask. Everything beyond the grid counts as
// outside. Background voxels get 0.
inline std::vector<double> squared_distance_to_exterior(const Mask& mask) {
  const auto& g = mask.geometry;
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(g.voxel_count());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = mask.data[i] ? inf : 0.0;

  std::vector<double> line, xs, fs, z;
  std::vector<int> v;
  auto pass = [&](int axis) {
    const int len = g.dims[axis];
    const int a = axis == 0 ? 1 : 0;
    const int b = axis == 2 ? 1 : 2;
    for (int u = 0; u < g.dims[a]; ++u) {
      for (int w = 0; w < g.dims[b]; ++w) {
        line.resize(len);
        std::array<int, 3> idx{};
        idx[a] = u;
        idx[b] = w;
        for (int t = 0; t < len; ++t) {
          idx[axis] = t;
          line[t] = d[g.index(idx[0], idx[1], idx[2])];
        }
        detail::edt_line(line, g.spacing[axis], xs, fs, v, z);
        for (int t = 0; t < len; ++t) {
          idx[axis] = t;
          d[g.index(idx[0], idx[1], idx[2])] = line[t];
        }
      }
    }
  };
  pass(2);
  pass(1);
  pass(0);
  return d;
}

// ---------------------------------------------------------------------------
// Structures

inline Mask mask_of(const LabelGrid& labels, std::uint8_t code) {
  Mask m(labels.geometry, 0);
  for (std::size_t i = 0; i < labels.data.size(); ++i) m.data[i] = labels.data[i] == code;
  return m;
}

inline Mask mask_union(const Mask& a, const Mask& b) {
  Mask m = a;
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = a.data[i] | b.data[i];
  return m;
}

inline Mask mask_difference(const Mask& a, const Mask& b) {
  Mask m = a;
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = a.data[i] && !b.data[i];
  return m;
}

inline std::size_t voxel_count(const Mask& m) {
  return static_cast<std::size_t>(std::count(m.data.begin(), m.data.end(), std::uint8_t{1}));
}

struct DerivedStructureSet {
  std::map<std::string, Mask> masks;  // ten base structures + four derived

  const Mask& operator[](const std::string& name) const {
    auto it = masks.find(name);
    if (it == masks.end()) throw ValidationError("no structure named '" + name + "'");
    return it->second;
  }
};

// Voxels of `tissue` within `band_mm` of the exterior of `outer`.
inline Mask inner_band(const Mask& tissue, const Mask& outer, double band_mm) {
  const auto d2 = squared_distance_to_exterior(outer);
  const double limit = band_mm * band_mm * (1.0 + 1e-12);
  Mask m(tissue.geometry, 0);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = tissue.data[i] && d2[i] <= limit;
  return m;
}

inline DerivedStructureSet derive_structures(const LabelGrid& labels, const LabelMap& map) {
  DerivedStructureSet s;
  for (const auto& name : structure_vocabulary()) {
    if (!map.contains(name))
      throw ValidationError("label map is missing required structure '" + name + "'");
    s.masks.emplace(name, mask_of(labels, map.code(name)));
  }
  const Mask& lung = s["lung"];
  const Mask& effusion = s["pleural_effusion"];
  Mask total_lung = mask_union(lung, effusion);
  Mask tissue = mask_difference(lung, effusion);
  Mask boundary = inner_band(tissue, total_lung, kBoundaryBandMm);
  Mask heart = s["left_atrium"];
  for (const char* part : {"right_atrium", "left_ventricle", "right_ventricle", "myocardium"})
    heart = mask_union(heart, s[part]);
  s.masks.emplace("total_lung", std::move(total_lung));
  s.masks.emplace("lung_tissue", std::move(tissue));
  s.masks.emplace("lung_boundary", std::move(boundary));
  s.masks.emplace("total_heart", std::move(heart));
  return s;
}

// ---------------------------------------------------------------------------
// Measurements

// Millilitres; exact up to the final floating-point product.
inline double measure_volume(const Mask& mask) {
  return static_cast<double>(voxel_count(mask)) * mask.geometry.voxel_volume_mm3() / 1000.0;
}

enum class DensityStat { mean, median };

// Mean or median HU inside the mask; missing for an empty mask. The median
// of an even count is the lower middle element.
inline MaybeReal measure_density(const IntensityGrid& intensity, const Mask& mask,
                                 DensityStat stat) {
  if (!(intensity.geometry.dims == mask.geometry.dims))
    throw ValidationError("intensity and mask grids differ in dims");
  std::vector<std::int16_t> values;
  for (std::size_t i = 0; i < mask.data.size(); ++i)
    if (mask.data[i]) values.push_back(intensity.data[i]);
  if (values.empty()) return std::nullopt;
  if (stat == DensityStat::mean) {
    // Integer accumulation keeps the result independent of summation order.
    long long sum = 0;
    for (auto v : values) sum += v;
    return static_cast<double>(sum) / static_cast<double>(values.size());
  }
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
  std::nth_element(values.begin(), mid, values.end());
  return static_cast<double>(*mid);
}

// Diameter of the largest inscribed sphere: twice the largest distance from
// a voxel centre to the nearest outside voxel centre.
inline MaybeReal measure_diameter(const Mask& mask) {
  if (voxel_count(mask) == 0) return std::nullopt;
  const auto d2 = squared_distance_to_exterior(mask);
  return 2.0 * std::sqrt(*std::max_element(d2.begin(), d2.end()));
}

struct StructureMeasurement {
  double volume_ml = 0.0;
  bool missing = true;  // empty structure
  MaybeReal mean_hu;
  MaybeReal median_hu;
  MaybeReal diameter_mm;
};

// Volumes are measured for every structure; densities and diameters only
// for the structures that become features.
struct Measurements {
  std::map<std::string, StructureMeasurement> structures;

  const StructureMeasurement& operator[](const std::string& name) const {
    auto it = structures.find(name);
    if (it == structures.end()) throw ValidationError("no measurement for '" + name + "'");
    return it->second;
  }
};

inline const std::vector<std::string>& density_structures() {
  static const std::vector<std::string> v = {"lung_tissue", "lung_boundary", "vena_cava_inferior",
                                             "right_atrium"};
  return v;
}

inline const std::vector<std::string>& diameter_structures() {
  static const std::vector<std::string> v = {"vena_cava_inferior", "pulmonary_artery"};
  return v;
}

inline Measurements measure_structures(const IntensityGrid& intensity,
                                       const DerivedStructureSet& structures) {
  const auto& dens = density_structures();
  const auto& diam = diameter_structures();
  Measurements m;
  for (const auto& [name, mask] : structures.masks) {
    StructureMeasurement s;
    s.volume_ml = measure_volume(mask);
    s.missing = voxel_count(mask) == 0;
    if (std::find(dens.begin(), dens.end(), name) != dens.end()) {
      s.mean_hu = measure_density(intensity, mask, DensityStat::mean);
      s.median_hu = measure_density(intensity, mask, DensityStat::median);
    }
    if (std::find(diam.begin(), diam.end(), name) != diam.end())
      s.diameter_mm = measure_diameter(mask);
    m.structures.emplace(name, s);
  }
  return m;
}

inline Measurements measure_scan(const IntensityGrid& intensity, const LabelGrid& labels,
                                 const LabelMap& map) {
  if (!(intensity.geometry == labels.geometry))
    throw ValidationError("intensity and label grids differ in geometry");
  return measure_structures(intensity, derive_structures(labels, map));
}

// ---------------------------------------------------------------------------
// Modified Z scores

struct ZEntry {
  double median = 0.0;
  double mad = 0.0;
  bool degenerate = false;  // MAD == 0

  bool operator==(const ZEntry&) const = default;
};

// Per-volume-feature reference fitted on training scans only.
struct ZReference {
  std::map<std::string, ZEntry> entries;

  json to_json() const {
    json j = json::object();
    for (const auto& [k, e] : entries)
      j[k] = {{"median", e.median}, {"mad", e.mad}, {"degenerate", e.degenerate}};
    return json{{"scale", kModifiedZScale}, {"entries", j}};
  }
  static ZReference from_json(const json& j) {
    ZReference r;
    for (const auto& [k, e] : j.at("entries").items())
      r.entries[k] = {e.at("median").get<double>(), e.at("mad").get<double>(),
                      e.at("degenerate").get<bool>()};
    return r;
  }
  bool operator==(const ZReference&) const = default;
};

namespace detail {
inline double lower_median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}
}  // namespace detail

// Median and MAD of one structure's training volumes. Empty input gives no
// entry; a single value is an error.
inline std::optional<ZEntry> fit_zscore_entry(const std::vector<MaybeReal>& values,
                                              const std::string& name) {
  std::vector<double> present;
  for (const auto& v : values)
    if (v) present.push_back(*v);
  if (present.empty()) return std::nullopt;
  if (present.size() < 2)
    throw ValidationError("z reference for '" + name + "' needs at least 2 training values");
  ZEntry e;
  e.median = detail::lower_median(present);
  std::vector<double> dev;
  dev.reserve(present.size());
  for (double v : present) dev.push_back(std::abs(v - e.median));
  e.mad = detail::lower_median(std::move(dev));
  e.degenerate = !(e.mad > 0.0);
  return e;
}

inline ZReference fit_zscore_reference(const std::map<std::string, std::vector<MaybeReal>>& volumes) {
  ZReference r;
  for (const auto& [name, vals] : volumes)
    if (auto e = fit_zscore_entry(vals, name)) r.entries.emplace(name, *e);
  return r;
}

inline MaybeReal apply_zscore(MaybeReal x, const ZEntry& e) {
  if (!x || e.degenerate) return std::nullopt;
  return kModifiedZScale * (*x - e.median) / e.mad;
}

// ---------------------------------------------------------------------------
// Feature vectors

struct ScanMeta {
  double age = 0.0;
  Sex sex = Sex::female;
  bool contrast_flag = false;
};

struct FeatureVector {
  std::vector<std::string> names;
  std::vector<MaybeReal> values;

  MaybeReal get(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return values[i];
    throw ValidationError("feature vector lacks '" + name + "'");
  }
  void push(std::string name, MaybeReal v) {
    names.push_back(std::move(name));
    values.push_back(v);
  }
};

// Volume features, in output order: (feature name, structure).
inline const std::vector<std::pair<std::string, std::string>>& volume_features() {
  static const std::vector<std::pair<std::string, std::string>> v = {
      {"vol_total_lung", "total_lung"},
      {"vol_pleural_effusion", "pleural_effusion"},
      {"vol_total_heart", "total_heart"},
      {"vol_left_ventricle", "left_ventricle"},
      {"vol_right_ventricle", "right_ventricle"},
      {"vol_left_atrium", "left_atrium"},
      {"vol_right_atrium", "right_atrium"},
      {"vol_pericardial_effusion", "pericardial_effusion"}};
  return v;
}

// The twelve features of the final published model.
inline const std::vector<std::string>& final_model_features() {
  static const std::vector<std::string> v = {
      "mean_lung_boundary",     "ratio_pleural_effusion", "vol_left_atrium",
      "vol_pleural_effusion",   "median_lung_tissue",     "mean_vena_cava_inferior",
      "vol_right_atrium",       "ratio_right_ventricle",  "abs_z_total_heart",
      "age",                    "mean_right_atrium",      "diam_vena_cava_inferior"};
  return v;
}

inline MaybeReal safe_ratio(const StructureMeasurement& num, const StructureMeasurement& den,
                            bool num_can_be_zero = false) {
  if ((num.missing && !num_can_be_zero) || den.missing || !(den.volume_ml > 0.0))
    return std::nullopt;
  return num.volume_ml / den.volume_ml;
}

// Everything except Z scores, which need a training-cohort reference.
inline FeatureVector base_features(const Measurements& m, const ScanMeta& meta) {
  FeatureVector fv;
  for (const auto& [feat, structure] : volume_features()) {
    const auto& s = m[structure];
    // An absent effusion is a real zero volume; any other empty structure is
    // a segmentation failure.
    const bool can_be_zero = structure == "pleural_effusion" || structure == "pericardial_effusion";
    fv.push(feat, (s.missing && !can_be_zero) ? MaybeReal{} : MaybeReal{s.volume_ml});
  }
  for (const auto& structure : diameter_structures())
    fv.push("diam_" + structure, m[structure].diameter_mm);

  const auto& lung = m["total_lung"];
  const auto& heart = m["total_heart"];
  fv.push("ratio_total_heart", safe_ratio(heart, lung));
  fv.push("ratio_pleural_effusion", safe_ratio(m["pleural_effusion"], lung, true));
  for (const char* part : {"left_atrium", "right_atrium", "left_ventricle", "right_ventricle"})
    fv.push(std::string("ratio_") + part, safe_ratio(m[part], heart));
  fv.push("ratio_pericardial_effusion", safe_ratio(m["pericardial_effusion"], heart, true));

  for (const auto& structure : density_structures()) {
    const auto& s = m[structure];
    fv.push("mean_" + structure, s.mean_hu);
    fv.push("median_" + structure, s.median_hu);
  }
  for (const auto& structure : density_structures()) {
    const auto& s = m[structure];
    fv.push("mean_" + structure + "_contrast", meta.contrast_flag ? s.mean_hu : MaybeReal{});
    fv.push("median_" + structure + "_contrast", meta.contrast_flag ? s.median_hu : MaybeReal{});
  }
  fv.push("age", meta.age);
  return fv;
}

// Appends z_<volume feature> for every volume feature and abs_z_total_heart.
inline void append_zscores(FeatureVector& fv, const ZReference& ref) {
  MaybeReal heart_z;
  for (const auto& [feat, structure] : volume_features()) {
    MaybeReal z;
    auto it = ref.entries.find(feat);
    if (it != ref.entries.end()) z = apply_zscore(fv.get(feat), it->second);
    fv.push("z_" + feat.substr(4), z);
    if (feat == "vol_total_heart") heart_z = z;
  }
  fv.push("abs_z_total_heart", heart_z ? MaybeReal{std::abs(*heart_z)} : MaybeReal{});
}

inline FeatureVector build_feature_vector(const Measurements& m, const ZReference& ref,
                                          const ScanMeta& meta) {
  auto fv = base_features(m, meta);
  append_zscores(fv, ref);
  return fv;
}

// Fits a Z reference from the volume columns of a feature table, using only
// the listed training scans.
inline ZReference fit_zscore_reference(const FeatureTable& table,
                                       const std::vector<std::string>& train_scans) {
  std::map<std::string, std::vector<MaybeReal>> vols;
  for (const auto& [feat, structure] : volume_features()) {
    auto col = table.find_column(feat);
    if (!col) throw ValidationError("feature table lacks volume column '" + feat + "'");
    auto& dst = vols[feat];
    for (const auto& id : train_scans) {
      auto row = table.find_row(id);
      if (!row) throw ValidationError("feature table lacks training scan '" + id + "'");
      dst.push_back(table.at(*row, *col));
    }
  }
  return fit_zscore_reference(vols);
}

// Adds the Z-score columns to a table of base features.
inline FeatureTable with_zscores(const FeatureTable& base, const ZReference& ref) {
  std::vector<std::string> names = base.names();
  FeatureVector probe;
  for (const auto& [feat, structure] : volume_features()) probe.push(feat, std::nullopt);
  append_zscores(probe, ref);
  for (std::size_t i = volume_features().size(); i < probe.names.size(); ++i)
    names.push_back(probe.names[i]);
  FeatureTable out(names);
  for (std::size_t r = 0; r < base.rows(); ++r) {
    FeatureVector fv{base.names(), base.row(r)};
    append_zscores(fv, ref);
    out.add_row(base.scan_ids()[r], fv.values);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Projections for visual QC

enum class Axis { x = 0, y = 1, z = 2 };

struct GrayImage {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * cols + c]; }
  bool operator==(const GrayImage&) const = default;
};

// Voxel counts along `axis`, rescaled so the largest count maps to 255.
inline GrayImage render_projection(const Mask& mask, Axis axis) {
  const auto& g = mask.geometry;
  const int a = static_cast<int>(axis);
  const int ra = a == 0 ? 1 : 0;
  const int cb = a == 2 ? 1 : 2;
  GrayImage img;
  img.rows = g.dims[ra];
  img.cols = g.dims[cb];
  std::vector<std::size_t> counts(static_cast<std::size_t>(img.rows) * img.cols, 0);
  for (int i = 0; i < g.dims[0]; ++i)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int k = 0; k < g.dims[2]; ++k) {
        if (!mask.at(i, j, k)) continue;
        const std::array<int, 3> idx{i, j, k};
        ++counts[static_cast<std::size_t>(idx[ra]) * img.cols + idx[cb]];
      }
  const std::size_t peak = counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end());
  img.pixels.assign(counts.size(), 0);
  if (peak == 0) return img;
  for (std::size_t p = 0; p < counts.size(); ++p)
    img.pixels[p] = static_cast<std::uint8_t>((counts[p] * 255 + peak / 2) / peak);
  return img;
}

// Binary PGM (P5).
inline std::string encode_pgm(const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.cols) + " " + std::to_string(img.rows) + "\n255\n";
  out.append(img.pixels.begin(), img.pixels.end());
  return out;
}

}  // namespace ahfx::volumetry
