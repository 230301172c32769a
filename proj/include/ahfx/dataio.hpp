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

// On-disk artifacts of a cohort: voxel volumes (JSON header + raw
// little-endian payload), label maps, the cohort manifest, feature tables and
// study labels. Readers enforce every invariant and name the first offending
// record; writers are deterministic so equal inputs give equal bytes.

#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ahfx/common.hpp"
#include "ahfx/csv.hpp"

namespace ahfx {

using json = nlohmann::json;

// Voxel lattice shape and physical spacing (mm per voxel) along each axis.
// Voxels are stored row-major: the last axis varies fastest.
struct Geometry {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * static_cast<std::size_t>(dims[1]) +
            static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(dims[2]) +
           static_cast<std::size_t>(k);
  }
  double voxel_volume_mm3() const { return spacing[0] * spacing[1] * spacing[2]; }

  bool operator==(const Geometry&) const = default;

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] <= 0) throw ValidationError("grid dims must be positive");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw ValidationError("grid spacing must be positive and finite");
    }
  }
};

template <typename Voxel>
struct Grid {
  Geometry geometry;
  std::vector<Voxel> data;

  Grid() = default;
  explicit Grid(const Geometry& g, Voxel fill = Voxel{})
      : geometry(g), data(g.voxel_count(), fill) {}

  Voxel& at(int i, int j, int k) { return data[geometry.index(i, j, k)]; }
  const Voxel& at(int i, int j, int k) const { return data[geometry.index(i, j, k)]; }

  bool operator==(const Grid&) const = default;
};

using IntensityGrid = Grid<std::int16_t>;  // Hounsfield units
using LabelGrid = Grid<std::uint8_t>;      // structure codes, 0 = background
using Mask = Grid<std::uint8_t>;           // 0 or 1

enum class VolumeKind { intensity_hu, label };

// Segmentation vocabulary.
inline const std::vector<std::string>& structure_vocabulary() {
  static const std::vector<std::string> names = {
      "left_atrium", "right_atrium", "left_ventricle",     "right_ventricle",
      "myocardium",  "pulmonary_artery", "vena_cava_inferior", "lung",
      "pleural_effusion", "pericardial_effusion"};
  return names;
}

// Structure name -> label code. Code 0 is background and never assigned.
class LabelMap {
 public:
  LabelMap() = default;
  explicit LabelMap(std::map<std::string, std::uint8_t> entries) : entries_(std::move(entries)) {
    validate();
  }

  // Codes 1..10 in vocabulary order.
  static LabelMap standard() {
    std::map<std::string, std::uint8_t> m;
    std::uint8_t code = 1;
    for (const auto& n : structure_vocabulary()) m[n] = code++;
    return LabelMap(std::move(m));
  }

  const std::map<std::string, std::uint8_t>& entries() const { return entries_; }
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  bool has_code(std::uint8_t code) const {
    for (const auto& [n, c] : entries_)
      if (c == code) return true;
    return false;
  }
  std::uint8_t code(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ValidationError("label map lacks structure '" + name + "'");
    return it->second;
  }

  json to_json() const {
    json j = json::object();
    for (const auto& [n, c] : entries_) j[n] = c;
    return j;
  }
  static LabelMap from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("label map must be a JSON object");
    std::map<std::string, std::uint8_t> m;
    for (const auto& [name, v] : j.items()) {
      if (!v.is_number_unsigned() || v.get<unsigned>() > 255)
        throw ValidationError("label map code for '" + name + "' must be in 0..255");
      m[name] = static_cast<std::uint8_t>(v.get<unsigned>());
    }
    return LabelMap(std::move(m));
  }

  bool operator==(const LabelMap&) const = default;

 private:
  void validate() const {
    std::set<std::uint8_t> seen;
    const auto& vocab = structure_vocabulary();
    for (const auto& [name, code] : entries_) {
      if (std::find(vocab.begin(), vocab.end(), name) == vocab.end())
        throw ValidationError("label map: unknown structure '" + name + "'");
      if (code == 0) throw ValidationError("label map: code 0 is reserved for background");
      if (!seen.insert(code).second)
        throw ValidationError("label map: duplicate code " + std::to_string(code));
    }
  }

  std::map<std::string, std::uint8_t> entries_;
};

// A volume as read from disk: either intensity or labels (with its map).
struct Volume {
  VolumeKind kind = VolumeKind::intensity_hu;
  IntensityGrid intensity;
  LabelGrid labels;
  std::optional<LabelMap> label_map;

  const Geometry& geometry() const {
    return kind == VolumeKind::intensity_hu ? intensity.geometry : labels.geometry;
  }
  bool operator==(const Volume&) const = default;
};

namespace detail {

// "<name>", "<name>.hdr.json" or "<name>.raw" -> "<name>".
inline std::string volume_stem(const std::string& path) {
  for (std::string_view suffix : {".hdr.json", ".raw"}) {
    if (path.size() > suffix.size() &&
        path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0)
      return path.substr(0, path.size() - suffix.size());
  }
  return path;
}

inline json geometry_header(const Geometry& g) {
  json h;
  h["dims"] = g.dims;
  h["spacing_mm"] = g.spacing;
  return h;
}

}  // namespace detail

inline void validate_labels(const LabelGrid& grid, const LabelMap& map) {
  for (std::size_t i = 0; i < grid.data.size(); ++i) {
    const auto c = grid.data[i];
    if (c != 0 && !map.has_code(c))
      throw ValidationError("label grid voxel " + std::to_string(i) + " has undeclared code " +
                            std::to_string(c));
  }
}

inline void write_volume(const Volume& v, const std::string& path) {
  const std::string stem = detail::volume_stem(path);
  const Geometry& g = v.geometry();
  g.validate();
  json h = detail::geometry_header(g);
  std::string payload;
  if (v.kind == VolumeKind::intensity_hu) {
    if (v.intensity.data.size() != g.voxel_count())
      throw ValidationError("intensity grid data length does not match dims");
    h["kind"] = "intensity_hu";
    h["dtype"] = "int16";
    payload.resize(v.intensity.data.size() * 2);
    for (std::size_t i = 0; i < v.intensity.data.size(); ++i) {
      const auto u = static_cast<std::uint16_t>(v.intensity.data[i]);
      payload[2 * i] = static_cast<char>(u & 0xFF);
      payload[2 * i + 1] = static_cast<char>(u >> 8);
    }
  } else {
    if (v.labels.data.size() != g.voxel_count())
      throw ValidationError("label grid data length does not match dims");
    h["kind"] = "label";
    h["dtype"] = "uint8";
    if (v.label_map) {
      validate_labels(v.labels, *v.label_map);
      h["label_map"] = v.label_map->to_json();
    }
    payload.assign(v.labels.data.begin(), v.labels.data.end());
  }
  csv::write_file(stem + ".hdr.json", h.dump(2) + "\n");
  csv::write_file(stem + ".raw", payload);
}

inline void write_volume(const IntensityGrid& g, const std::string& path) {
  Volume v;
  v.kind = VolumeKind::intensity_hu;
  v.intensity = g;
  write_volume(v, path);
}

inline void write_volume(const LabelGrid& g, const LabelMap& map, const std::string& path) {
  Volume v;
  v.kind = VolumeKind::label;
  v.labels = g;
  v.label_map = map;
  write_volume(v, path);
}

inline Volume read_volume(const std::string& path) {
  const std::string stem = detail::volume_stem(path);
  const std::string hdr_path = stem + ".hdr.json";
  json h;
  try {
    h = json::parse(csv::read_file(hdr_path));
  } catch (const json::exception& e) {
    throw ValidationError("malformed header '" + hdr_path + "': " + e.what());
  }
  Geometry g;
  try {
    g.dims = h.at("dims").get<std::array<int, 3>>();
    g.spacing = h.at("spacing_mm").get<std::array<double, 3>>();
  } catch (const json::exception& e) {
    throw ValidationError("malformed header '" + hdr_path + "': " + e.what());
  }
  g.validate();
  const std::string kind = h.value("kind", std::string());
  const std::string dtype = h.value("dtype", std::string());
  const std::string payload = csv::read_file(stem + ".raw");
  Volume v;
  if (kind == "intensity_hu") {
    if (dtype != "int16") throw ValidationError("intensity volume must have dtype int16");
    if (payload.size() != g.voxel_count() * 2)
      throw ValidationError("data length mismatch in '" + stem + ".raw': expected " +
                            std::to_string(g.voxel_count() * 2) + " bytes, found " +
                            std::to_string(payload.size()));
    v.kind = VolumeKind::intensity_hu;
    v.intensity = IntensityGrid(g);
    for (std::size_t i = 0; i < g.voxel_count(); ++i) {
      const auto lo = static_cast<std::uint8_t>(payload[2 * i]);
      const auto hi = static_cast<std::uint8_t>(payload[2 * i + 1]);
      v.intensity.data[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
    }
  } else if (kind == "label") {
    if (dtype != "uint8") throw ValidationError("label volume must have dtype uint8");
    if (payload.size() != g.voxel_count())
      throw ValidationError("data length mismatch in '" + stem + ".raw': expected " +
                            std::to_string(g.voxel_count()) + " bytes, found " +
                            std::to_string(payload.size()));
    v.kind = VolumeKind::label;
    v.labels = LabelGrid(g);
    std::copy(payload.begin(), payload.end(), reinterpret_cast<char*>(v.labels.data.data()));
    if (h.contains("label_map")) {
      v.label_map = LabelMap::from_json(h["label_map"]);
      validate_labels(v.labels, *v.label_map);
    }
  } else {
    throw ValidationError("unknown volume kind '" + kind + "' in '" + hdr_path + "'");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Cohort manifest

enum class Sex { female, male };

inline std::string to_string(Sex s) { return s == Sex::female ? "F" : "M"; }

struct ManifestRow {
  std::string subject_id;
  std::string study_id;
  std::string scan_id;
  std::string acquisition_timestamp;  // ISO 8601, validated
  Sex sex = Sex::female;
  double age = 0.0;
  bool contrast_flag = false;
  std::string volume_path;
  std::string mask_path;

  bool operator==(const ManifestRow&) const = default;
};

// Seconds since the epoch for "YYYY-MM-DD" or "YYYY-MM-DDTHH:MM:SS".
inline std::optional<long long> parse_timestamp(std::string_view s) {
  auto digits = [&](std::size_t pos, std::size_t n) -> std::optional<int> {
    if (pos + n > s.size()) return std::nullopt;
    int v = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
      if (s[i] < '0' || s[i] > '9') return std::nullopt;
      v = v * 10 + (s[i] - '0');
    }
    return v;
  };
  if (s.size() != 10 && s.size() != 19) return std::nullopt;
  auto y = digits(0, 4), mo = digits(5, 2), d = digits(8, 2);
  if (!y || !mo || !d || s[4] != '-' || s[7] != '-') return std::nullopt;
  int hh = 0, mm = 0, ss = 0;
  if (s.size() == 19) {
    auto h = digits(11, 2), m = digits(14, 2), sec = digits(17, 2);
    if (s[10] != 'T' || s[13] != ':' || s[16] != ':' || !h || !m || !sec) return std::nullopt;
    hh = *h, mm = *m, ss = *sec;
    if (hh > 23 || mm > 59 || ss > 59) return std::nullopt;
  }
  using namespace std::chrono;
  const year_month_day ymd{year{*y}, month{static_cast<unsigned>(*mo)},
                           day{static_cast<unsigned>(*d)}};
  if (!ymd.ok()) return std::nullopt;
  const auto days = sys_days(ymd).time_since_epoch().count();
  return static_cast<long long>(days) * 86400 + hh * 3600 + mm * 60 + ss;
}

class CohortManifest {
 public:
  static inline const std::vector<std::string> kColumns = {
      "subject_id", "study_id", "scan_id", "acquisition_timestamp", "sex",
      "age",        "contrast_flag", "volume_path", "mask_path"};

  CohortManifest() = default;
  explicit CohortManifest(std::vector<ManifestRow> rows) : rows_(std::move(rows)) { validate(); }

  const std::vector<ManifestRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  const ManifestRow& scan(const std::string& scan_id) const {
    auto it = scan_index_.find(scan_id);
    if (it == scan_index_.end()) throw ValidationError("unknown scan_id '" + scan_id + "'");
    return rows_[it->second];
  }
  bool has_scan(const std::string& scan_id) const { return scan_index_.count(scan_id) != 0; }

  // Distinct ids in first-appearance order.
  std::vector<std::string> subjects() const { return distinct(&ManifestRow::subject_id); }
  std::vector<std::string> studies() const { return distinct(&ManifestRow::study_id); }

  const std::string& subject_of_study(const std::string& study_id) const {
    auto it = study_subject_.find(study_id);
    if (it == study_subject_.end()) throw ValidationError("unknown study_id '" + study_id + "'");
    return it->second;
  }

  long long timestamp_seconds(const ManifestRow& r) const {
    return *parse_timestamp(r.acquisition_timestamp);
  }

  bool operator==(const CohortManifest& o) const { return rows_ == o.rows_; }

 private:
  std::vector<std::string> distinct(std::string ManifestRow::*field) const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& r : rows_)
      if (seen.insert(r.*field).second) out.push_back(r.*field);
    return out;
  }

  void validate() {
    scan_index_.clear();
    study_subject_.clear();
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      const auto& r = rows_[i];
      const std::string where = "manifest row " + std::to_string(i + 1);
      if (r.subject_id.empty() || r.study_id.empty() || r.scan_id.empty())
        throw ValidationError(where + ": empty identifier");
      if (!parse_timestamp(r.acquisition_timestamp))
        throw ValidationError(where + ": unparseable timestamp '" + r.acquisition_timestamp + "'");
      if (!(r.age >= 0.0) || !std::isfinite(r.age))
        throw ValidationError(where + ": invalid age");
      if (!scan_index_.emplace(r.scan_id, i).second)
        throw ValidationError(where + ": duplicate scan_id '" + r.scan_id + "'");
      auto [it, inserted] = study_subject_.emplace(r.study_id, r.subject_id);
      if (!inserted && it->second != r.subject_id)
        throw ValidationError(where + ": study '" + r.study_id +
                              "' referenced by two subjects ('" + it->second + "', '" +
                              r.subject_id + "')");
    }
  }

  std::vector<ManifestRow> rows_;
  std::unordered_map<std::string, std::size_t> scan_index_;
  std::unordered_map<std::string, std::string> study_subject_;
};

inline bool parse_flag(std::string_view s, bool& out) {
  if (s == "1" || s == "true") return out = true, true;
  if (s == "0" || s == "false") return out = false, true;
  return false;
}

inline CohortManifest parse_manifest(const csv::Table& t, std::string_view what) {
  std::array<int, 9> col{};
  for (std::size_t c = 0; c < CohortManifest::kColumns.size(); ++c)
    col[c] = t.require_column(CohortManifest::kColumns[c], what);
  std::vector<ManifestRow> rows;
  rows.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& cells = t.rows[i];
    const std::string where = std::string(what) + " row " + std::to_string(i + 1);
    ManifestRow r;
    r.subject_id = cells[col[0]];
    r.study_id = cells[col[1]];
    r.scan_id = cells[col[2]];
    r.acquisition_timestamp = cells[col[3]];
    const auto& sex = cells[col[4]];
    if (sex == "F") r.sex = Sex::female;
    else if (sex == "M") r.sex = Sex::male;
    else throw ValidationError(where + ": sex must be F or M, got '" + sex + "'");
    auto age = parse_real(cells[col[5]]);
    if (!age) throw ValidationError(where + ": unparseable age '" + cells[col[5]] + "'");
    r.age = *age;
    if (!parse_flag(cells[col[6]], r.contrast_flag))
      throw ValidationError(where + ": contrast_flag must be 0/1/true/false");
    r.volume_path = cells[col[7]];
    r.mask_path = cells[col[8]];
    rows.push_back(std::move(r));
  }
  return CohortManifest(std::move(rows));
}

inline CohortManifest read_manifest(const std::string& path) {
  return parse_manifest(csv::read(path), path);
}

inline std::string render_manifest(const CohortManifest& m) {
  csv::Table t;
  t.header = CohortManifest::kColumns;
  for (const auto& r : m.rows())
    t.rows.push_back({r.subject_id, r.study_id, r.scan_id, r.acquisition_timestamp,
                      to_string(r.sex), format_real(r.age), r.contrast_flag ? "1" : "0",
                      r.volume_path, r.mask_path});
  return csv::render(t);
}

inline void write_manifest(const CohortManifest& m, const std::string& path) {
  csv::write_file(path, render_manifest(m));
}

// ---------------------------------------------------------------------------
// Feature tables

class FeatureTable {
 public:
  FeatureTable() = default;
  explicit FeatureTable(std::vector<std::string> names) : names_(std::move(names)) {
    std::set<std::string> seen;
    for (const auto& n : names_) {
      if (n.empty() || n == "scan_id") throw ValidationError("invalid feature name '" + n + "'");
      if (!seen.insert(n).second) throw ValidationError("duplicate feature name '" + n + "'");
    }
  }

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<std::string>& scan_ids() const { return scan_ids_; }
  std::size_t rows() const { return scan_ids_.size(); }
  std::size_t cols() const { return names_.size(); }

  void add_row(const std::string& scan_id, std::vector<MaybeReal> cells) {
    if (cells.size() != names_.size())
      throw ValidationError("feature row '" + scan_id + "' is not rectangular");
    for (const auto& c : cells)
      if (c && !std::isfinite(*c))
        throw ValidationError("feature row '" + scan_id + "' contains a non-finite value");
    if (!row_index_.emplace(scan_id, scan_ids_.size()).second)
      throw ValidationError("duplicate scan_id '" + scan_id + "' in feature table");
    scan_ids_.push_back(scan_id);
    cells_.insert(cells_.end(), cells.begin(), cells.end());
  }

  const MaybeReal& at(std::size_t row, std::size_t col) const { return cells_[row * cols() + col]; }
  std::vector<MaybeReal> row(std::size_t r) const {
    return {cells_.begin() + static_cast<std::ptrdiff_t>(r * cols()),
            cells_.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols())};
  }

  std::optional<std::size_t> find_row(const std::string& scan_id) const {
    auto it = row_index_.find(scan_id);
    if (it == row_index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::size_t> find_column(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    return std::nullopt;
  }

  // Columns restricted (and reordered) to `names`.
  FeatureTable select_columns(const std::vector<std::string>& names) const {
    std::vector<std::size_t> idx;
    for (const auto& n : names) {
      auto c = find_column(n);
      if (!c) throw ValidationError("feature table lacks column '" + n + "'");
      idx.push_back(*c);
    }
    FeatureTable out(names);
    for (std::size_t r = 0; r < rows(); ++r) {
      std::vector<MaybeReal> cells;
      for (auto c : idx) cells.push_back(at(r, c));
      out.add_row(scan_ids_[r], std::move(cells));
    }
    return out;
  }

  // Rows restricted to `ids`, in the given order.
  FeatureTable select_rows(const std::vector<std::string>& ids) const {
    FeatureTable out(names_);
    for (const auto& id : ids) {
      auto r = find_row(id);
      if (!r) throw ValidationError("feature table lacks scan '" + id + "'");
      out.add_row(id, row(*r));
    }
    return out;
  }

  bool operator==(const FeatureTable& o) const {
    return names_ == o.names_ && scan_ids_ == o.scan_ids_ && cells_ == o.cells_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<std::string> scan_ids_;
  std::vector<MaybeReal> cells_;
  std::unordered_map<std::string, std::size_t> row_index_;
};

inline FeatureTable parse_feature_table(const csv::Table& t, std::string_view what) {
  if (t.header.empty() || t.header.front() != "scan_id")
    throw ValidationError(std::string(what) + ": first column must be scan_id");
  FeatureTable ft(std::vector<std::string>(t.header.begin() + 1, t.header.end()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& cells = t.rows[i];
    std::vector<MaybeReal> values;
    values.reserve(cells.size() - 1);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      if (cells[c].empty()) {
        values.emplace_back(std::nullopt);
        continue;
      }
      auto v = parse_real(cells[c]);
      if (!v || !std::isfinite(*v))
        throw ValidationError(std::string(what) + " row " + std::to_string(i + 1) + ": bad value '" +
                              cells[c] + "' in column '" + t.header[c] + "'");
      values.emplace_back(*v);
    }
    ft.add_row(cells[0], std::move(values));
  }
  return ft;
}

inline FeatureTable read_feature_table(const std::string& path) {
  return parse_feature_table(csv::read(path), path);
}

inline std::string render_feature_table(const FeatureTable& ft) {
  csv::Table t;
  t.header.push_back("scan_id");
  t.header.insert(t.header.end(), ft.names().begin(), ft.names().end());
  for (std::size_t r = 0; r < ft.rows(); ++r) {
    std::vector<std::string> cells{ft.scan_ids()[r]};
    for (std::size_t c = 0; c < ft.cols(); ++c)
      cells.push_back(ft.at(r, c) ? format_real(*ft.at(r, c)) : std::string());
    t.rows.push_back(std::move(cells));
  }
  return csv::render(t);
}

inline void write_feature_table(const FeatureTable& ft, const std::string& path) {
  csv::write_file(path, render_feature_table(ft));
}

// ---------------------------------------------------------------------------
// Study labels: study_id -> 0/1, in file order.

struct StudyLabels {
  std::vector<std::string> study_ids;
  std::vector<int> labels;

  std::optional<int> find(const std::string& study_id) const {
    for (std::size_t i = 0; i < study_ids.size(); ++i)
      if (study_ids[i] == study_id) return labels[i];
    return std::nullopt;
  }
  std::unordered_map<std::string, int> as_map() const {
    std::unordered_map<std::string, int> m;
    for (std::size_t i = 0; i < study_ids.size(); ++i) m.emplace(study_ids[i], labels[i]);
    return m;
  }
  bool operator==(const StudyLabels&) const = default;
};

inline StudyLabels read_labels(const std::string& path) {
  const auto t = csv::read(path);
  const int cs = t.require_column("study_id", path);
  const int cl = t.require_column("label", path);
  StudyLabels out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& id = t.rows[i][cs];
    const auto& l = t.rows[i][cl];
    if (l != "0" && l != "1")
      throw ValidationError(path + " row " + std::to_string(i + 1) + ": label must be 0 or 1");
    if (!seen.insert(id).second)
      throw ValidationError(path + " row " + std::to_string(i + 1) + ": duplicate study_id '" +
                            id + "'");
    out.study_ids.push_back(id);
    out.labels.push_back(l == "1" ? 1 : 0);
  }
  return out;
}

inline void write_labels(const StudyLabels& labels, const std::string& path) {
  csv::Table t;
  t.header = {"study_id", "label"};
  for (std::size_t i = 0; i < labels.study_ids.size(); ++i)
    t.rows.push_back({labels.study_ids[i], std::to_string(labels.labels[i])});
  csv::write(t, path);
}

}  // namespace ahfx
