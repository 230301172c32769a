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

// Rule-based mining of acute heart failure findings from Danish radiology
// reports, and resolution of per-study labels.

#pragma once

#include <array>
#include <map>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ahfx/common.hpp"
#include "ahfx/csv.hpp"
#include "ahfx/dataio.hpp"

namespace ahfx::miner {

enum class Category { congestion, edema, heart_failure, decompensation, pleural_effusion };
enum class Polarity { positive, negative };

inline constexpr std::array<Category, 5> kCategories = {
    Category::congestion, Category::edema, Category::heart_failure, Category::decompensation,
    Category::pleural_effusion};

inline std::string to_string(Category c) {
  switch (c) {
    case Category::congestion: return "congestion";
    case Category::edema: return "edema";
    case Category::heart_failure: return "heart_failure";
    case Category::decompensation: return "decompensation";
    case Category::pleural_effusion: return "pleural_effusion";
  }
  return {};
}

inline std::string to_string(Polarity p) { return p == Polarity::positive ? "positive" : "negative"; }

inline std::optional<Category> parse_category(std::string_view s) {
  for (auto c : kCategories)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

// Categories that decide the study label. Pleural effusion is mined but
// never decides.
inline bool is_ahf_category(Category c) { return c != Category::pleural_effusion; }

struct Rule {
  Category category;
  Polarity polarity;
  std::string pattern;  // source as written in the rule file
  std::string flags;    // "i" = case-insensitive
  std::regex regex;
};

// Ordered rules; file order is preserved.
struct RuleSet {
  std::vector<Rule> rules;
};

// Folds ASCII and Latin-1 uppercase letters (UTF-8 C3 80..C3 9E, except the
// multiplication sign) to lowercase, then spells ae, oe and aa for the
// Danish letters so that ECMAScript's ASCII \w and \b treat them as word
// characters. Byte length is unchanged, so match offsets in the folded text
// are offsets in the original.
inline std::string fold_case(std::string_view text) {
  std::string out(text);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto b = static_cast<unsigned char>(out[i]);
    if (b >= 'A' && b <= 'Z') {
      out[i] = static_cast<char>(b + 32);
    } else if (b == 0xC3 && i + 1 < out.size()) {
      auto n = static_cast<unsigned char>(out[i + 1]);
      if (n >= 0x80 && n <= 0x9E && n != 0x97) n = static_cast<unsigned char>(n + 0x20);
      if (n == 0xA6) out.replace(i, 2, "ae");
      else if (n == 0xB8) out.replace(i, 2, "oe");
      else if (n == 0xA5) out.replace(i, 2, "aa");
      else out[i + 1] = static_cast<char>(n);
      ++i;
    }
  }
  return out;
}

// Folds literal characters of a pattern, leaving escapes such as \B or \S
// untouched.
inline std::string fold_pattern(std::string_view pattern) {
  std::string out;
  std::size_t lit = 0;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern[i] == '\\' && i + 1 < pattern.size()) {
      out += fold_case(pattern.substr(lit, i - lit));
      out.append(pattern.substr(i, 2));
      lit = i + 2;
      ++i;
    }
  }
  out += fold_case(pattern.substr(std::min(lit, pattern.size())));
  return out;
}

inline Rule compile_rule(Category category, Polarity polarity, const std::string& pattern,
                         const std::string& flags, const std::string& name) {
  auto syntax = std::regex::ECMAScript | std::regex::optimize;
  for (char f : flags) {
    if (f == 'i') syntax |= std::regex::icase;
    else throw ValidationError("rule " + name + ": unknown flag '" + std::string(1, f) + "'");
  }
  try {
    return Rule{category, polarity, pattern, flags,
                std::regex(fold_pattern(pattern), syntax)};
  } catch (const std::regex_error& e) {
    throw ValidationError("rule " + name + ": pattern does not compile: " + e.what());
  }
}

// Parses a rule CSV with columns category, polarity, pattern, flags.
inline RuleSet compile_ruleset(const csv::Table& t, std::string_view what) {
  const int cc = t.require_column("category", what);
  const int cp = t.require_column("polarity", what);
  const int cpat = t.require_column("pattern", what);
  const int cf = t.require_column("flags", what);
  RuleSet rs;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string name = "#" + std::to_string(i + 1) + " (" + row[cc] + "/" + row[cp] + ")";
    auto cat = parse_category(row[cc]);
    if (!cat) throw ValidationError("rule " + name + ": unknown category '" + row[cc] + "'");
    Polarity pol;
    if (row[cp] == "positive") pol = Polarity::positive;
    else if (row[cp] == "negative") pol = Polarity::negative;
    else throw ValidationError("rule " + name + ": unknown polarity '" + row[cp] + "'");
    rs.rules.push_back(compile_rule(*cat, pol, row[cpat], row[cf], name));
  }
  if (rs.rules.empty()) throw ValidationError(std::string(what) + ": no rules");
  for (auto c : kCategories) {
    bool has_positive = false;
    for (const auto& r : rs.rules)
      if (r.category == c && r.polarity == Polarity::positive) has_positive = true;
    if (!has_positive)
      throw ValidationError(std::string(what) + ": category '" + to_string(c) +
                            "' has no positive rule");
  }
  return rs;
}

inline RuleSet compile_ruleset_text(std::string_view text, std::string_view what = "rules") {
  return compile_ruleset(csv::parse(text, what), what);
}

inline RuleSet load_ruleset(const std::string& path) {
  return compile_ruleset(csv::read(path), path);
}

// Reconstructed mining rules. The printed table lost its alternation bars and
// the spaces inside bracket expressions; both are restored here, along with
// the backslash of \bhjertesvigt.
inline const char* default_rules_csv() {
  return "category,polarity,pattern,flags\n"
         "congestion,positive,\\b(lunge)?stase,i\n"
         "congestion,negative,\"\\b(ingen|uden(?! kontrast)|ikke(?! overbevisende))[\\w, ]*\\b(lunge)?stase\",i\n"
         "heart_failure,positive,hjertesvigt,i\n"
         "heart_failure,negative,\"\\b(ingen|uden(?! kontrast)|ikke)[\\w, ]*\\bhjertesvigt\",i\n"
         "decompensation,positive,(in[ck]ompensation|hjerteinsufficiens),i\n"
         "decompensation,negative,\"\\b(ingen|uden(?! kontrast)|ikke)[\\w, ]*\\b(in[ck]ompensation|hjerteinsufficiens)\",i\n"
         "edema,positive,\\blunge[ ]*\xC3\xB8" "dem,i\n"
         "edema,negative,\\bingen[\\w ]*lunge[ ]*\xC3\xB8" "dem,i\n"
         "pleural_effusion,positive,pleura(le)?[ ]*(v\xC3\xA6ske|ansamling|effusion),i\n"
         "pleural_effusion,negative,\"\\b(ingen|uden(?! kontrast)|ikke)[\\w, ]*(perikardie-)?[\\w, ]*\\bpleura(le)?(-[\\w]*)?[ ]*(v\xC3\xA6ske|ansamling|effusion)\",i\n";
}

inline RuleSet default_ruleset() { return compile_ruleset_text(default_rules_csv(), "default rules"); }

struct Finding {
  Category category;
  Polarity polarity;
  std::size_t begin = 0;  // byte offsets into the report text
  std::size_t end = 0;
  std::string text;

  bool operator==(const Finding&) const = default;
};

// All matches of all rules. A positive match is dropped when its span lies
// inside a negative match of the same category. Output is ordered by span
// start, then negatives first, then rule order.
inline std::vector<Finding> extract_findings(std::string_view text, const RuleSet& rules) {
  const std::string folded = fold_case(text);
  struct Hit {
    Finding f;
    std::size_t rule;
  };
  std::vector<Hit> negatives, positives;
  for (std::size_t ri = 0; ri < rules.rules.size(); ++ri) {
    const auto& rule = rules.rules[ri];
    auto& sink = rule.polarity == Polarity::negative ? negatives : positives;
    for (auto it = std::sregex_iterator(folded.begin(), folded.end(), rule.regex);
         it != std::sregex_iterator(); ++it) {
      const auto b = static_cast<std::size_t>(it->position(0));
      const auto len = static_cast<std::size_t>(it->length(0));
      if (len == 0) continue;
      sink.push_back({Finding{rule.category, rule.polarity, b, b + len,
                              std::string(text.substr(b, len))},
                      ri});
    }
  }
  std::vector<Hit> kept = negatives;
  for (const auto& p : positives) {
    bool suppressed = false;
    for (const auto& n : negatives)
      if (n.f.category == p.f.category && n.f.begin <= p.f.begin && p.f.end <= n.f.end)
        suppressed = true;
    if (!suppressed) kept.push_back(p);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const Hit& a, const Hit& b) {
    if (a.f.begin != b.f.begin) return a.f.begin < b.f.begin;
    if (a.f.polarity != b.f.polarity) return a.f.polarity == Polarity::negative;
    return a.rule < b.rule;
  });
  std::vector<Finding> out;
  out.reserve(kept.size());
  for (auto& h : kept) out.push_back(std::move(h.f));
  return out;
}

enum class AhfLabel { negative, positive };

struct StudyLabel {
  std::string study_id;
  AhfLabel label = AhfLabel::negative;
  std::vector<Finding> findings;
};

// Positive iff any surviving positive finding in an AHF category. No findings
// means negative.
inline StudyLabel resolve_study_label(std::string study_id, std::vector<Finding> findings) {
  StudyLabel out{std::move(study_id), AhfLabel::negative, std::move(findings)};
  for (const auto& f : out.findings)
    if (f.polarity == Polarity::positive && is_ahf_category(f.category))
      out.label = AhfLabel::positive;
  return out;
}

struct Report {
  std::string study_id;
  std::string subject_id;
  std::string text;
};

// Reports containing at least one surviving finding, per (category, polarity).
struct FindingSummary {
  std::map<std::pair<Category, Polarity>, std::size_t> reports_with_finding;
  std::size_t positive_studies = 0;
  std::size_t negative_studies = 0;

  std::size_t count(Category c, Polarity p) const {
    auto it = reports_with_finding.find({c, p});
    return it == reports_with_finding.end() ? 0 : it->second;
  }
};

struct MinedCorpus {
  std::vector<StudyLabel> labels;  // in input order
  FindingSummary summary;
};

inline MinedCorpus mine_corpus(const std::vector<Report>& reports, const RuleSet& rules) {
  MinedCorpus out;
  std::set<std::string> seen;
  for (const auto& r : reports) {
    if (!seen.insert(r.study_id).second)
      throw ValidationError("duplicate study_id '" + r.study_id + "' in report corpus");
    auto label = resolve_study_label(r.study_id, extract_findings(r.text, rules));
    std::set<std::pair<Category, Polarity>> present;
    for (const auto& f : label.findings) present.insert({f.category, f.polarity});
    for (const auto& key : present) ++out.summary.reports_with_finding[key];
    if (label.label == AhfLabel::positive) ++out.summary.positive_studies;
    else ++out.summary.negative_studies;
    out.labels.push_back(std::move(label));
  }
  return out;
}

// Manual corrections: study_id -> label, applied after mining.
inline void apply_overrides(MinedCorpus& corpus, const StudyLabels& overrides) {
  auto m = overrides.as_map();
  std::size_t pos = 0, neg = 0;
  for (auto& l : corpus.labels) {
    auto it = m.find(l.study_id);
    if (it != m.end()) l.label = it->second ? AhfLabel::positive : AhfLabel::negative;
    (l.label == AhfLabel::positive ? pos : neg)++;
  }
  corpus.summary.positive_studies = pos;
  corpus.summary.negative_studies = neg;
}

// JSON lines: {"study_id": ..., "subject_id": ..., "text": ...}
inline std::vector<Report> parse_reports_jsonl(std::string_view text, std::string_view what) {
  std::vector<Report> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.push_back({j.at("study_id").get<std::string>(), j.value("subject_id", std::string()),
                     j.at("text").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string(what) + " line " + std::to_string(line_no) + ": " +
                            e.what());
    }
  }
  return out;
}

inline std::vector<Report> read_reports(const std::string& path) {
  return parse_reports_jsonl(csv::read_file(path), path);
}

inline StudyLabels to_study_labels(const MinedCorpus& corpus) {
  StudyLabels out;
  for (const auto& l : corpus.labels) {
    out.study_ids.push_back(l.study_id);
    out.labels.push_back(l.label == AhfLabel::positive ? 1 : 0);
  }
  return out;
}

inline csv::Table summary_table(const FindingSummary& s) {
  csv::Table t;
  t.header = {"category", "polarity", "reports"};
  for (auto c : kCategories)
    for (auto p : {Polarity::positive, Polarity::negative})
      t.rows.push_back({to_string(c), to_string(p), std::to_string(s.count(c, p))});
  t.rows.push_back({"study_label", "positive", std::to_string(s.positive_studies)});
  t.rows.push_back({"study_label", "negative", std::to_string(s.negative_studies)});
  return t;
}

}  // namespace ahfx::miner
