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

// Minimal CSV reading and writing: UTF-8, '\n' line endings, mandatory
// header row, RFC 4180 quoting for fields containing ',', '"' or newlines.

#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ahfx/common.hpp"

namespace ahfx::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column, or -1.
  int column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }

  int require_column(std::string_view name, std::string_view what) const {
    int c = column(name);
    if (c < 0)
      throw ValidationError(std::string(what) + ": missing column '" + std::string(name) + "'");
    return c;
  }
};

inline std::vector<std::vector<std::string>> parse_records(std::string_view text,
                                                          std::string_view what) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty())
          throw ValidationError(std::string(what) + ": stray quote on line " +
                                std::to_string(line));
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        record.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r':
        throw ValidationError(std::string(what) + ": CR line ending on line " +
                              std::to_string(line));
      case '\n':
        record.push_back(std::move(field));
        field.clear();
        records.push_back(std::move(record));
        record.clear();
        field_started = false;
        ++line;
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (in_quotes) throw ValidationError(std::string(what) + ": unterminated quoted field");
  if (field_started || !field.empty() || !record.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  return records;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

// Parses a whole document. Every row must have as many cells as the header.
inline Table parse(std::string_view text, std::string_view what) {
  auto records = parse_records(text, what);
  if (records.empty()) throw ValidationError(std::string(what) + ": missing header row");
  Table t;
  t.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size())
      throw ValidationError(std::string(what) + ": row " + std::to_string(r) + " has " +
                            std::to_string(records[r].size()) + " cells, header has " +
                            std::to_string(t.header.size()));
    t.rows.push_back(std::move(records[r]));
  }
  return t;
}

inline Table read(const std::string& path) { return parse(read_file(path), path); }

inline void append_field(std::string& out, std::string_view f) {
  if (f.find_first_of(",\"\n\r") == std::string_view::npos) {
    out.append(f);
    return;
  }
  out.push_back('"');
  for (char c : f) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
}

inline void append_row(std::string& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out.push_back(',');
    append_field(out, cells[i]);
  }
  out.push_back('\n');
}

inline std::string render(const Table& t) {
  std::string out;
  append_row(out, t.header);
  for (const auto& r : t.rows) append_row(out, r);
  return out;
}

inline void write(const Table& t, const std::string& path) { write_file(path, render(t)); }

}  // namespace ahfx::csv
