// Copyright 2026 The polyret Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "polyret/dataset.h"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "polyret/errors.h"

namespace polyret {

namespace {

using nlohmann::json;

template <typename Fn>
void for_each_line(const std::string& path, Fn fn) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path + " for reading");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

template <typename T>
T field(const json& j, const char* name) {
  if (!j.contains(name)) throw InputError(std::string("missing field '") + name + "'");
  return j.at(name).get<T>();
}

void write_lines(const std::string& path, const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

}  // namespace

void write_text_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InputError("cannot open " + path + " for writing");
    out << content;
    if (!out) throw InputError("write failed: " + path);
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path + " for reading");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Document> read_documents(const std::string& path) {
  std::vector<Document> docs;
  for_each_line(path, [&](const json& j) {
    docs.push_back({field<std::uint64_t>(j, "doc_id"), field<std::string>(j, "title")});
  });
  return docs;
}

void write_documents(const std::string& path, const std::vector<Document>& docs) {
  std::vector<json> rows;
  for (const auto& d : docs) rows.push_back({{"doc_id", d.doc_id}, {"title", d.title}});
  write_lines(path, rows);
}

std::vector<ClickLogRecord> read_click_log(const std::string& path) {
  std::vector<ClickLogRecord> out;
  for_each_line(path, [&](const json& j) {
    ClickLogRecord r;
    r.query_id = field<std::uint64_t>(j, "query_id");
    r.query_text = field<std::string>(j, "query_text");
    r.doc_id = field<std::uint64_t>(j, "doc_id");
    r.doc_title = field<std::string>(j, "doc_title");
    r.clicked = field<bool>(j, "clicked");
    r.dwell_time = field<double>(j, "dwell_time");
    if (r.dwell_time < 0.0) throw InputError("field 'dwell_time' must be >= 0");
    out.push_back(std::move(r));
  });
  return out;
}

void write_click_log(const std::string& path, const std::vector<ClickLogRecord>& records) {
  std::vector<json> rows;
  for (const auto& r : records) {
    rows.push_back({{"query_id", r.query_id},
                    {"query_text", r.query_text},
                    {"doc_id", r.doc_id},
                    {"doc_title", r.doc_title},
                    {"clicked", r.clicked},
                    {"dwell_time", r.dwell_time}});
  }
  write_lines(path, rows);
}

std::vector<GradedLabelRecord> read_graded(const std::string& path) {
  std::vector<GradedLabelRecord> out;
  for_each_line(path, [&](const json& j) {
    GradedLabelRecord r;
    r.query_id = field<std::uint64_t>(j, "query_id");
    r.query_text = field<std::string>(j, "query_text");
    r.doc_id = field<std::uint64_t>(j, "doc_id");
    r.doc_title = field<std::string>(j, "doc_title");
    r.grade = field<int>(j, "grade");
    if (r.grade < 0 || r.grade > 4) throw InputError("field 'grade' must be in [0, 4]");
    out.push_back(std::move(r));
  });
  return out;
}

void write_graded(const std::string& path, const std::vector<GradedLabelRecord>& records) {
  std::vector<json> rows;
  for (const auto& r : records) {
    rows.push_back({{"query_id", r.query_id},
                    {"query_text", r.query_text},
                    {"doc_id", r.doc_id},
                    {"doc_title", r.doc_title},
                    {"grade", r.grade}});
  }
  write_lines(path, rows);
}

std::vector<LabeledQuery> group_labels(const std::vector<GradedLabelRecord>& records) {
  std::vector<LabeledQuery> out;
  std::unordered_map<std::uint64_t, std::size_t> slot;
  for (const auto& r : records) {
    auto [it, inserted] = slot.emplace(r.query_id, out.size());
    if (inserted) out.push_back({r.query_id, r.query_text, {}});
    out[it->second].docs.emplace_back(r.doc_id, r.grade);
  }
  return out;
}

}  // namespace polyret
