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

// Line-delimited JSON readers and writers for documents, click logs and
// graded labels.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "polyret/training.h"

namespace polyret {

struct Document {
  std::uint64_t doc_id = 0;
  std::string title;
};

std::vector<Document> read_documents(const std::string& path);
void write_documents(const std::string& path, const std::vector<Document>& docs);

std::vector<ClickLogRecord> read_click_log(const std::string& path);
void write_click_log(const std::string& path, const std::vector<ClickLogRecord>& records);

std::vector<GradedLabelRecord> read_graded(const std::string& path);
void write_graded(const std::string& path, const std::vector<GradedLabelRecord>& records);

/// Labeled query with its graded documents, in first-seen query order.
struct LabeledQuery {
  std::uint64_t query_id = 0;
  std::string text;
  std::vector<std::pair<std::uint64_t, int>> docs;  // (doc_id, grade)
};
std::vector<LabeledQuery> group_labels(const std::vector<GradedLabelRecord>& records);

/// Writes `content` to `path` only through a temporary file and rename, so
/// readers never see a partial file.
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace polyret
