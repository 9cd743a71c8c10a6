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

#pragma once

#include <cstdint>
#include <vector>

namespace polyret {

struct ScoredDoc {
  std::uint64_t doc_id = 0;
  double score = 0.0;

  bool operator==(const ScoredDoc&) const = default;
};

/// Ranking order used by every search: score descending, then doc_id
/// ascending.
inline bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

struct SearchResult {
  std::vector<ScoredDoc> hits;
  /// ANN: k exceeded the corpus size. BM25: the query had no index terms.
  bool flagged = false;
};

}  // namespace polyret
