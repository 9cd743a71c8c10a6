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

// Term index with Okapi BM25 scoring.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "polyret/search.h"

namespace polyret {

struct Posting {
  std::uint64_t doc_id = 0;
  std::uint32_t tf = 0;

  bool operator==(const Posting&) const = default;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;

  bool operator==(const Bm25Params&) const = default;
};

struct TermDocument {
  std::uint64_t doc_id = 0;
  std::vector<std::string> terms;
};

class InvertedIndex {
 public:
  InvertedIndex() = default;

  /// Throws ContractError on an empty corpus or a duplicate doc_id.
  static InvertedIndex build(std::span<const TermDocument> docs);
  /// Tokenizes each (doc_id, title) with index_terms().
  static InvertedIndex build_from_titles(
      std::span<const std::pair<std::uint64_t, std::string>> titles);

  /// Query text goes through index_terms(); a query without terms yields an
  /// empty, flagged result.
  SearchResult search(std::string_view query, std::size_t k) const;
  SearchResult search_terms(std::span<const std::string> terms, std::size_t k) const;
  /// BM25 of a single document for the query; 0 if nothing matches.
  double score_document(std::span<const std::string> terms, std::uint64_t doc_id) const;

  double idf(const std::string& term) const;
  std::size_t document_frequency(const std::string& term) const;
  const std::vector<Posting>* postings(const std::string& term) const;
  std::size_t doc_count() const { return doc_lengths_.size(); }
  double average_length() const { return avg_length_; }
  const Bm25Params& bm25() const { return bm25_; }
  void set_bm25(Bm25Params p) { bm25_ = p; }

  void save(const std::string& path) const;
  static InvertedIndex load(const std::string& path);

  bool operator==(const InvertedIndex&) const = default;

 private:
  double term_weight(double idf, std::uint32_t tf, std::uint32_t doc_length) const;
  static std::vector<std::string> distinct(std::span<const std::string> terms);

  std::map<std::string, std::vector<Posting>> postings_;
  std::map<std::uint64_t, std::uint32_t> doc_lengths_;
  double avg_length_ = 0.0;
  Bm25Params bm25_;
};

}  // namespace polyret
