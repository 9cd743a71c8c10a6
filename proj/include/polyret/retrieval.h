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

// Online workflow: text and semantic retrieval, candidate merge, semantic
// score backfill and filtering with a linear ranker.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "polyret/ann_index.h"
#include "polyret/encoder.h"
#include "polyret/inverted_index.h"
#include "polyret/quantstore.h"
#include "polyret/search.h"
#include "polyret/training.h"

namespace polyret {

struct Candidate {
  std::uint64_t doc_id = 0;
  bool from_text = false;
  bool from_semantic = false;
  std::optional<double> semantic_score;
  std::optional<double> bm25_score;

  bool operator==(const Candidate&) const = default;
};

struct CandidatePool {
  std::vector<Candidate> entries;  // ascending doc_id
  /// Both channels came back empty.
  bool empty_flag = false;
  /// Entries dropped by backfill because no embedding could be found.
  std::size_t dropped = 0;

  const Candidate* find(std::uint64_t doc_id) const;
  bool operator==(const CandidatePool&) const = default;
};

/// Union by doc_id; flags and scores of both channels are kept.
CandidatePool merge_candidates(const SearchResult& semantic, const SearchResult& text);

/// Query embedding as used online: embed, then quantize and dequantize with
/// the store's parameters when `params` is non-null.
std::vector<double> online_query_embedding(const EncoderModel& model, const TokenSequence& query,
                                           const QuantizationParams* params);

/// Runs both channels; k_sem or k_text of 0 disables that channel.
CandidatePool retrieve(std::string_view query_text, std::span<const double> query_embedding,
                       const AnnIndex& ann, const InvertedIndex& inverted, std::size_t k_sem,
                       std::size_t k_text);

/// Fills missing semantic scores from the store. Ids absent from the store
/// are embedded through `fallback` when it returns a vector, otherwise
/// dropped and counted. Existing scores are left untouched.
using EmbeddingFallback = std::function<std::optional<std::vector<double>>(std::uint64_t doc_id)>;
void backfill_semantic(CandidatePool& pool, std::span<const double> query_embedding,
                       const EmbeddingStore& store, const EmbeddingFallback& fallback = nullptr);

// ---------------------------------------------------------------------------
// Features and ranking

/// Feature order used by the ranker.
enum FeatureIndex : std::size_t { kFeatCtr = 0, kFeatDwell = 1, kFeatBm25 = 2, kFeatSemantic = 3 };
inline constexpr std::size_t kFeatureCount = 4;
const std::vector<std::string>& feature_names();

using FeatureVector = std::vector<double>;

struct DocStatistics {
  double ctr = 0.0;
  double mean_dwell = 0.0;

  bool operator==(const DocStatistics&) const = default;
};

/// Per-document statistical features with corpus-mean imputation.
class FeatureTable {
 public:
  FeatureTable() = default;
  explicit FeatureTable(std::map<std::uint64_t, DocStatistics> stats);

  /// Statistics of a document, or the corpus means when absent.
  DocStatistics lookup(std::uint64_t doc_id, bool* imputed = nullptr) const;
  const DocStatistics& means() const { return means_; }
  const std::map<std::uint64_t, DocStatistics>& stats() const { return stats_; }

  void save(const std::string& path) const;
  static FeatureTable load(const std::string& path);

  bool operator==(const FeatureTable& o) const { return stats_ == o.stats_; }

 private:
  std::map<std::uint64_t, DocStatistics> stats_;
  DocStatistics means_;
};

/// Click-through rate and mean dwell of clicked impressions per document.
std::map<std::uint64_t, DocStatistics> doc_statistics(std::span<const ClickLogRecord> click_log);

/// Feature vector of a pooled candidate. bm25 is 0 when the document was not
/// text-retrieved; the semantic score must already be filled.
FeatureVector candidate_features(const Candidate& c, const FeatureTable& table,
                                 bool* imputed = nullptr);

struct LinearRanker {
  std::vector<std::string> names = feature_names();
  std::vector<double> weights = std::vector<double>(kFeatureCount, 0.0);
  double bias = 0.0;

  double score(std::span<const double> features) const;

  std::string to_json() const;
  static LinearRanker from_json(const std::string& text);
  void save(const std::string& path) const;
  static LinearRanker load(const std::string& path);

  /// A ranker that orders by the semantic score alone.
  static LinearRanker semantic_only();
};

struct PreferencePair {
  FeatureVector better;
  FeatureVector worse;
};

struct RankerTrainOptions {
  double lambda = 1e-3;
  double learning_rate = 0.1;
  std::size_t max_iterations = 2000;
  double tolerance = 1e-6;
};

struct RankerTrainResult {
  LinearRanker ranker;
  std::size_t iterations = 0;
  double final_objective = 0.0;
  /// Pairs whose feature difference is zero.
  std::size_t degenerate_pairs = 0;
};

/// Pairwise hinge: mean max(0, 1 - w.(x_better - x_worse)) + lambda |w|^2,
/// minimised by (sub)gradient descent on standardised features; the
/// standardisation is folded back into the returned weights and bias.
RankerTrainResult train_ranker(std::span<const PreferencePair> pairs,
                               const RankerTrainOptions& options = {});

struct RankedCandidate {
  std::uint64_t doc_id = 0;
  double score = 0.0;
  FeatureVector features;
  bool from_text = false;
  bool from_semantic = false;
};

struct FilterResult {
  std::vector<RankedCandidate> results;
  /// Candidates whose statistics were imputed.
  std::size_t imputed = 0;
};

/// Ranker score descending, ties by doc_id; at most n_out results.
FilterResult filter_rank(const CandidatePool& pool, const FeatureTable& table,
                         const LinearRanker& ranker, std::size_t n_out);

}  // namespace polyret
