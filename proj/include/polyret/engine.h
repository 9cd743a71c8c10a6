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

// Query engine over a built run directory. All state is immutable after
// construction, so query() may be called from several threads at once.

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "polyret/config.h"
#include "polyret/retrieval.h"

namespace polyret {

/// File names inside a run directory.
struct RunFiles {
  static constexpr const char* kModel = "model.bin";
  static constexpr const char* kAnn = "ann.idx";
  static constexpr const char* kInverted = "inverted.idx";
  static constexpr const char* kStore = "store.bin";
  static constexpr const char* kFeatures = "features.bin";
  static constexpr const char* kRanker = "ranker.json";
};

struct QueryResult {
  CandidatePool pool;
  FilterResult ranked;
  std::vector<double> embedding;
};

class Engine {
 public:
  Engine(EncoderModel model, Vocabulary vocab, std::vector<Document> docs, AnnIndex ann,
         InvertedIndex inverted, EmbeddingStore store, FeatureTable features, LinearRanker ranker,
         RetrievalConfig options);

  /// Loads every artifact; missing files raise InputError naming the path.
  static Engine open(const std::string& data_dir, const std::string& run_dir,
                     const RetrievalConfig& options);

  /// retrieve, backfill and filter; at most n_out results.
  QueryResult query(const std::string& text, std::size_t n_out) const;

  /// {"doc_id", "title", "score", "sources"} for one ranked result.
  std::string result_json(const RankedCandidate& r) const;

  const EncoderModel& model() const { return model_; }
  const Vocabulary& vocab() const { return vocab_; }
  const AnnIndex& ann() const { return ann_; }
  const InvertedIndex& inverted() const { return inverted_; }
  const EmbeddingStore& store() const { return store_; }
  const FeatureTable& features() const { return features_; }
  const LinearRanker& ranker() const { return ranker_; }
  const RetrievalConfig& options() const { return options_; }
  const std::string& title(std::uint64_t doc_id) const;

 private:
  EncoderModel model_;
  Vocabulary vocab_;
  std::vector<Document> docs_;
  std::unordered_map<std::uint64_t, std::size_t> doc_row_;
  AnnIndex ann_;
  InvertedIndex inverted_;
  EmbeddingStore store_;
  FeatureTable features_;
  LinearRanker ranker_;
  RetrievalConfig options_;
};

}  // namespace polyret
