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

// Synthetic search corpus: topic-clustered titles and queries, a click log
// with position bias, graded labels and disjoint evaluation splits.
//
// Topics are grouped in clusters that share an anchor word. Titles use a
// topic's document words and queries mostly use a disjoint set of query
// words for the same topic, so matching a query to its documents needs more
// than token overlap. Tail queries draw from rare query words that show up
// in only a handful of training queries.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polyret/dataset.h"
#include "polyret/text.h"
#include "polyret/training.h"

namespace polyret {

struct SyntheticCorpusSpec {
  std::size_t n_topics = 60;
  std::size_t topics_per_cluster = 4;
  std::size_t docs_per_topic = 12;
  std::size_t queries_per_topic = 20;
  /// Distinct content words; the vocabulary adds the special tokens.
  std::size_t vocab_size = 1000;
  std::size_t query_min_length = 3;
  std::size_t query_max_length = 5;
  std::size_t title_min_length = 5;
  std::size_t title_max_length = 8;
  double tail_fraction = 0.2;
  /// Probability of swapping a topical word for another topic's word, and
  /// of perturbing a grade by one.
  double noise = 0.1;
  double validation_fraction = 0.2;
  double test_fraction = 0.2;
  /// Share of training queries that also receive graded labels.
  double graded_train_fraction = 0.4;
  /// Labeled documents per evaluation query besides all of its own topic's:
  /// same-cluster ones and unrelated ones.
  std::size_t eval_cluster_docs = 24;
  std::size_t eval_random_docs = 2;
  std::size_t impressions_per_query = 3;
  std::size_t impression_size = 10;
  std::uint64_t seed = 0;

  /// Throws ContractError naming the offending field.
  void validate() const;
  /// Content words the topical structure needs.
  std::size_t required_words() const;
};

enum class Split { kTrain, kValidation, kTest };

struct SyntheticQuery {
  std::uint64_t query_id = 0;
  std::string text;
  std::size_t topic = 0;
  bool tail = false;
  Split split = Split::kTrain;
};

struct SyntheticCorpus {
  Vocabulary vocab;
  /// Grouped by topic, so neighbouring titles are usually related.
  std::vector<Document> docs;
  std::vector<std::size_t> doc_topics;  // parallel to docs
  std::vector<SyntheticQuery> queries;
  std::vector<ClickLogRecord> click_log;       // training queries only
  std::vector<GradedLabelRecord> graded_train;  // subset of training queries
  std::vector<GradedLabelRecord> validation;
  std::vector<GradedLabelRecord> test;
  /// Tail queries of the test split.
  std::vector<GradedLabelRecord> tail;
};

SyntheticCorpus generate_corpus(const SyntheticCorpusSpec& spec);

/// Writes vocab.txt, docs.jsonl, click_log.jsonl, graded_train.jsonl,
/// validation.jsonl, test.jsonl and tail.jsonl into `dir`.
void write_corpus(const SyntheticCorpus& corpus, const std::string& dir);

/// Training inputs for every stage derived from the corpus files: stage 1
/// pairs neighbouring titles, stage 2 pairs each query with a clicked title.
PipelineData pipeline_data(const std::vector<Document>& docs,
                           const std::vector<ClickLogRecord>& click_log,
                           const std::vector<GradedLabelRecord>& graded);

}  // namespace polyret
