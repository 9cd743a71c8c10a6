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

// The command set behind the polyret tool. Each command validates its
// configuration, reads its inputs, writes its outputs into the configured
// directories together with the resolved configuration, and never modifies
// its inputs.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "polyret/config.h"
#include "polyret/engine.h"
#include "polyret/evaluation.h"

namespace polyret {

/// Files of a generated corpus.
struct CorpusFiles {
  Vocabulary vocab;
  std::vector<Document> docs;
  std::vector<ClickLogRecord> click_log;
  std::vector<GradedLabelRecord> graded_train;
  std::vector<GradedLabelRecord> validation;
  std::vector<GradedLabelRecord> test;
  std::vector<GradedLabelRecord> tail;

  static CorpusFiles load(const std::string& data_dir);
};

struct TrainOutcome {
  EncoderModel model;
  std::vector<StageReport> reports;
};

/// Trains a fresh model through the configured stages.
TrainOutcome train_model(const RunConfig& config, const CorpusFiles& corpus, bool validate_epochs);

struct BuiltIndexes {
  AnnIndex ann;
  InvertedIndex inverted;
  EmbeddingStore store;
  Calibration calibration;
  FeatureTable features;
  LinearRanker ranker;
  RankerTrainResult ranker_fit;
  std::size_t preference_pairs = 0;
};

/// Quantization parameters from the corpus document embeddings.
Calibration calibrate_store(const CorpusEmbeddings& corpus);
EmbeddingStore build_store(const CorpusEmbeddings& corpus, const QuantizationParams& params);

/// Indexes, store, features and a ranker fitted on graded training labels.
BuiltIndexes build_indexes(const RunConfig& config, const EncoderModel& model,
                           const CorpusFiles& corpus);

/// Ranker preference pairs: for each graded training query, every pair of
/// labeled documents in its candidate pool with different grades.
std::vector<PreferencePair> ranker_pairs(const Engine& engine,
                                         const std::vector<GradedLabelRecord>& labels);

std::string stage_report_json(const std::vector<StageReport>& reports);

/// Metrics JSON for a built run: model metrics per split and a comparison
/// of the full workflow against a text-only baseline on the test split.
std::string evaluate_run(const RunConfig& config, const Engine& engine, const CorpusFiles& corpus);

// Commands. Each writes "<command>.config.json" next to its outputs.
void command_gen_data(const RunConfig& config, std::ostream& log);
void command_train(const RunConfig& config, std::ostream& log);
void command_build_index(const RunConfig& config, std::ostream& log);
void command_quantize(const RunConfig& config, std::ostream& log);
/// Prints one JSON object per result, best first.
void command_retrieve(const RunConfig& config, const std::string& query, std::size_t k,
                      std::ostream& out);
void command_eval(const RunConfig& config, std::ostream& out);
/// Line-delimited JSON: {"query": "...", "k": 10} in, {"results": [...]} or
/// {"error": {...}} out, one line each, until end of input.
void command_serve(const RunConfig& config, std::istream& in, std::ostream& out);
/// Trains one model per stage list and prints a comparison table; with
/// `layering` also the feature-layering table.
void command_ablate(const RunConfig& config, const std::vector<std::vector<Stage>>& stage_sets,
                    bool layering, std::ostream& out);

}  // namespace polyret
