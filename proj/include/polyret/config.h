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

// Run configuration shared by every command.
//
// Precedence, lowest first: built-in defaults, the JSON file given with
// --config, `--set path=value` overrides, then dedicated flags such as
// --seed. Component seeds are derived from the single top-level seed.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polyret/ann_index.h"
#include "polyret/encoder.h"
#include "polyret/inverted_index.h"
#include "polyret/metrics.h"
#include "polyret/retrieval.h"
#include "polyret/synth.h"
#include "polyret/training.h"

namespace polyret {

struct PathConfig {
  std::string data_dir = "data";
  std::string run_dir = "run";
};

struct RetrievalConfig {
  std::size_t k_sem = 100;
  std::size_t k_text = 100;
  std::size_t n_out = 20;
  /// Quantize the query embedding with the store's parameters before
  /// searching, as the online system does.
  bool quantized_query = true;
};

struct MetricConfig {
  std::size_t recall_k = 10;
  int relevant_grade = 3;
  double pnr_cap = kDefaultPnrCap;
  std::size_t dcg_k = 4;
  DcgGain dcg_gain = DcgGain::kLinear;
  DwellSigmoid dwell_sigmoid;
  std::size_t interleave_impressions = 5;
};

struct RunConfig {
  std::uint64_t seed = 0;
  PathConfig paths;
  SyntheticCorpusSpec data;
  /// vocab_size 0 means "size of the vocabulary file".
  EncoderConfig encoder = default_encoder();
  std::vector<Stage> stages = {Stage::kPretrain, Stage::kPostPretrain,
                               Stage::kIntermediateFineTune, Stage::kTargetFineTune};
  std::vector<StageConfig> stage_configs = default_stage_configs();
  AnnParams ann = default_ann();
  Bm25Params bm25;
  RetrievalConfig retrieval;
  RankerTrainOptions ranker;
  MetricConfig metrics;

  /// Settings of one stage with its derived seed.
  StageConfig stage_config(Stage stage) const;
  SyntheticCorpusSpec data_spec() const;
  AnnParams ann_params() const;
  EncoderConfig encoder_for(std::size_t vocab_size) const;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  std::string to_json() const;
  /// Fields absent from `text` keep their defaults; unknown fields throw.
  static RunConfig from_json(const std::string& text);

  static EncoderConfig default_encoder();
  static std::vector<StageConfig> default_stage_configs();
  static AnnParams default_ann();
};

/// Applies `path=value` overrides (dot-separated path, JSON or bare string
/// value) on top of `base`.
RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& assignments);

/// Parses "1,2,4" or "pretrain,target_ft"; an empty string or "none" gives no stages.
std::vector<Stage> parse_stage_list(const std::string& text);
std::string stage_list_string(const std::vector<Stage>& stages);

}  // namespace polyret
