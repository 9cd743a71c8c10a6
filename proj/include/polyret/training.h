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

// Training data mining, objectives and the four-stage training pipeline.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polyret/encoder.h"
#include "polyret/random.h"
#include "polyret/tensor.h"
#include "polyret/text.h"

namespace polyret {

struct ClickLogRecord {
  std::uint64_t query_id = 0;
  std::string query_text;
  std::uint64_t doc_id = 0;
  std::string doc_title;
  bool clicked = false;
  double dwell_time = 0.0;  // seconds
};

struct GradedLabelRecord {
  std::uint64_t query_id = 0;
  std::string query_text;
  std::uint64_t doc_id = 0;
  std::string doc_title;
  int grade = 0;  // 0..4
};

/// Triplet of raw texts before tokenization.
struct TextTriplet {
  std::uint64_t query_id = 0;
  std::string query;
  std::uint64_t positive_id = 0;
  std::string positive;
  std::uint64_t negative_id = 0;
  std::string negative;
};

struct TrainExample {
  TokenSequence query;
  TokenSequence positive;
  TokenSequence strong_negative;
};

struct MiningResult {
  std::vector<TextTriplet> triplets;
  /// Queries that produced no triplet (no click, no non-click, or no
  /// strictly ordered grade pair).
  std::size_t skipped_queries = 0;
};

enum class NegativePolicy {
  kSampleOne,  // one uniformly drawn non-click per click
  kSampleAll,  // every (click, non-click) pair
};

/// Records are grouped by query_id; queries appear in first-seen order.
MiningResult mine_from_click_log(std::span<const ClickLogRecord> records, NegativePolicy policy,
                                 Rng& rng);
/// Every same-query pair with strictly different grades, higher grade as the
/// positive.
MiningResult mine_from_graded_labels(std::span<const GradedLabelRecord> records);

std::vector<TrainExample> tokenize_triplets(std::span<const TextTriplet> triplets,
                                            const Vocabulary& vocab, std::size_t max_len);

// ---------------------------------------------------------------------------
// Objectives

/// Scores of every query against [positives..., strong negatives...] of the
/// batch: [B x 2B]. Column i is the positive of row i and column B+i its
/// strong negative. Throws ContractError for B < 2.
Var in_batch_scores(EncoderGraph& graph, std::span<const TrainExample> batch,
                    Rng* dropout_rng = nullptr);
/// Same documents, but each row keeps only its own pair: [B x 2] with the
/// positive in column 0.
Var own_pair_scores(EncoderGraph& graph, std::span<const TrainExample> batch,
                    Rng* dropout_rng = nullptr);
/// Mean over rows of -log softmax(scores[i] / tau)[positive column of i].
/// The positive of row i is column i when the matrix is B x 2B and column 0
/// when it is B x 2.
Var contrastive_loss(Var scores, double temperature);
double contrastive_loss(const Tensor& scores, double temperature);
/// Mean over rows of max(0, margin - s_pos + s_neg) on a [B x 2] matrix.
Var hinge_loss(Var pair_scores, double margin);

struct NspInput {
  TokenSequence tokens;  // [CLS] a [SEP] b [SEP]
  bool truncated = false;
};
/// `a` and `b` carry content ids only. The document side is cut to fit.
NspInput make_nsp_input(std::span<const TokenId> a, std::span<const TokenId> b,
                        std::size_t max_len);

struct MaskedSequence {
  TokenSequence tokens;
  std::vector<std::size_t> positions;  // indices into tokens
  std::vector<TokenId> targets;        // original ids at those positions
};
/// Replaces max(1, round(ratio * n)) of the n maskable tokens (anything but
/// [CLS], [SEP] and [PAD]) by [MASK]; ratio 0 masks nothing. Throws
/// ContractError when nothing is maskable and ratio > 0.
MaskedSequence mask_tokens(const TokenSequence& seq, double mask_ratio, Rng& rng);

/// MLM loss of one sequence under a fixed masking; 0 when nothing is masked.
double mlm_loss(const EncoderModel& model, const MaskedSequence& masked);
/// Draws the masking then evaluates.
double mlm_loss(const EncoderModel& model, const TokenSequence& seq, double mask_ratio, Rng& rng);
/// NSP binary cross-entropy for one pair.
double nsp_loss(const EncoderModel& model, const NspInput& input, bool is_next);

// ---------------------------------------------------------------------------
// Stages

enum class Stage { kPretrain = 1, kPostPretrain = 2, kIntermediateFineTune = 3, kTargetFineTune = 4 };

std::string stage_name(Stage stage);
Stage parse_stage(const std::string& name);

enum class LossKind { kContrastive, kHinge };

struct StageConfig {
  Stage stage = Stage::kPretrain;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t warmup_steps = 200;
  /// The learning rate decays linearly to this fraction of its peak.
  double final_lr_fraction = 0.01;
  std::size_t epochs = 1;
  double temperature = 1.0;
  /// 0 means no cap.
  std::size_t max_steps = 0;
  double mask_ratio = 0.15;
  bool in_batch_negatives = true;
  LossKind loss = LossKind::kContrastive;
  double hinge_margin = 0.1;
  std::uint64_t seed = 0;

  bool pretraining() const { return stage == Stage::kPretrain || stage == Stage::kPostPretrain; }
  void validate() const;

  /// Desk-scale defaults for a stage.
  static StageConfig defaults(Stage stage);
  /// lr 2e-5, batch 160, 4000 warmup steps, 0.01 decay.
  static StageConfig production(Stage stage);
};

/// Warmup from 0 then linear decay to final_lr_fraction * peak at total_steps.
double learning_rate_at(const StageConfig& cfg, std::size_t step, std::size_t total_steps);

/// Sentence pairs for MLM+NSP. NSP negatives replace `second` by a title
/// drawn from `negative_pool`.
struct TextPair {
  std::string first;
  std::string second;
};

struct PipelineData {
  std::vector<TextPair> pretrain_pairs;       // stage 1
  std::vector<TextPair> post_pretrain_pairs;  // stage 2
  std::vector<std::string> negative_pool;     // document titles
  std::vector<ClickLogRecord> click_log;      // stage 3
  std::vector<GradedLabelRecord> graded;      // stage 4
};

struct ValidationMetrics {
  double recall_at_10 = 0.0;
  double pnr = 0.0;
};

using Validator = std::function<ValidationMetrics(const EncoderModel&)>;

struct EpochReport {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::size_t steps = 0;
  std::optional<ValidationMetrics> validation;
};

struct StageReport {
  Stage stage = Stage::kPretrain;
  std::size_t examples = 0;
  std::size_t total_steps = 0;
  std::size_t skipped_queries = 0;
  std::size_t truncated_pairs = 0;
  std::vector<EpochReport> epochs;
};

/// Adam over a fixed parameter list.
class Adam {
 public:
  explicit Adam(std::vector<Tensor*> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step(double lr);
  void zero_grad();

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

/// Trains `model` in place for one stage. Throws ContractError when the
/// stage has no data.
StageReport run_stage(EncoderModel& model, const StageConfig& cfg, const PipelineData& data,
                      const Vocabulary& vocab, const Validator& validate = nullptr);

/// Runs stages in paradigm order; stages may be skipped but not reordered.
std::vector<StageReport> train_pipeline(EncoderModel& model, std::span<const StageConfig> stages,
                                        const PipelineData& data, const Vocabulary& vocab,
                                        const Validator& validate = nullptr);

}  // namespace polyret
