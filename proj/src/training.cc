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

#include "polyret/training.h"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "polyret/errors.h"

namespace polyret {

namespace {

template <typename Record>
std::vector<std::vector<const Record*>> group_by_query(std::span<const Record> records) {
  std::vector<std::vector<const Record*>> groups;
  std::unordered_map<std::uint64_t, std::size_t> slot;
  for (const Record& r : records) {
    auto [it, inserted] = slot.emplace(r.query_id, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(&r);
  }
  return groups;
}

std::vector<TokenId> content_ids(const Vocabulary& vocab, const std::string& text,
                                 std::size_t max_len) {
  TokenSequence s = make_sequence(vocab, text, max_len);
  return {s.ids.begin() + 1, s.ids.end()};
}

}  // namespace

// ---------------------------------------------------------------------------
// Mining

MiningResult mine_from_click_log(std::span<const ClickLogRecord> records, NegativePolicy policy,
                                 Rng& rng) {
  MiningResult out;
  for (const auto& group : group_by_query(records)) {
    std::vector<const ClickLogRecord*> clicked, skipped;
    for (const ClickLogRecord* r : group) {
      if (r->dwell_time < 0.0) throw InputError("click log: negative dwell_time");
      (r->clicked ? clicked : skipped).push_back(r);
    }
    if (clicked.empty() || skipped.empty()) {
      ++out.skipped_queries;
      continue;
    }
    auto emit = [&](const ClickLogRecord* pos, const ClickLogRecord* neg) {
      out.triplets.push_back({pos->query_id, pos->query_text, pos->doc_id, pos->doc_title,
                              neg->doc_id, neg->doc_title});
    };
    for (const ClickLogRecord* pos : clicked) {
      if (policy == NegativePolicy::kSampleOne) {
        emit(pos, skipped[rng.index(skipped.size())]);
      } else {
        for (const ClickLogRecord* neg : skipped) emit(pos, neg);
      }
    }
  }
  return out;
}

MiningResult mine_from_graded_labels(std::span<const GradedLabelRecord> records) {
  MiningResult out;
  for (const auto& group : group_by_query(records)) {
    const std::size_t before = out.triplets.size();
    for (std::size_t i = 0; i < group.size(); ++i) {
      for (std::size_t j = i + 1; j < group.size(); ++j) {
        const GradedLabelRecord* a = group[i];
        const GradedLabelRecord* b = group[j];
        for (const GradedLabelRecord* r : {a, b}) {
          if (r->grade < 0 || r->grade > 4) {
            throw InputError("graded label: grade " + std::to_string(r->grade) +
                             " outside [0, 4]");
          }
        }
        if (a->grade == b->grade) continue;
        if (a->grade < b->grade) std::swap(a, b);
        out.triplets.push_back({a->query_id, a->query_text, a->doc_id, a->doc_title, b->doc_id,
                                b->doc_title});
      }
    }
    if (out.triplets.size() == before) ++out.skipped_queries;
  }
  return out;
}

std::vector<TrainExample> tokenize_triplets(std::span<const TextTriplet> triplets,
                                            const Vocabulary& vocab, std::size_t max_len) {
  std::vector<TrainExample> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) {
    out.push_back({make_sequence(vocab, t.query, max_len), make_sequence(vocab, t.positive, max_len),
                   make_sequence(vocab, t.negative, max_len)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Objectives

Var in_batch_scores(EncoderGraph& graph, std::span<const TrainExample> batch, Rng* dropout_rng) {
  if (batch.size() < 2) {
    throw ContractError("in_batch_scores: batch of " + std::to_string(batch.size()) +
                        " has no random negatives; need B >= 2");
  }
  std::vector<TokenSequence> queries, docs;
  queries.reserve(batch.size());
  docs.reserve(2 * batch.size());
  for (const auto& ex : batch) queries.push_back(ex.query);
  for (const auto& ex : batch) docs.push_back(ex.positive);
  for (const auto& ex : batch) docs.push_back(ex.strong_negative);
  return graph.score_matrix_train(queries, docs, dropout_rng);
}

Var own_pair_scores(EncoderGraph& graph, std::span<const TrainExample> batch, Rng* dropout_rng) {
  if (batch.empty()) throw ContractError("own_pair_scores: empty batch");
  const std::size_t b = batch.size();
  std::vector<TokenSequence> queries, docs;
  for (const auto& ex : batch) queries.push_back(ex.query);
  for (const auto& ex : batch) docs.push_back(ex.positive);
  for (const auto& ex : batch) docs.push_back(ex.strong_negative);
  Var full = graph.score_matrix_train(queries, docs, dropout_rng);
  std::vector<std::size_t> offsets;
  for (std::size_t i = 0; i < b; ++i) {
    offsets.push_back(i * 2 * b + i);
    offsets.push_back(i * 2 * b + b + i);
  }
  return gather_elements(full, std::move(offsets), {b, 2});
}

Var contrastive_loss(Var scores, double temperature) {
  if (!(temperature > 0.0)) throw ContractError("contrastive_loss: temperature must be > 0");
  const Tensor& s = scores.value();
  if (s.rank() != 2) throw ShapeError("contrastive_loss: scores must be a matrix");
  const std::size_t rows = s.shape()[0], cols = s.shape()[1];
  std::vector<std::size_t> targets(rows, 0);
  if (cols == 2 * rows) {
    for (std::size_t i = 0; i < rows; ++i) targets[i] = i;
  }
  return softmax_cross_entropy(scores, std::move(targets), temperature);
}

double contrastive_loss(const Tensor& scores, double temperature) {
  Tape tape(Tape::Mode::kInference);
  return contrastive_loss(tape.frozen(scores), temperature).item();
}

Var hinge_loss(Var pair_scores, double margin) {
  const Tensor& s = pair_scores.value();
  if (s.rank() != 2 || s.shape()[1] != 2) throw ShapeError("hinge_loss: expected [B x 2] scores");
  const std::size_t b = s.shape()[0];
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < b; ++i) {
    pos.push_back(2 * i);
    neg.push_back(2 * i + 1);
  }
  Var gap = sub(gather_elements(pair_scores, std::move(neg), {b, 1}),
                gather_elements(pair_scores, std::move(pos), {b, 1}));
  return scale(sum(relu(shift(gap, margin))), 1.0 / static_cast<double>(b));
}

NspInput make_nsp_input(std::span<const TokenId> a, std::span<const TokenId> b,
                        std::size_t max_len) {
  if (max_len < 3) throw ContractError("make_nsp_input: max_len must be >= 3");
  NspInput out;
  const std::size_t budget = max_len - 3;
  const std::size_t keep_a = std::min(a.size(), budget);
  const std::size_t keep_b = std::min(b.size(), budget - keep_a);
  out.truncated = keep_a < a.size() || keep_b < b.size();
  auto& ids = out.tokens.ids;
  ids.push_back(kClsId);
  ids.insert(ids.end(), a.begin(), a.begin() + static_cast<std::ptrdiff_t>(keep_a));
  ids.push_back(kSepId);
  ids.insert(ids.end(), b.begin(), b.begin() + static_cast<std::ptrdiff_t>(keep_b));
  ids.push_back(kSepId);
  return out;
}

MaskedSequence mask_tokens(const TokenSequence& seq, double mask_ratio, Rng& rng) {
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) {
    throw ContractError("mask_tokens: mask_ratio must be in [0, 1]");
  }
  MaskedSequence out{seq, {}, {}};
  if (mask_ratio == 0.0) return out;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const TokenId id = seq.ids[i];
    if (id != kClsId && id != kSepId && id != kPadId) candidates.push_back(i);
  }
  if (candidates.empty()) throw ContractError("mask_tokens: sequence has nothing maskable");
  const auto wanted = static_cast<std::size_t>(
      std::llround(mask_ratio * static_cast<double>(candidates.size())));
  const std::size_t k = std::clamp<std::size_t>(wanted, 1, candidates.size());
  rng.shuffle(candidates);
  candidates.resize(k);
  std::sort(candidates.begin(), candidates.end());
  for (std::size_t pos : candidates) {
    out.positions.push_back(pos);
    out.targets.push_back(seq.ids[pos]);
    out.tokens.ids[pos] = kMaskId;
  }
  return out;
}

double mlm_loss(const EncoderModel& model, const MaskedSequence& masked) {
  if (masked.positions.empty()) return 0.0;
  Tape tape(Tape::Mode::kInference);
  EncoderGraph graph(tape, model);
  auto enc = graph.encode(std::span(&masked.tokens, 1));
  std::vector<std::size_t> targets(masked.targets.begin(), masked.targets.end());
  return softmax_cross_entropy(graph.mlm_logits(enc, masked.positions), std::move(targets)).item();
}

double mlm_loss(const EncoderModel& model, const TokenSequence& seq, double mask_ratio, Rng& rng) {
  return mlm_loss(model, mask_tokens(seq, mask_ratio, rng));
}

double nsp_loss(const EncoderModel& model, const NspInput& input, bool is_next) {
  Tape tape(Tape::Mode::kInference);
  EncoderGraph graph(tape, model);
  auto enc = graph.encode(std::span(&input.tokens, 1));
  return sigmoid_cross_entropy(graph.nsp_logits(enc), {is_next ? 1.0 : 0.0}).item();
}

// ---------------------------------------------------------------------------
// Stage configuration

std::string stage_name(Stage stage) {
  switch (stage) {
    case Stage::kPretrain: return "pretrain";
    case Stage::kPostPretrain: return "post_pretrain";
    case Stage::kIntermediateFineTune: return "intermediate_ft";
    case Stage::kTargetFineTune: return "target_ft";
  }
  throw ContractError("unknown stage");
}

Stage parse_stage(const std::string& name) {
  for (int i = 1; i <= 4; ++i) {
    const auto s = static_cast<Stage>(i);
    if (name == stage_name(s) || name == std::to_string(i)) return s;
  }
  throw InputError("unknown stage '" + name + "'");
}

void StageConfig::validate() const {
  auto fail = [&](const std::string& field, const std::string& why) {
    throw ContractError("stage " + stage_name(stage) + ": " + field + " " + why);
  };
  if (!(learning_rate > 0.0)) fail("learning_rate", "must be > 0");
  if (batch_size == 0) fail("batch_size", "must be >= 1");
  if (!pretraining() && in_batch_negatives && batch_size < 2) {
    fail("batch_size", "must be >= 2 with in-batch negatives");
  }
  if (epochs == 0) fail("epochs", "must be >= 1");
  if (!(temperature > 0.0)) fail("temperature", "must be > 0");
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) fail("mask_ratio", "must be in [0, 1]");
  if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0)) {
    fail("final_lr_fraction", "must be in [0, 1]");
  }
  if (!(hinge_margin >= 0.0)) fail("hinge_margin", "must be >= 0");
}

StageConfig StageConfig::defaults(Stage stage) {
  StageConfig c;
  c.stage = stage;
  switch (stage) {
    case Stage::kPretrain:
      c.epochs = 8;
      c.learning_rate = 3e-3;
      c.warmup_steps = 50;
      break;
    case Stage::kPostPretrain:
      c.epochs = 6;
      c.learning_rate = 3e-3;
      c.warmup_steps = 50;
      break;
    case Stage::kIntermediateFineTune:
      c.epochs = 10;
      c.warmup_steps = 50;
      break;
    case Stage::kTargetFineTune:
      c.epochs = 6;
      c.warmup_steps = 20;
      c.learning_rate = 5e-4;
      break;
  }
  return c;
}

StageConfig StageConfig::production(Stage stage) {
  StageConfig c;
  c.stage = stage;
  c.learning_rate = 2e-5;
  c.batch_size = 160;
  c.warmup_steps = 4000;
  c.final_lr_fraction = 0.01;
  return c;
}

double learning_rate_at(const StageConfig& cfg, std::size_t step, std::size_t total_steps) {
  const double peak = cfg.learning_rate;
  if (step < cfg.warmup_steps) {
    return peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const double floor = peak * cfg.final_lr_fraction;
  if (total_steps <= cfg.warmup_steps) return peak;
  const double span = static_cast<double>(total_steps - cfg.warmup_steps);
  const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / span);
  return peak + (floor - peak) * progress;
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(std::vector<Tensor*> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Tensor* p : params_) {
    m_.emplace_back(p->numel(), 0.0);
    v_.emplace_back(p->numel(), 0.0);
  }
}

void Adam::zero_grad() {
  for (Tensor* p : params_) p->zero_grad();
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = *params_[k];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------
// Stage runner

namespace {

struct TokenPair {
  std::vector<TokenId> first, second;
};

std::vector<Tensor*> stage_parameters(EncoderModel& model, bool pretraining) {
  std::vector<Tensor*> params = model.backbone_parameters();
  auto extra = pretraining ? model.pretraining_parameters() : model.retrieval_parameters();
  params.insert(params.end(), extra.begin(), extra.end());
  return params;
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size, std::size_t min_batch) {
  std::size_t full = n / batch_size;
  const std::size_t rest = n % batch_size;
  return full + (rest >= min_batch ? 1 : 0);
}

double pretraining_step(EncoderModel& model, std::span<const TokenPair> batch,
                        const std::vector<std::vector<TokenId>>& pool, const StageConfig& cfg,
                        Rng& rng, std::size_t& truncated) {
  const std::size_t max_len = model.config().max_len;
  std::vector<TokenSequence> inputs;
  std::vector<double> labels;
  std::vector<std::size_t> mask_rows, mask_targets;
  std::size_t offset = 0;
  for (const TokenPair& pair : batch) {
    const bool is_next = pool.empty() || rng.bernoulli(0.5);
    const auto& second = is_next ? pair.second : pool[rng.index(pool.size())];
    NspInput nsp = make_nsp_input(pair.first, second, max_len);
    truncated += nsp.truncated ? 1 : 0;
    MaskedSequence masked = mask_tokens(nsp.tokens, cfg.mask_ratio, rng);
    for (std::size_t i = 0; i < masked.positions.size(); ++i) {
      mask_rows.push_back(offset + masked.positions[i]);
      mask_targets.push_back(static_cast<std::size_t>(masked.targets[i]));
    }
    offset += masked.tokens.size();
    inputs.push_back(std::move(masked.tokens));
    labels.push_back(is_next ? 1.0 : 0.0);
  }
  Tape tape;
  EncoderGraph graph(tape, model);
  auto enc = graph.encode(inputs, &rng);
  Var loss = sigmoid_cross_entropy(graph.nsp_logits(enc), std::move(labels));
  if (!mask_rows.empty()) {
    loss = add(loss, softmax_cross_entropy(graph.mlm_logits(enc, mask_rows), std::move(mask_targets)));
  }
  tape.backward(loss);
  return loss.item();
}

double contrastive_step(EncoderModel& model, std::span<const TrainExample> batch,
                        const StageConfig& cfg, Rng& rng) {
  Tape tape;
  EncoderGraph graph(tape, model);
  Var loss;
  if (cfg.loss == LossKind::kHinge) {
    loss = hinge_loss(own_pair_scores(graph, batch, &rng), cfg.hinge_margin);
  } else if (cfg.in_batch_negatives) {
    loss = contrastive_loss(in_batch_scores(graph, batch, &rng), cfg.temperature);
  } else {
    loss = contrastive_loss(own_pair_scores(graph, batch, &rng), cfg.temperature);
  }
  tape.backward(loss);
  return loss.item();
}

}  // namespace

StageReport run_stage(EncoderModel& model, const StageConfig& cfg, const PipelineData& data,
                      const Vocabulary& vocab, const Validator& validate) {
  cfg.validate();
  const std::size_t max_len = model.config().max_len;
  StageReport report;
  report.stage = cfg.stage;
  Rng rng(cfg.seed);
  Rng data_rng = rng.fork(1);
  Rng step_rng = rng.fork(2);

  Adam adam(stage_parameters(model, cfg.pretraining()));
  std::size_t step = 0;

  if (cfg.pretraining()) {
    const auto& pairs =
        cfg.stage == Stage::kPretrain ? data.pretrain_pairs : data.post_pretrain_pairs;
    if (pairs.empty()) throw ContractError("run_stage " + stage_name(cfg.stage) + ": no data");
    std::vector<TokenPair> tokens;
    tokens.reserve(pairs.size());
    for (const auto& p : pairs) {
      tokens.push_back({content_ids(vocab, p.first, max_len), content_ids(vocab, p.second, max_len)});
    }
    std::vector<std::vector<TokenId>> pool;
    for (const auto& t : data.negative_pool) pool.push_back(content_ids(vocab, t, max_len));
    report.examples = tokens.size();
    const std::size_t per_epoch = batches_per_epoch(tokens.size(), cfg.batch_size, 1);
    report.total_steps = per_epoch * cfg.epochs;
    if (cfg.max_steps > 0) report.total_steps = std::min(report.total_steps, cfg.max_steps);

    for (std::size_t epoch = 0; epoch < cfg.epochs && step < report.total_steps; ++epoch) {
      data_rng.shuffle(tokens);
      EpochReport er{epoch + 1, 0.0, 0, std::nullopt};
      for (std::size_t start = 0; start < tokens.size() && step < report.total_steps;
           start += cfg.batch_size) {
        const auto batch = std::span(tokens).subspan(
            start, std::min(cfg.batch_size, tokens.size() - start));
        adam.zero_grad();
        er.mean_loss += pretraining_step(model, batch, pool, cfg, step_rng, report.truncated_pairs);
        adam.step(learning_rate_at(cfg, step, report.total_steps));
        ++step;
        ++er.steps;
      }
      if (er.steps > 0) er.mean_loss /= static_cast<double>(er.steps);
      if (validate) er.validation = validate(model);
      report.epochs.push_back(er);
    }
    return report;
  }

  // Contrastive stages.
  const bool from_clicks = cfg.stage == Stage::kIntermediateFineTune;
  std::vector<TrainExample> fixed;
  if (from_clicks) {
    if (data.click_log.empty()) throw ContractError("run_stage intermediate_ft: no click log");
  } else {
    auto mined = mine_from_graded_labels(data.graded);
    report.skipped_queries = mined.skipped_queries;
    fixed = tokenize_triplets(mined.triplets, vocab, max_len);
    if (fixed.empty()) throw ContractError("run_stage target_ft: no graded triplets");
  }
  const std::size_t min_batch = cfg.in_batch_negatives && cfg.loss == LossKind::kContrastive ? 2 : 1;

  // With one sampled negative per click the epoch size is the click count.
  std::size_t epoch_size = fixed.size();
  if (from_clicks) {
    Rng probe(0);
    auto mined = mine_from_click_log(data.click_log, NegativePolicy::kSampleOne, probe);
    epoch_size = mined.triplets.size();
    report.skipped_queries = mined.skipped_queries;
    if (epoch_size == 0) throw ContractError("run_stage intermediate_ft: no mineable queries");
  }
  report.examples = epoch_size;
  report.total_steps = batches_per_epoch(epoch_size, cfg.batch_size, min_batch) * cfg.epochs;
  if (cfg.max_steps > 0) report.total_steps = std::min(report.total_steps, cfg.max_steps);

  for (std::size_t epoch = 0; epoch < cfg.epochs && step < report.total_steps; ++epoch) {
    std::vector<TrainExample> examples;
    if (from_clicks) {
      Rng epoch_rng = data_rng.fork(epoch);
      auto mined = mine_from_click_log(data.click_log, NegativePolicy::kSampleOne, epoch_rng);
      examples = tokenize_triplets(mined.triplets, vocab, max_len);
    } else {
      examples = fixed;
    }
    data_rng.shuffle(examples);
    EpochReport er{epoch + 1, 0.0, 0, std::nullopt};
    for (std::size_t start = 0; start < examples.size() && step < report.total_steps;
         start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, examples.size() - start);
      if (n < min_batch) break;
      adam.zero_grad();
      er.mean_loss += contrastive_step(model, std::span(examples).subspan(start, n), cfg, step_rng);
      adam.step(learning_rate_at(cfg, step, report.total_steps));
      ++step;
      ++er.steps;
    }
    if (er.steps > 0) er.mean_loss /= static_cast<double>(er.steps);
    if (validate) er.validation = validate(model);
    report.epochs.push_back(er);
  }
  return report;
}

std::vector<StageReport> train_pipeline(EncoderModel& model, std::span<const StageConfig> stages,
                                        const PipelineData& data, const Vocabulary& vocab,
                                        const Validator& validate) {
  if (stages.empty()) throw ContractError("train_pipeline: empty stage list");
  for (std::size_t i = 1; i < stages.size(); ++i) {
    if (static_cast<int>(stages[i].stage) <= static_cast<int>(stages[i - 1].stage)) {
      throw ContractError("train_pipeline: stage " + stage_name(stages[i].stage) +
                          " may not follow " + stage_name(stages[i - 1].stage));
    }
  }
  std::vector<StageReport> reports;
  for (const auto& cfg : stages) reports.push_back(run_stage(model, cfg, data, vocab, validate));
  return reports;
}

}  // namespace polyret
