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

#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "fixtures.h"
#include "polyret/errors.h"
#include "polyret/training.h"

using namespace polyret;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.n_layers = 1;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.vocab_size = 40;
  c.max_len = 10;
  c.m = 2;
  c.d_compress = 4;
  c.dropout = 0.0;
  return c;
}

ClickLogRecord click(std::uint64_t q, std::uint64_t d, bool clicked) {
  return {q, "q" + std::to_string(q), d, "d" + std::to_string(d), clicked, clicked ? 20.0 : 0.0};
}

GradedLabelRecord graded(std::uint64_t q, std::uint64_t d, int grade) {
  return {q, "q" + std::to_string(q), d, "d" + std::to_string(d), grade};
}

std::vector<TrainExample> random_batch(std::size_t b, Rng& rng) {
  auto s = [&](std::size_t len) {
    TokenSequence t;
    t.ids.push_back(kClsId);
    for (std::size_t i = 0; i < len; ++i) t.ids.push_back(static_cast<TokenId>(5 + rng.index(35)));
    return t;
  };
  std::vector<TrainExample> batch;
  for (std::size_t i = 0; i < b; ++i) batch.push_back({s(1 + rng.index(4)), s(1 + rng.index(5)), s(1 + rng.index(5))});
  return batch;
}

}  // namespace

TEST_CASE("click-log mining pairs clicks with non-clicks of the same query") {
  std::vector<ClickLogRecord> log{click(1, 10, true),  click(1, 11, false), click(2, 20, true),
                                  click(1, 12, false), click(1, 13, true),  click(3, 30, false)};
  Rng rng(0);
  MiningResult all = mine_from_click_log(log, NegativePolicy::kSampleAll, rng);
  CHECK(all.triplets.size() == 4);
  CHECK(all.skipped_queries == 2);
  for (const auto& t : all.triplets) {
    CHECK(t.query_id == 1);
    CHECK((t.positive_id == 10 || t.positive_id == 13));
    CHECK((t.negative_id == 11 || t.negative_id == 12));
    CHECK(t.positive == "d" + std::to_string(t.positive_id));
  }
  MiningResult one = mine_from_click_log(log, NegativePolicy::kSampleOne, rng);
  CHECK(one.triplets.size() == 2);

  log.push_back({4, "q", 40, "d", false, -1.0});
  CHECK_THROWS_AS(mine_from_click_log(log, NegativePolicy::kSampleAll, rng), InputError);
}

TEST_CASE("graded mining keeps strictly ordered pairs, higher grade first") {
  std::vector<GradedLabelRecord> labels{graded(1, 10, 3), graded(1, 11, 1), graded(1, 12, 3),
                                        graded(2, 20, 2), graded(2, 21, 2), graded(3, 30, 0),
                                        graded(3, 31, 4)};
  MiningResult r = mine_from_graded_labels(labels);
  CHECK(r.triplets.size() == 3);
  CHECK(r.skipped_queries == 1);
  for (const auto& t : r.triplets) {
    int gp = 0, gn = 0;
    for (const auto& l : labels) {
      if (l.query_id != t.query_id) continue;
      if (l.doc_id == t.positive_id) gp = l.grade;
      if (l.doc_id == t.negative_id) gn = l.grade;
    }
    CHECK(gp > gn);
  }
  labels.push_back(graded(3, 32, 5));
  CHECK_THROWS_AS(mine_from_graded_labels(labels), InputError);
}

TEST_CASE("in-batch score matrix equals the naive pairwise loop") {
  EncoderModel model(small_config(), 3);
  Rng rng(3);
  for (std::size_t b : {2u, 3u, 5u}) {
    auto batch = random_batch(b, rng);
    Tape tape(Tape::Mode::kInference);
    EncoderGraph graph(tape, model);
    Tensor s = in_batch_scores(graph, batch).value();
    REQUIRE(s.shape() == Shape{b, 2 * b});
    double naive_loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      Tensor g = query_global_embeddings(model, batch[i].query);
      std::vector<double> row;
      for (std::size_t j = 0; j < 2 * b; ++j) {
        const TokenSequence& doc = j < b ? batch[j].positive : batch[j - b].strong_negative;
        row.push_back(score_train(g, embed_document(model, doc).data()));
        CHECK(std::abs(s.at(i, j) - row.back()) <= 1e-12);
      }
      // Negatives of query i: every column except its own positive.
      CHECK(row.size() - 1 == 2 * b - 1);
      double z = 0.0;
      for (double v : row) z += std::exp(v);
      naive_loss += -std::log(std::exp(row[i]) / z) / static_cast<double>(b);
    }
    CHECK(contrastive_loss(s, 1.0) == doctest::Approx(naive_loss).epsilon(1e-12));
  }
  auto single = random_batch(1, rng);
  Tape tape;
  EncoderGraph graph(tape, model);
  CHECK_THROWS_AS(in_batch_scores(graph, single), ContractError);
}

TEST_CASE("own-pair scores are the diagonal blocks of the in-batch matrix") {
  EncoderModel model(small_config(), 4);
  Rng rng(4);
  auto batch = random_batch(3, rng);
  Tape tape(Tape::Mode::kInference);
  EncoderGraph graph(tape, model);
  Tensor full = in_batch_scores(graph, batch).value();
  Tensor own = own_pair_scores(graph, batch).value();
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(own.at(i, 0) == full.at(i, i));
    CHECK(own.at(i, 1) == full.at(i, 3 + i));
  }
}

TEST_CASE("contrastive and hinge losses against closed forms") {
  Tensor s = Tensor::matrix(2, 4, {1.0, 0.0, 0.5, -1.0, 0.2, 2.0, 0.0, 0.1});
  auto ce = [](std::vector<double> row, std::size_t t, double tau) {
    double z = 0;
    for (double v : row) z += std::exp(v / tau);
    return -std::log(std::exp(row[t] / tau) / z);
  };
  double expected = 0.5 * (ce({1.0, 0.0, 0.5, -1.0}, 0, 0.5) + ce({0.2, 2.0, 0.0, 0.1}, 1, 0.5));
  CHECK(contrastive_loss(s, 0.5) == doctest::Approx(expected).epsilon(1e-13));
  CHECK_THROWS_AS(contrastive_loss(s, 0.0), ContractError);

  Tape tape;
  Var pairs = tape.constant(Tensor::matrix(3, 2, {1.0, 0.5, 0.0, 0.05, 0.2, 0.4}));
  // max(0, 0.1 - 0.5) + max(0, 0.1 + 0.05) + max(0, 0.1 + 0.2), averaged.
  CHECK(hinge_loss(pairs, 0.1).item() == doctest::Approx((0.15 + 0.3) / 3.0).epsilon(1e-13));
}

TEST_CASE("NSP input layout and truncation") {
  std::vector<TokenId> a{5, 6, 7}, b{8, 9, 10, 11};
  NspInput full = make_nsp_input(a, b, 20);
  CHECK(full.tokens.ids == std::vector<TokenId>{kClsId, 5, 6, 7, kSepId, 8, 9, 10, 11, kSepId});
  CHECK_FALSE(full.truncated);
  NspInput cut = make_nsp_input(a, b, 8);
  CHECK(cut.tokens.ids == std::vector<TokenId>{kClsId, 5, 6, 7, kSepId, 8, 9, kSepId});
  CHECK(cut.truncated);
  CHECK_THROWS_AS(make_nsp_input(a, b, 2), ContractError);
}

TEST_CASE("masking picks maskable positions only") {
  TokenSequence s{{kClsId, 5, 6, 7, kSepId, 8, 9, 10, 11, 12, 13, 14, kSepId}};
  Rng rng(5);
  MaskedSequence m = mask_tokens(s, 0.15, rng);
  CHECK(m.positions.size() == 2);  // round(0.15 * 10)
  for (std::size_t i = 0; i < m.positions.size(); ++i) {
    std::size_t p = m.positions[i];
    CHECK(m.tokens.ids[p] == kMaskId);
    CHECK(m.targets[i] == s.ids[p]);
    CHECK(s.ids[p] != kClsId);
    CHECK(s.ids[p] != kSepId);
  }
  TokenSequence shortseq{{kClsId, 5}};
  CHECK(mask_tokens(shortseq, 0.15, rng).positions.size() == 1);
  CHECK(mask_tokens(shortseq, 0.0, rng).positions.empty());
  CHECK_THROWS_AS(mask_tokens(TokenSequence{{kClsId, kSepId}}, 0.15, rng), ContractError);
}

TEST_CASE("pretraining losses are finite and positive") {
  EncoderModel model(small_config(), 6);
  Rng rng(6);
  TokenSequence s{{kClsId, 5, 6, 7, 8}};
  CHECK(mlm_loss(model, s, 0.5, rng) > 0.0);
  NspInput in = make_nsp_input(std::vector<TokenId>{5, 6}, std::vector<TokenId>{7}, 10);
  double pos = nsp_loss(model, in, true), neg = nsp_loss(model, in, false);
  // The two labels of one logit: exp(-pos) + exp(-neg) == 1.
  CHECK(std::exp(-pos) + std::exp(-neg) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("learning-rate schedule") {
  StageConfig c;
  c.learning_rate = 1.0;
  c.warmup_steps = 10;
  c.final_lr_fraction = 0.01;
  CHECK(learning_rate_at(c, 0, 110) == 0.0);
  CHECK(learning_rate_at(c, 5, 110) == 0.5);
  CHECK(learning_rate_at(c, 10, 110) == 1.0);
  CHECK(learning_rate_at(c, 60, 110) == doctest::Approx(0.505));
  CHECK(learning_rate_at(c, 110, 110) == doctest::Approx(0.01));
  CHECK(learning_rate_at(c, 500, 110) == doctest::Approx(0.01));
}

TEST_CASE("stage names and config validation") {
  for (int i = 1; i <= 4; ++i) {
    Stage s = static_cast<Stage>(i);
    CHECK(parse_stage(stage_name(s)) == s);
    CHECK(parse_stage(std::to_string(i)) == s);
  }
  CHECK_THROWS_AS(parse_stage("stage5"), InputError);
  StageConfig c = StageConfig::defaults(Stage::kIntermediateFineTune);
  CHECK_NOTHROW(c.validate());
  c.batch_size = 1;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("batch_size"), ContractError);
  StageConfig p = StageConfig::production(Stage::kTargetFineTune);
  CHECK(p.learning_rate == 2e-5);
  CHECK(p.batch_size == 160);
  CHECK(p.warmup_steps == 4000);
}

TEST_CASE("Adam step on a quadratic") {
  Tensor w = Tensor::vector({1.0, -2.0});
  Adam adam({&w});
  for (int i = 0; i < 200; ++i) {
    adam.zero_grad();
    Tape tape;
    Var v = tape.parameter(w);
    tape.backward(dot(v, v));
    adam.step(0.05);
  }
  CHECK(std::abs(w[0]) < 0.05);
  CHECK(std::abs(w[1]) < 0.05);
}

TEST_CASE("stages train deterministically and reduce their loss") {
  Vocabulary vocab({"alpha", "beta", "gamma", "delta", "omega", "kappa"});
  PipelineData data;
  for (int i = 0; i < 12; ++i) {
    data.pretrain_pairs.push_back({"alpha beta gamma", "delta omega"});
    data.post_pretrain_pairs.push_back({"kappa alpha", "beta beta"});
  }
  data.negative_pool = {"omega kappa", "gamma"};
  for (std::uint64_t q = 0; q < 8; ++q) {
    const std::string text = q % 2 ? "alpha" : "omega";
    data.click_log.push_back({q, text, 100 + q, q % 2 ? "alpha beta" : "omega kappa", true, 30});
    data.click_log.push_back({q, text, 200 + q, q % 2 ? "omega kappa" : "alpha beta", false, 0});
    data.graded.push_back({q, text, 100 + q, q % 2 ? "alpha beta" : "omega kappa", 4});
    data.graded.push_back({q, text, 200 + q, q % 2 ? "omega kappa" : "alpha beta", 0});
  }
  auto train = [&] {
    EncoderModel model(small_config(), 1);
    std::vector<StageConfig> stages;
    for (int i = 1; i <= 4; ++i) {
      StageConfig c = StageConfig::defaults(static_cast<Stage>(i));
      c.batch_size = 4;
      c.epochs = 3;
      c.warmup_steps = 2;
      c.learning_rate = 1e-2;
      c.seed = static_cast<std::uint64_t>(i);
      stages.push_back(c);
    }
    auto reports = train_pipeline(model, stages, data, vocab);
    return std::make_pair(std::move(model), std::move(reports));
  };
  auto [m1, r1] = train();
  auto [m2, r2] = train();
  CHECK(m1 == m2);
  REQUIRE(r1.size() == 4);
  for (const auto& r : r1) CHECK(r.epochs.size() == 3);
  CHECK(r1[0].total_steps == 9);
  CHECK(r1[2].total_steps == 6);
  CHECK(r1[2].examples == 8);
  CHECK(r1[3].examples == 8);
  CHECK(r1[3].epochs.back().mean_loss < r1[3].epochs.front().mean_loss);
  CHECK(r1[2].epochs.back().mean_loss < r1[2].epochs.front().mean_loss);

  std::vector<StageConfig> backwards{StageConfig::defaults(Stage::kTargetFineTune),
                                     StageConfig::defaults(Stage::kPretrain)};
  EncoderModel model(small_config(), 1);
  CHECK_THROWS_AS(train_pipeline(model, backwards, data, vocab), ContractError);
  PipelineData empty;
  CHECK_THROWS_AS(run_stage(model, StageConfig::defaults(Stage::kPretrain), empty, vocab),
                  ContractError);
}
