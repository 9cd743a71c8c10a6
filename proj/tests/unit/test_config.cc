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

#include <string>
#include <vector>

#include "doctest.h"
#include "polyret/config.h"
#include "polyret/errors.h"

using namespace polyret;

TEST_CASE("defaults validate and survive a JSON round trip") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  RunConfig back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(RunConfig::from_json("{}").to_json() == c.to_json());
}

TEST_CASE("partial files override only what they name") {
  RunConfig c = RunConfig::from_json(R"({
    "seed": 9,
    "encoder": {"context_codes": 2, "d_compress": 8},
    "training": {"stages": "3,4", "intermediate_ft": {"epochs": 2, "loss": "hinge"}},
    "index": {"mode": "flat"},
    "retrieval": {"k_text": 0}
  })");
  CHECK(c.seed == 9);
  CHECK(c.encoder.m == 2);
  CHECK(c.encoder.d_compress == 8);
  CHECK(c.encoder.d_model == RunConfig::default_encoder().d_model);
  CHECK(c.stages == std::vector<Stage>{Stage::kIntermediateFineTune, Stage::kTargetFineTune});
  StageConfig s3 = c.stage_config(Stage::kIntermediateFineTune);
  CHECK(s3.epochs == 2);
  CHECK(s3.loss == LossKind::kHinge);
  CHECK(s3.seed == 9003);
  CHECK(c.stage_config(Stage::kTargetFineTune).epochs ==
        StageConfig::defaults(Stage::kTargetFineTune).epochs);
  CHECK(c.ann.mode == AnnMode::kFlat);
  CHECK(c.retrieval.k_text == 0);
  CHECK(c.data_spec().seed == 9);
  CHECK(c.ann_params().seed == 9);
}

TEST_CASE("unknown fields and bad values are config errors naming the field") {
  CHECK_THROWS_WITH_AS(RunConfig::from_json(R"({"encoder": {"width": 3}})"),
                       doctest::Contains("encoder.width"), ConfigError);
  CHECK_THROWS_WITH_AS(RunConfig::from_json(R"({"colour": 1})"), doctest::Contains("colour"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(RunConfig::from_json(R"({"encoder": {"n_layers": "two"}})"),
                       doctest::Contains("encoder.n_layers"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json("{not json"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"training": {"target_ft": {"loss": "ranknet"}}})"),
                  ConfigError);

  RunConfig c;
  c.ann.n_probe = c.ann.n_clusters + 1;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("index.n_probe"), ConfigError);
  c = RunConfig();
  c.encoder.n_heads = 5;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("encoder"), ConfigError);
  c = RunConfig();
  c.retrieval.k_sem = c.retrieval.k_text = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig();
  c.encoder.vocab_size = 10;
  CHECK_THROWS_AS(c.encoder_for(500), ConfigError);
  CHECK(RunConfig().encoder_for(500).vocab_size == 500);
}

TEST_CASE("overrides parse JSON values and fall back to strings") {
  RunConfig c = apply_overrides(RunConfig(), {"seed=4", "paths.run_dir=/tmp/x",
                                              "encoder.use_poly=false",
                                              "training.target_ft.learning_rate=0.01"});
  CHECK(c.seed == 4);
  CHECK(c.paths.run_dir == "/tmp/x");
  CHECK_FALSE(c.encoder.use_poly);
  CHECK(c.stage_config(Stage::kTargetFineTune).learning_rate == 0.01);
  CHECK_THROWS_AS(apply_overrides(RunConfig(), {"seed"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(RunConfig(), {"encoder.nope=1"}), ConfigError);
}

TEST_CASE("stage lists") {
  CHECK(parse_stage_list("none").empty());
  CHECK(parse_stage_list("").empty());
  CHECK(parse_stage_list("1, 2,4") ==
        std::vector<Stage>{Stage::kPretrain, Stage::kPostPretrain, Stage::kTargetFineTune});
  CHECK(parse_stage_list("pretrain,target_ft").size() == 2);
  CHECK_THROWS_AS(parse_stage_list("2,1"), ConfigError);
  CHECK(stage_list_string(parse_stage_list("1,3")) == "1,3");
  CHECK(stage_list_string({}) == "none");
}
