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

// polyret command-line tool.
//
//   polyret gen-data | train | build-index | quantize | retrieve | eval |
//           serve | ablate   [--config FILE] [--set path=value]...
//                            [--seed N] [--data DIR] [--run DIR]
//
// Failures print {"error": {"kind": ..., "message": ...}} on stderr and exit
// with status 2 (bad input or configuration) or 3 (internal error).

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "polyret/commands.h"
#include "polyret/errors.h"

namespace {

using namespace polyret;

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data_dir;
  std::optional<std::string> run_dir;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_file, "JSON run configuration");
  cmd->add_option("--set", o.overrides, "Override a config field, e.g. training.target_ft.epochs=3");
  cmd->add_option("--seed", o.seed, "Seed for every stochastic step");
  cmd->add_option("--data", o.data_dir, "Corpus directory");
  cmd->add_option("--run", o.run_dir, "Run directory for models, indexes and reports");
}

RunConfig resolve(const CommonOptions& o, const std::optional<std::string>& stages) {
  RunConfig c;
  if (!o.config_file.empty()) c = RunConfig::from_json(read_text_file(o.config_file));
  c = apply_overrides(c, o.overrides);
  if (o.seed) c.seed = *o.seed;
  if (o.data_dir) c.paths.data_dir = *o.data_dir;
  if (o.run_dir) c.paths.run_dir = *o.run_dir;
  if (stages) c.stages = parse_stage_list(*stages);
  c.validate();
  return c;
}

void report_error(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::ordered_json{{"error", {{"kind", kind}, {"message", message}}}}.dump()
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Poly-encoder semantic retrieval toolkit"};
  app.require_subcommand(1);
  CommonOptions common;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  auto* train = app.add_subcommand("train", "Run the training stages");
  auto* build = app.add_subcommand("build-index", "Build indexes, store, features and ranker");
  auto* quant = app.add_subcommand("quantize", "Rebuild the quantized embedding store");
  auto* retrieve = app.add_subcommand("retrieve", "Answer one query");
  auto* eval = app.add_subcommand("eval", "Write evaluation metrics");
  auto* serve = app.add_subcommand("serve", "Answer JSON requests on stdin");
  auto* ablate = app.add_subcommand("ablate", "Compare stage lists and model variants");
  for (auto* cmd : {gen, train, build, quant, retrieve, eval, serve, ablate}) add_common(cmd, common);

  std::optional<std::string> train_stages;
  train->add_option("--stages", train_stages, "Stages to run, e.g. 1,2,3,4 or 3,4");

  std::string query;
  std::size_t k = 10;
  retrieve->add_option("--query", query, "Query text")->required();
  retrieve->add_option("--k", k, "Number of results");

  std::vector<std::string> ablate_stages;
  bool layering = false;
  ablate->add_option("--stages", ablate_stages, "A stage list to compare; repeatable");
  ablate->add_flag("--layering", layering, "Also compare the model-variant layering");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 2;
  }

  try {
    if (gen->parsed()) {
      command_gen_data(resolve(common, std::nullopt), std::cerr);
    } else if (train->parsed()) {
      command_train(resolve(common, train_stages), std::cerr);
    } else if (build->parsed()) {
      command_build_index(resolve(common, std::nullopt), std::cerr);
    } else if (quant->parsed()) {
      command_quantize(resolve(common, std::nullopt), std::cerr);
    } else if (retrieve->parsed()) {
      command_retrieve(resolve(common, std::nullopt), query, k, std::cout);
    } else if (eval->parsed()) {
      command_eval(resolve(common, std::nullopt), std::cout);
    } else if (serve->parsed()) {
      command_serve(resolve(common, std::nullopt), std::cin, std::cout);
    } else if (ablate->parsed()) {
      const RunConfig c = resolve(common, std::nullopt);
      std::vector<std::vector<Stage>> sets;
      for (const auto& s : ablate_stages) sets.push_back(parse_stage_list(s));
      if (sets.empty()) {
        for (const char* s : {"none", "1", "1,2", "1,2,3", "1,2,3,4"}) sets.push_back(parse_stage_list(s));
      }
      command_ablate(c, sets, layering, std::cout);
    }
  } catch (const polyret::Error& e) {
    report_error(e.kind(), e.what());
    return 2;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 3;
  }
  return 0;
}
