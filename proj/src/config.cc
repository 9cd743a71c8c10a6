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

#include "polyret/config.h"

#include <algorithm>
#include <set>
#include <sstream>

#include "json.hpp"
#include "polyret/errors.h"

namespace polyret {

namespace {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

const Stage kAllStages[] = {Stage::kPretrain, Stage::kPostPretrain, Stage::kIntermediateFineTune,
                            Stage::kTargetFineTune};

std::string loss_name(LossKind k) { return k == LossKind::kHinge ? "hinge" : "contrastive"; }
std::string gain_name(DcgGain g) { return g == DcgGain::kExponential ? "exponential" : "linear"; }

// Reads fields of one JSON object, remembering which keys were used so
// that leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config field '" + path_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config field '" + name(key) + "' has the wrong type");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  Section child(const char* key) {
    used_.insert(key);
    return Section(j_.at(key), name(key));
  }
  const json& raw(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError("unknown config field '" + name(it.key()) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

ordered stage_json(const StageConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"warmup_steps", c.warmup_steps},
          {"final_lr_fraction", c.final_lr_fraction},
          {"epochs", c.epochs},
          {"temperature", c.temperature},
          {"max_steps", c.max_steps},
          {"mask_ratio", c.mask_ratio},
          {"in_batch_negatives", c.in_batch_negatives},
          {"loss", loss_name(c.loss)},
          {"hinge_margin", c.hinge_margin}};
}

void read_stage(Section s, StageConfig& c) {
  s.read("learning_rate", c.learning_rate);
  s.read("batch_size", c.batch_size);
  s.read("warmup_steps", c.warmup_steps);
  s.read("final_lr_fraction", c.final_lr_fraction);
  s.read("epochs", c.epochs);
  s.read("temperature", c.temperature);
  s.read("max_steps", c.max_steps);
  s.read("mask_ratio", c.mask_ratio);
  s.read("in_batch_negatives", c.in_batch_negatives);
  std::string loss = loss_name(c.loss);
  s.read("loss", loss);
  if (loss == "contrastive") c.loss = LossKind::kContrastive;
  else if (loss == "hinge") c.loss = LossKind::kHinge;
  else throw ConfigError("config field '" + s.name("loss") + "' must be contrastive or hinge");
  s.read("hinge_margin", c.hinge_margin);
  s.finish();
}

// Follows a dotted path through nested objects, creating nothing.
json* locate(json& root, const std::string& path, std::string& leaf) {
  json* node = &root;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("empty override path");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i]))
      throw ConfigError("unknown config field '" + path + "'");
    node = &(*node)[parts[i]];
  }
  leaf = parts.back();
  if (!node->is_object() || !node->contains(leaf))
    throw ConfigError("unknown config field '" + path + "'");
  return node;
}

}  // namespace

EncoderConfig RunConfig::default_encoder() {
  EncoderConfig c;
  c.vocab_size = 0;
  c.max_len = 32;
  return c;
}

std::vector<StageConfig> RunConfig::default_stage_configs() {
  std::vector<StageConfig> out;
  for (Stage s : kAllStages) out.push_back(StageConfig::defaults(s));
  return out;
}

AnnParams RunConfig::default_ann() {
  AnnParams p;
  p.mode = AnnMode::kIvf;
  p.n_clusters = 32;
  p.n_probe = 8;
  return p;
}

StageConfig RunConfig::stage_config(Stage stage) const {
  for (const auto& c : stage_configs) {
    if (c.stage == stage) {
      StageConfig out = c;
      out.seed = seed * 1000 + static_cast<std::uint64_t>(stage);
      return out;
    }
  }
  throw ConfigError("no settings for stage " + stage_name(stage));
}

SyntheticCorpusSpec RunConfig::data_spec() const {
  SyntheticCorpusSpec s = data;
  s.seed = seed;
  return s;
}

AnnParams RunConfig::ann_params() const {
  AnnParams p = ann;
  p.seed = seed;
  return p;
}

EncoderConfig RunConfig::encoder_for(std::size_t vocab_size) const {
  EncoderConfig c = encoder;
  if (c.vocab_size == 0) c.vocab_size = vocab_size;
  if (c.vocab_size < vocab_size) {
    throw ConfigError("config field 'encoder.vocab_size' is smaller than the vocabulary (" +
                      std::to_string(vocab_size) + ")");
  }
  return c;
}

void RunConfig::validate() const {
  auto wrap = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const ContractError& e) {
      throw ConfigError(std::string("config section '") + section + "': " + e.what());
    }
  };
  if (paths.data_dir.empty()) throw ConfigError("config field 'paths.data_dir' must not be empty");
  if (paths.run_dir.empty()) throw ConfigError("config field 'paths.run_dir' must not be empty");
  wrap("data", [&] { data.validate(); });
  wrap("encoder", [&] {
    EncoderConfig c = encoder;
    if (c.vocab_size == 0) c.vocab_size = 1 << 20;
    c.validate();
  });
  for (std::size_t i = 1; i < stages.size(); ++i) {
    if (static_cast<int>(stages[i]) <= static_cast<int>(stages[i - 1]))
      throw ConfigError("config field 'training.stages' must be strictly increasing");
  }
  wrap("training", [&] {
    for (const auto& c : stage_configs) c.validate();
  });
  if (ann.n_clusters == 0) throw ConfigError("config field 'index.n_clusters' must be >= 1");
  if (ann.n_probe == 0 || ann.n_probe > ann.n_clusters)
    throw ConfigError("config field 'index.n_probe' must be in [1, n_clusters]");
  if (!(bm25.k1 >= 0.0)) throw ConfigError("config field 'index.bm25_k1' must be >= 0");
  if (!(bm25.b >= 0.0 && bm25.b <= 1.0)) throw ConfigError("config field 'index.bm25_b' must be in [0, 1]");
  if (retrieval.k_sem + retrieval.k_text == 0)
    throw ConfigError("config field 'retrieval.k_sem' and 'retrieval.k_text' are both 0");
  if (retrieval.n_out == 0) throw ConfigError("config field 'retrieval.n_out' must be >= 1");
  if (!(ranker.lambda >= 0.0)) throw ConfigError("config field 'ranker.lambda' must be >= 0");
  if (!(ranker.learning_rate > 0.0)) throw ConfigError("config field 'ranker.learning_rate' must be > 0");
  if (metrics.recall_k == 0) throw ConfigError("config field 'metrics.recall_k' must be >= 1");
  if (metrics.dcg_k == 0) throw ConfigError("config field 'metrics.dcg_k' must be >= 1");
  if (!(metrics.pnr_cap > 0.0)) throw ConfigError("config field 'metrics.pnr_cap' must be > 0");
  if (!(metrics.dwell_sigmoid.scale > 0.0))
    throw ConfigError("config field 'metrics.dwell_scale' must be > 0");
}

std::string RunConfig::to_json() const {
  ordered j;
  j["seed"] = seed;
  j["paths"] = {{"data_dir", paths.data_dir}, {"run_dir", paths.run_dir}};
  j["data"] = {{"n_topics", data.n_topics},
               {"topics_per_cluster", data.topics_per_cluster},
               {"docs_per_topic", data.docs_per_topic},
               {"queries_per_topic", data.queries_per_topic},
               {"vocab_size", data.vocab_size},
               {"query_min_length", data.query_min_length},
               {"query_max_length", data.query_max_length},
               {"title_min_length", data.title_min_length},
               {"title_max_length", data.title_max_length},
               {"tail_fraction", data.tail_fraction},
               {"noise", data.noise},
               {"validation_fraction", data.validation_fraction},
               {"test_fraction", data.test_fraction},
               {"graded_train_fraction", data.graded_train_fraction},
               {"eval_cluster_docs", data.eval_cluster_docs},
               {"eval_random_docs", data.eval_random_docs},
               {"impressions_per_query", data.impressions_per_query},
               {"impression_size", data.impression_size}};
  j["encoder"] = {{"n_layers", encoder.n_layers},
                  {"d_model", encoder.d_model},
                  {"n_heads", encoder.n_heads},
                  {"d_ff", encoder.d_ff},
                  {"vocab_size", encoder.vocab_size},
                  {"max_len", encoder.max_len},
                  {"context_codes", encoder.m},
                  {"d_compress", encoder.d_compress},
                  {"dropout", encoder.dropout},
                  {"use_poly", encoder.use_poly},
                  {"use_compression", encoder.use_compression}};
  ordered training;
  training["stages"] = stage_list_string(stages);
  for (const auto& c : stage_configs) training[stage_name(c.stage)] = stage_json(c);
  j["training"] = training;
  j["index"] = {{"mode", ann_mode_name(ann.mode)},
                {"n_clusters", ann.n_clusters},
                {"n_probe", ann.n_probe},
                {"kmeans_iterations", ann.kmeans_iterations},
                {"bm25_k1", bm25.k1},
                {"bm25_b", bm25.b}};
  j["retrieval"] = {{"k_sem", retrieval.k_sem},
                    {"k_text", retrieval.k_text},
                    {"n_out", retrieval.n_out},
                    {"quantized_query", retrieval.quantized_query}};
  j["ranker"] = {{"lambda", ranker.lambda},
                 {"learning_rate", ranker.learning_rate},
                 {"max_iterations", ranker.max_iterations},
                 {"tolerance", ranker.tolerance}};
  j["metrics"] = {{"recall_k", metrics.recall_k},
                  {"relevant_grade", metrics.relevant_grade},
                  {"pnr_cap", metrics.pnr_cap},
                  {"dcg_k", metrics.dcg_k},
                  {"dcg_gain", gain_name(metrics.dcg_gain)},
                  {"dwell_center", metrics.dwell_sigmoid.center},
                  {"dwell_scale", metrics.dwell_sigmoid.scale},
                  {"interleave_impressions", metrics.interleave_impressions}};
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section top(root, "");
  top.read("seed", c.seed);
  if (top.has("paths")) {
    auto s = top.child("paths");
    s.read("data_dir", c.paths.data_dir);
    s.read("run_dir", c.paths.run_dir);
    s.finish();
  }
  if (top.has("data")) {
    auto s = top.child("data");
    auto& d = c.data;
    s.read("n_topics", d.n_topics);
    s.read("topics_per_cluster", d.topics_per_cluster);
    s.read("docs_per_topic", d.docs_per_topic);
    s.read("queries_per_topic", d.queries_per_topic);
    s.read("vocab_size", d.vocab_size);
    s.read("query_min_length", d.query_min_length);
    s.read("query_max_length", d.query_max_length);
    s.read("title_min_length", d.title_min_length);
    s.read("title_max_length", d.title_max_length);
    s.read("tail_fraction", d.tail_fraction);
    s.read("noise", d.noise);
    s.read("validation_fraction", d.validation_fraction);
    s.read("test_fraction", d.test_fraction);
    s.read("graded_train_fraction", d.graded_train_fraction);
    s.read("eval_cluster_docs", d.eval_cluster_docs);
    s.read("eval_random_docs", d.eval_random_docs);
    s.read("impressions_per_query", d.impressions_per_query);
    s.read("impression_size", d.impression_size);
    s.finish();
  }
  if (top.has("encoder")) {
    auto s = top.child("encoder");
    auto& e = c.encoder;
    s.read("n_layers", e.n_layers);
    s.read("d_model", e.d_model);
    s.read("n_heads", e.n_heads);
    s.read("d_ff", e.d_ff);
    s.read("vocab_size", e.vocab_size);
    s.read("max_len", e.max_len);
    s.read("context_codes", e.m);
    s.read("d_compress", e.d_compress);
    s.read("dropout", e.dropout);
    s.read("use_poly", e.use_poly);
    s.read("use_compression", e.use_compression);
    s.finish();
  }
  if (top.has("training")) {
    auto s = top.child("training");
    if (s.has("stages")) {
      const json& v = s.raw("stages");
      if (v.is_string()) {
        try {
          c.stages = parse_stage_list(v.get<std::string>());
        } catch (const Error& e) {
          throw ConfigError("config field 'training.stages': " + std::string(e.what()));
        }
      } else {
        throw ConfigError("config field 'training.stages' must be a string such as \"1,2,3,4\"");
      }
    }
    for (auto& sc : c.stage_configs) {
      const std::string key = stage_name(sc.stage);
      if (s.has(key.c_str())) read_stage(s.child(key.c_str()), sc);
    }
    s.finish();
  }
  if (top.has("index")) {
    auto s = top.child("index");
    std::string mode = ann_mode_name(c.ann.mode);
    s.read("mode", mode);
    try {
      c.ann.mode = parse_ann_mode(mode);
    } catch (const Error&) {
      throw ConfigError("config field 'index.mode' must be flat or ivf");
    }
    s.read("n_clusters", c.ann.n_clusters);
    s.read("n_probe", c.ann.n_probe);
    s.read("kmeans_iterations", c.ann.kmeans_iterations);
    s.read("bm25_k1", c.bm25.k1);
    s.read("bm25_b", c.bm25.b);
    s.finish();
  }
  if (top.has("retrieval")) {
    auto s = top.child("retrieval");
    s.read("k_sem", c.retrieval.k_sem);
    s.read("k_text", c.retrieval.k_text);
    s.read("n_out", c.retrieval.n_out);
    s.read("quantized_query", c.retrieval.quantized_query);
    s.finish();
  }
  if (top.has("ranker")) {
    auto s = top.child("ranker");
    s.read("lambda", c.ranker.lambda);
    s.read("learning_rate", c.ranker.learning_rate);
    s.read("max_iterations", c.ranker.max_iterations);
    s.read("tolerance", c.ranker.tolerance);
    s.finish();
  }
  if (top.has("metrics")) {
    auto s = top.child("metrics");
    auto& m = c.metrics;
    s.read("recall_k", m.recall_k);
    s.read("relevant_grade", m.relevant_grade);
    s.read("pnr_cap", m.pnr_cap);
    s.read("dcg_k", m.dcg_k);
    std::string gain = gain_name(m.dcg_gain);
    s.read("dcg_gain", gain);
    if (gain == "linear") m.dcg_gain = DcgGain::kLinear;
    else if (gain == "exponential") m.dcg_gain = DcgGain::kExponential;
    else throw ConfigError("config field 'metrics.dcg_gain' must be linear or exponential");
    s.read("dwell_center", m.dwell_sigmoid.center);
    s.read("dwell_scale", m.dwell_sigmoid.scale);
    s.read("interleave_impressions", m.interleave_impressions);
    s.finish();
  }
  top.finish();
  return c;
}

RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& assignments) {
  if (assignments.empty()) return base;
  json root = json::parse(base.to_json());
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + a + "' is not of the form path=value");
    const std::string path = a.substr(0, eq);
    const std::string value = a.substr(eq + 1);
    std::string leaf;
    json* parent = locate(root, path, leaf);
    json parsed = json::parse(value, nullptr, false);
    (*parent)[leaf] = parsed.is_discarded() ? json(value) : parsed;
  }
  return RunConfig::from_json(root.dump());
}

std::vector<Stage> parse_stage_list(const std::string& text) {
  std::vector<Stage> out;
  if (text.empty() || text == "none") return out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part.erase(std::remove_if(part.begin(), part.end(), ::isspace), part.end());
    out.push_back(parse_stage(part));
  }
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (static_cast<int>(out[i]) <= static_cast<int>(out[i - 1]))
      throw ConfigError("stage list '" + text + "' must be strictly increasing");
  }
  return out;
}

std::string stage_list_string(const std::vector<Stage>& stages) {
  if (stages.empty()) return "none";
  std::string out;
  for (Stage s : stages) {
    if (!out.empty()) out += ',';
    out += std::to_string(static_cast<int>(s));
  }
  return out;
}

}  // namespace polyret
