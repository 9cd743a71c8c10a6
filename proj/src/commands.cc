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

#include "polyret/commands.h"

#include <cstdio>
#include <limits>
#include <optional>
#include <tuple>
#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <set>

#include "json.hpp"
#include "polyret/errors.h"

namespace polyret {

namespace fs = std::filesystem;
using ordered = nlohmann::ordered_json;

namespace {

std::string require_file(const fs::path& p) {
  if (!fs::exists(p)) throw InputError("missing input file " + p.string());
  return p.string();
}

void write_resolved_config(const RunConfig& config, const fs::path& dir, const std::string& command) {
  fs::create_directories(dir);
  write_text_file((dir / (command + ".config.json")).string(), config.to_json());
}

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

ordered pnr_json(const PnrReport& r) {
  return {{"mean", r.mean},
          {"queries", r.per_query.size() - r.skipped},
          {"capped", r.capped},
          {"skipped", r.skipped}};
}

ordered model_eval_json(const ModelEvalReport& r, std::size_t k) {
  ordered j;
  j["recall_at_" + std::to_string(k)] = r.recall;
  j["recall_queries"] = r.recall_queries;
  j["pnr"] = pnr_json(r.pnr);
  j["pnr_max_scoring"] = pnr_json(r.pnr_max);
  if (r.pnr_quantized) j["pnr_quantized"] = pnr_json(*r.pnr_quantized);
  return j;
}

std::vector<std::pair<std::uint64_t, std::string>> titles_of(const std::vector<Document>& docs) {
  std::vector<std::pair<std::uint64_t, std::string>> out;
  for (const auto& d : docs) out.emplace_back(d.doc_id, d.title);
  return out;
}

}  // namespace

CorpusFiles CorpusFiles::load(const std::string& data_dir) {
  const fs::path d(data_dir);
  CorpusFiles c;
  c.vocab = Vocabulary::load(require_file(d / "vocab.txt"));
  c.docs = read_documents(require_file(d / "docs.jsonl"));
  c.click_log = read_click_log(require_file(d / "click_log.jsonl"));
  c.graded_train = read_graded(require_file(d / "graded_train.jsonl"));
  c.validation = read_graded(require_file(d / "validation.jsonl"));
  c.test = read_graded(require_file(d / "test.jsonl"));
  c.tail = read_graded(require_file(d / "tail.jsonl"));
  return c;
}

TrainOutcome train_model(const RunConfig& config, const CorpusFiles& corpus, bool validate_epochs) {
  TrainOutcome out{EncoderModel(config.encoder_for(corpus.vocab.size()), config.seed), {}};
  std::vector<StageConfig> stages;
  for (Stage s : config.stages) stages.push_back(config.stage_config(s));
  if (stages.empty()) return out;
  const PipelineData data = pipeline_data(corpus.docs, corpus.click_log, corpus.graded_train);
  Validator validator;
  if (validate_epochs) validator = make_validator(corpus.vocab, corpus.docs, corpus.validation);
  out.reports = train_pipeline(out.model, stages, data, corpus.vocab, validator);
  return out;
}

Calibration calibrate_store(const CorpusEmbeddings& corpus) { return calibrate(corpus.vectors); }

EmbeddingStore build_store(const CorpusEmbeddings& corpus, const QuantizationParams& params) {
  EmbeddingStore store(params);
  for (std::size_t r = 0; r < corpus.doc_ids.size(); ++r)
    store.put(corpus.doc_ids[r], quantize(corpus.vectors.row(r), params));
  return store;
}

std::vector<PreferencePair> ranker_pairs(const Engine& engine,
                                         const std::vector<GradedLabelRecord>& labels) {
  std::vector<PreferencePair> pairs;
  for (const auto& q : group_labels(labels)) {
    const QueryResult r = engine.query(q.text, std::numeric_limits<std::size_t>::max());
    std::map<std::uint64_t, const RankedCandidate*> by_id;
    for (const auto& c : r.ranked.results) by_id.emplace(c.doc_id, &c);
    std::vector<std::pair<int, const RankedCandidate*>> labeled;
    for (const auto& [doc_id, grade] : q.docs) {
      auto it = by_id.find(doc_id);
      if (it != by_id.end()) labeled.emplace_back(grade, it->second);
    }
    for (const auto& [ga, a] : labeled) {
      for (const auto& [gb, b] : labeled) {
        if (ga > gb) pairs.push_back({a->features, b->features});
      }
    }
  }
  return pairs;
}

BuiltIndexes build_indexes(const RunConfig& config, const EncoderModel& model,
                           const CorpusFiles& corpus) {
  BuiltIndexes b;
  const CorpusEmbeddings emb = embed_corpus(model, corpus.vocab, corpus.docs);
  AnnParams ann = config.ann_params();
  if (ann.mode == AnnMode::kIvf && ann.n_clusters > emb.doc_ids.size()) {
    throw ConfigError("config field 'index.n_clusters' exceeds the corpus size (" +
                      std::to_string(emb.doc_ids.size()) + ")");
  }
  b.ann = AnnIndex::build(emb.doc_ids, emb.vectors, ann);
  const auto titles = titles_of(corpus.docs);
  b.inverted = InvertedIndex::build_from_titles(titles);
  b.inverted.set_bm25(config.bm25);
  b.calibration = calibrate_store(emb);
  b.store = build_store(emb, b.calibration.params);
  b.features = FeatureTable(doc_statistics(corpus.click_log));

  // Fit the ranker on pools produced by the same engine it will serve in.
  const Engine probe(model, corpus.vocab, corpus.docs, b.ann, b.inverted, b.store, b.features,
                     LinearRanker::semantic_only(), config.retrieval);
  const auto pairs = ranker_pairs(probe, corpus.graded_train);
  b.preference_pairs = pairs.size();
  if (pairs.empty()) {
    b.ranker = LinearRanker::semantic_only();
  } else {
    b.ranker_fit = train_ranker(pairs, config.ranker);
    b.ranker = b.ranker_fit.ranker;
  }
  return b;
}

std::string stage_report_json(const std::vector<StageReport>& reports) {
  ordered j = ordered::array();
  for (const auto& r : reports) {
    ordered s;
    s["stage"] = stage_name(r.stage);
    s["examples"] = r.examples;
    s["total_steps"] = r.total_steps;
    s["skipped_queries"] = r.skipped_queries;
    s["truncated_pairs"] = r.truncated_pairs;
    ordered epochs = ordered::array();
    for (const auto& e : r.epochs) {
      ordered ej{{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"steps", e.steps}};
      if (e.validation)
        ej["validation"] = {{"recall_at_10", e.validation->recall_at_10}, {"pnr", e.validation->pnr}};
      epochs.push_back(ej);
    }
    s["epochs"] = epochs;
    j.push_back(s);
  }
  return j.dump(2) + "\n";
}

std::string evaluate_run(const RunConfig& config, const Engine& engine, const CorpusFiles& corpus) {
  const auto& m = config.metrics;
  ordered report;
  const CorpusEmbeddings emb = embed_corpus(engine.model(), corpus.vocab, corpus.docs);
  ModelEvalOptions opts;
  opts.k = m.recall_k;
  opts.relevant_grade = m.relevant_grade;
  opts.pnr_cap = m.pnr_cap;
  opts.quantization = &engine.store().params();
  ordered splits;
  const std::pair<const char*, const std::vector<GradedLabelRecord>*> named[] = {
      {"validation", &corpus.validation}, {"test", &corpus.test}, {"tail", &corpus.tail}};
  for (const auto& [name, labels] : named) {
    if (labels->empty()) continue;
    const ModelEvalReport r = evaluate_model(engine.model(), corpus.vocab, emb, *labels, opts);
    splits[name] = model_eval_json(r, m.recall_k);
  }
  report["splits"] = splits;

  // Workflow on the test split: full system against text-only retrieval.
  const auto queries = group_labels(corpus.test);
  std::map<std::pair<std::uint64_t, std::uint64_t>, int> grades;
  for (const auto& r : corpus.test) grades[{r.query_id, r.doc_id}] = r.grade;
  auto grade_of = [&](std::uint64_t q, std::uint64_t d) {
    auto it = grades.find({q, d});
    return it == grades.end() ? 0.0 : static_cast<double>(it->second);
  };
  const std::size_t n_out = config.retrieval.n_out;
  std::vector<RankedList> full, text;
  double dcg_full = 0.0, dcg_text = 0.0;
  std::size_t good = 0, same = 0, bad = 0;
  for (const auto& q : queries) {
    RankedList a{q.query_id, {}}, b{q.query_id, {}};
    for (const auto& r : engine.query(q.text, n_out).ranked.results) a.docs.push_back(r.doc_id);
    for (const auto& h : engine.inverted().search(q.text, n_out).hits) b.docs.push_back(h.doc_id);
    auto dcg = [&](const RankedList& l) {
      std::vector<double> g;
      for (std::size_t i = 0; i < l.docs.size() && i < m.dcg_k; ++i)
        g.push_back(grade_of(q.query_id, l.docs[i]));
      return dcg_at_k(g, m.dcg_k, m.dcg_gain).value;
    };
    const double da = dcg(a), db = dcg(b);
    dcg_full += da;
    dcg_text += db;
    if (da > db) ++good;
    else if (da < db) ++bad;
    else ++same;
    full.push_back(std::move(a));
    text.push_back(std::move(b));
  }
  const double nq = queries.empty() ? 1.0 : static_cast<double>(queries.size());
  ordered workflow;
  workflow["queries"] = queries.size();
  workflow["baseline"] = "text_only";
  workflow["dcg_at_" + std::to_string(m.dcg_k)] = {{"system", dcg_full / nq},
                                                   {"baseline", dcg_text / nq}};
  if (good + same + bad > 0) {
    workflow["gsb"] = {{"good", good},
                       {"same", same},
                       {"bad", bad},
                       {"delta_gsb", delta_gsb(good, same, bad)}};
  }
  const InterleaveLog log =
      simulate_interleave(full, text, grade_of, ClickModel{}, config.seed, m.interleave_impressions);
  std::size_t wins_a = 0, wins_b = 0, ties = 0;
  for (const auto& e : log) {
    if (e.winner == Winner::kA) ++wins_a;
    else if (e.winner == Winner::kB) ++wins_b;
    else ++ties;
  }
  ordered inter{{"events", log.size()}, {"wins_system", wins_a}, {"wins_baseline", wins_b},
                {"ties", ties}};
  if (!log.empty()) {
    inter["delta_ab"] = delta_ab(log);
    inter["delta_ab_tw"] = delta_ab_tw(log, m.dwell_sigmoid);
    inter["sign_test_p"] = sign_test_p_value(wins_a, wins_b);
  }
  workflow["interleaving"] = inter;
  report["workflow"] = workflow;
  return report.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Commands

void command_gen_data(const RunConfig& config, std::ostream& log) {
  config.validate();
  const SyntheticCorpus corpus = generate_corpus(config.data_spec());
  write_corpus(corpus, config.paths.data_dir);
  write_resolved_config(config, config.paths.data_dir, "gen-data");
  log << "gen-data: " << corpus.docs.size() << " documents, " << corpus.queries.size()
      << " queries, " << corpus.click_log.size() << " impressions -> " << config.paths.data_dir
      << "\n";
}

void command_train(const RunConfig& config, std::ostream& log) {
  config.validate();
  const CorpusFiles corpus = CorpusFiles::load(config.paths.data_dir);
  const TrainOutcome out = train_model(config, corpus, true);
  const fs::path run(config.paths.run_dir);
  fs::create_directories(run);
  out.model.save((run / RunFiles::kModel).string());
  write_text_file((run / "train_report.json").string(), stage_report_json(out.reports));
  write_resolved_config(config, run, "train");
  for (const auto& r : out.reports) {
    log << "train: " << stage_name(r.stage) << " " << r.total_steps << " steps";
    if (!r.epochs.empty()) {
      log << ", final loss " << format("%.4f", r.epochs.back().mean_loss);
      if (r.epochs.back().validation)
        log << ", validation Recall@10 " << format("%.4f", r.epochs.back().validation->recall_at_10);
    }
    log << "\n";
  }
}

void command_build_index(const RunConfig& config, std::ostream& log) {
  config.validate();
  const CorpusFiles corpus = CorpusFiles::load(config.paths.data_dir);
  const fs::path run(config.paths.run_dir);
  const EncoderModel model = EncoderModel::load(require_file(run / RunFiles::kModel));
  const BuiltIndexes b = build_indexes(config, model, corpus);
  b.ann.save((run / RunFiles::kAnn).string());
  b.inverted.save((run / RunFiles::kInverted).string());
  b.store.save((run / RunFiles::kStore).string());
  b.features.save((run / RunFiles::kFeatures).string());
  b.ranker.save((run / RunFiles::kRanker).string());
  write_resolved_config(config, run, "build-index");
  log << "build-index: " << b.ann.size() << " documents (" << ann_mode_name(b.ann.params().mode)
      << "), ranker fitted on " << b.preference_pairs << " preference pairs\n";
}

void command_quantize(const RunConfig& config, std::ostream& log) {
  config.validate();
  const CorpusFiles corpus = CorpusFiles::load(config.paths.data_dir);
  const fs::path run(config.paths.run_dir);
  const EncoderModel model = EncoderModel::load(require_file(run / RunFiles::kModel));
  const CorpusEmbeddings emb = embed_corpus(model, corpus.vocab, corpus.docs);
  const Calibration cal = calibrate_store(emb);
  const EmbeddingStore store = build_store(emb, cal.params);
  store.save((run / RunFiles::kStore).string());
  write_resolved_config(config, run, "quantize");
  log << "quantize: " << store.size() << " documents, " << store.dim() << " bytes each";
  if (!cal.widened.empty()) log << ", " << cal.widened.size() << " constant dimensions widened";
  log << "\n";
}

void command_retrieve(const RunConfig& config, const std::string& query, std::size_t k,
                      std::ostream& out) {
  config.validate();
  if (k == 0) throw ConfigError("flag '--k' must be >= 1");
  const Engine engine = Engine::open(config.paths.data_dir, config.paths.run_dir, config.retrieval);
  for (const auto& r : engine.query(query, k).ranked.results) out << engine.result_json(r) << "\n";
}

void command_eval(const RunConfig& config, std::ostream& out) {
  config.validate();
  const CorpusFiles corpus = CorpusFiles::load(config.paths.data_dir);
  const Engine engine = Engine::open(config.paths.data_dir, config.paths.run_dir, config.retrieval);
  const std::string report = evaluate_run(config, engine, corpus);
  const fs::path run(config.paths.run_dir);
  write_text_file((run / "eval.json").string(), report);
  write_resolved_config(config, run, "eval");
  out << report;
}

void command_serve(const RunConfig& config, std::istream& in, std::ostream& out) {
  config.validate();
  const Engine engine = Engine::open(config.paths.data_dir, config.paths.run_dir, config.retrieval);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto req = nlohmann::json::parse(line);
      if (!req.is_object() || !req.contains("query") || !req["query"].is_string())
        throw InputError("request field 'query' must be a string");
      std::size_t k = config.retrieval.n_out;
      if (req.contains("k")) {
        if (!req["k"].is_number_unsigned() || req["k"].get<std::size_t>() == 0)
          throw InputError("request field 'k' must be a positive integer");
        k = req["k"].get<std::size_t>();
      }
      std::string body = "{\"results\":[";
      bool first = true;
      for (const auto& r : engine.query(req["query"].get<std::string>(), k).ranked.results) {
        if (!first) body += ',';
        body += engine.result_json(r);
        first = false;
      }
      out << body << "]}\n";
    } catch (const nlohmann::json::exception& e) {
      out << ordered{{"error", {{"kind", "input"}, {"message", e.what()}}}}.dump() << "\n";
    } catch (const Error& e) {
      out << ordered{{"error", {{"kind", e.kind()}, {"message", e.what()}}}}.dump() << "\n";
    }
    out.flush();
  }
}

void command_ablate(const RunConfig& config, const std::vector<std::vector<Stage>>& stage_sets,
                    bool layering, std::ostream& out) {
  config.validate();
  const CorpusFiles corpus = CorpusFiles::load(config.paths.data_dir);
  const fs::path dir = fs::path(config.paths.run_dir) / "ablate";
  fs::create_directories(dir);
  ordered report;

  auto evaluate = [&](const EncoderModel& model) {
    const CorpusEmbeddings emb = embed_corpus(model, corpus.vocab, corpus.docs);
    const Calibration cal = calibrate_store(emb);
    ModelEvalOptions opts;
    opts.k = config.metrics.recall_k;
    opts.relevant_grade = config.metrics.relevant_grade;
    opts.pnr_cap = config.metrics.pnr_cap;
    opts.quantization = &cal.params;
    ModelEvalReport test = evaluate_model(model, corpus.vocab, emb, corpus.test, opts);
    ModelEvalReport val = evaluate_model(model, corpus.vocab, emb, corpus.validation, opts);
    std::optional<ModelEvalReport> tail;
    if (!corpus.tail.empty()) tail = evaluate_model(model, corpus.vocab, emb, corpus.tail, opts);
    return std::make_tuple(test, val, tail);
  };

  ordered stage_rows = ordered::array();
  out << "Stage-wise comparison\n";
  out << "stages        PNR(test)  Recall@" << config.metrics.recall_k << "(test)  Recall@"
      << config.metrics.recall_k << "(tail)\n";
  for (const auto& stages : stage_sets) {
    RunConfig c = config;
    c.stages = stages;
    const TrainOutcome t = train_model(c, corpus, false);
    const auto [test, val, tail] = evaluate(t.model);
    (void)val;
    const double tail_recall = tail ? tail->recall : 0.0;
    ordered row{{"stages", stage_list_string(stages)},
                {"pnr_test", test.pnr.mean},
                {"recall_test", test.recall},
                {"recall_tail", tail_recall}};
    stage_rows.push_back(row);
    char line[160];
    std::snprintf(line, sizeof line, "%-12s  %9.3f  %13.4f  %13.4f\n",
                  stage_list_string(stages).c_str(), test.pnr.mean, test.recall, tail_recall);
    out << line;
  }
  report["stages"] = stage_rows;

  if (layering) {
    struct Variant {
      const char* name;
      bool poly, ibn, compression, quantized;
    };
    const Variant variants[] = {{"base", false, false, false, false},
                                {"+poly", true, false, false, false},
                                {"+in-batch negatives", true, true, false, false},
                                {"+compression", true, true, true, false},
                                {"+quantization", true, true, true, true}};
    ordered rows = ordered::array();
    out << "\nFeature layering\n";
    out << "id  model                  PNR(validation)  PNR(test)  bytes/doc\n";
    std::optional<std::tuple<ModelEvalReport, ModelEvalReport, std::optional<ModelEvalReport>>> last;
    std::size_t id = 0;
    for (const auto& v : variants) {
      RunConfig c = config;
      c.encoder.use_poly = v.poly;
      c.encoder.use_compression = v.compression;
      for (auto& sc : c.stage_configs) {
        if (sc.pretraining()) continue;
        sc.in_batch_negatives = v.ibn;
        sc.loss = v.ibn ? LossKind::kContrastive : LossKind::kHinge;
      }
      if (!v.quantized) {
        const TrainOutcome t = train_model(c, corpus, false);
        last = evaluate(t.model);
      }
      const auto& [test, val, tail] = *last;
      (void)tail;
      const double pnr_val = v.quantized ? val.pnr_quantized->mean : val.pnr.mean;
      const double pnr_test = v.quantized ? test.pnr_quantized->mean : test.pnr.mean;
      const EncoderConfig ec = c.encoder_for(corpus.vocab.size());
      const std::size_t bytes = v.quantized ? ec.embedding_dim() : ec.embedding_dim() * sizeof(double);
      rows.push_back({{"id", id},
                      {"model", v.name},
                      {"pnr_validation", pnr_val},
                      {"pnr_test", pnr_test},
                      {"bytes_per_doc", bytes}});
      char line[160];
      std::snprintf(line, sizeof line, "%-2zu  %-21s  %15.3f  %9.3f  %9zu\n", id, v.name, pnr_val,
                    pnr_test, bytes);
      out << line;
      ++id;
    }
    report["layering"] = rows;
  }
  write_text_file((dir / "ablate.json").string(), report.dump(2) + "\n");
  write_resolved_config(config, dir, "ablate");
}

}  // namespace polyret
