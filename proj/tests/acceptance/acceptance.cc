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

// Acceptance suite. Prints one PASS/FAIL line per criterion followed by its
// measurements, and exits non-zero if any criterion fails.
//
//   polyret_acceptance [--criteria 1,2,7] [--seeds 5] [--workdir DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "polyret/commands.h"
#include "polyret/config.h"
#include "polyret/evaluation.h"
#include "polyret/metrics.h"
#include "polyret/quantstore.h"
#include "polyret/random.h"
#include "polyret/retrieval.h"
#include "polyret/synth.h"
#include "polyret/training.h"

namespace fs = std::filesystem;
using namespace polyret;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Measurements of one criterion. `pass` is the conjunction of every check.
class Outcome {
 public:
  void check(bool ok, const std::string& line) {
    pass_ = pass_ && ok;
    lines_.push_back(std::string(ok ? "ok   " : "FAIL ") + line);
  }
  void note(const std::string& line) { lines_.push_back("     " + line); }
  bool pass() const { return pass_; }
  const std::vector<std::string>& lines() const { return lines_; }

 private:
  bool pass_ = true;
  std::vector<std::string> lines_;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

Tensor gaussian(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

TokenSequence random_sequence(Rng& rng, std::size_t words, std::size_t vocab) {
  TokenSequence s;
  s.ids.push_back(kClsId);
  for (std::size_t i = 0; i < words; ++i)
    s.ids.push_back(static_cast<TokenId>(kFirstWordId + rng.index(vocab - kFirstWordId)));
  return s;
}

std::vector<TrainExample> random_batch(std::size_t b, Rng& rng, std::size_t vocab, std::size_t max_words) {
  std::vector<TrainExample> batch;
  for (std::size_t i = 0; i < b; ++i) {
    batch.push_back({random_sequence(rng, 1 + rng.index(max_words), vocab),
                     random_sequence(rng, 1 + rng.index(max_words), vocab),
                     random_sequence(rng, 1 + rng.index(max_words), vocab)});
  }
  return batch;
}

// 1. Gradient correctness.

Outcome gradient_correctness() {
  Outcome o;
  const auto t0 = Clock::now();
  EncoderConfig config;  // desk scale: 2 layers, d_model 64, m 4
  config.dropout = 0.0;
  EncoderModel model(config, 17);
  Rng rng(17);
  // Larger weights lift gradients clear of the finite-difference noise floor.
  for (auto& p : model.parameters()) {
    if (p.tensor->rank() == 2) *p.tensor = gaussian(p.tensor->shape(), rng, 0.1);
  }
  const std::vector<TrainExample> batch = random_batch(2, rng, config.vocab_size, 3);
  auto loss = [&](Tape& tape) {
    EncoderGraph graph(tape, model);
    return contrastive_loss(in_batch_scores(graph, batch), 1.0);
  };
  std::vector<Tensor*> params;
  std::vector<std::string> names;
  for (auto& p : model.parameters()) {
    params.push_back(p.tensor);
    names.push_back(p.name);
  }
  const GradCheckReport r = finite_diff_check(loss, params, 1e-5);
  const double elapsed = seconds_since(t0);
  o.check(r.max_rel_error < 1e-4,
          fmt("max relative error %.3e over %zu entries of %zu tensors (tol 1e-4)", r.max_rel_error,
              r.checked, params.size()));
  o.note(fmt("worst entry %s[%zu]: analytic %.6e numeric %.6e", names[r.worst_param].c_str(),
             r.worst_element, r.worst_analytic, r.worst_numeric));
  o.check(elapsed < 60.0, fmt("runtime %.1f s (limit 60 s)", elapsed));
  return o;
}

// 2. Poly-attention contracts.

Outcome poly_attention_contracts() {
  Outcome o;
  EncoderConfig config;
  EncoderModel model(config, 5);
  Rng rng(5);
  double worst_sum = 0.0;
  std::size_t rows = 0;
  for (int t = 0; t < 200; ++t) {
    const TokenSequence s = random_sequence(rng, 1 + rng.index(config.max_len - 1), config.vocab_size);
    const PolyAttention pa = poly_attend(model.context_codes, encode(model, s));
    for (std::size_t r = 0; r < pa.weights.rows(); ++r, ++rows) {
      double total = 0.0;
      for (double w : pa.weights.row(r)) total += w;
      worst_sum = std::max(worst_sum, std::abs(total - 1.0));
    }
  }
  o.check(worst_sum <= 1e-12, fmt("weight rows sum to 1: worst |sum-1| %.2e over %zu rows (tol 1e-12)",
                                  worst_sum, rows));

  EncoderConfig single = config;
  single.m = 1;
  EncoderModel one_code(single, 6);
  std::size_t unequal = 0;
  for (int t = 0; t < 200; ++t) {
    const Tensor g = query_global_embeddings(
        one_code, random_sequence(rng, 1 + rng.index(8), single.vocab_size));
    const Tensor d = embed_document(one_code, random_sequence(rng, 1 + rng.index(8), single.vocab_size));
    if (score_train(g, d.data()) != score_predict(g, d.data())) ++unequal;
    const Tensor p = gaussian({1, 16}, rng);
    const Tensor c = gaussian({16}, rng);
    if (score_train(p, c.data()) != score_predict(p, c.data())) ++unequal;
  }
  o.check(unequal == 0, fmt("m=1: score_train == score_predict bit-exact, %zu of 400 pairs differ", unequal));

  std::size_t violations = 0;
  for (int t = 0; t < 10000; ++t) {
    const Tensor p = gaussian({4, 16}, rng);
    const Tensor c = gaussian({16}, rng);
    if (!(score_train(p, c.data()) >= score_predict(p, c.data()))) ++violations;
  }
  o.check(violations == 0, fmt("score_train >= score_predict on 10000 random draws, %zu violations", violations));
  return o;
}

// 3. In-batch negatives.

Outcome in_batch_negatives() {
  Outcome o;
  EncoderConfig config;
  config.dropout = 0.0;
  EncoderModel model(config, 8);
  Rng rng(8);
  for (std::size_t b : {2u, 4u, 8u}) {
    const auto batch = random_batch(b, rng, config.vocab_size, 8);
    Tape tape(Tape::Mode::kInference);
    EncoderGraph graph(tape, model);
    const Tensor s = in_batch_scores(graph, batch).value();
    double worst = 0.0;
    std::size_t min_neg = SIZE_MAX, max_neg = 0;
    for (std::size_t i = 0; i < b; ++i) {
      const Tensor g = query_global_embeddings(model, batch[i].query);
      std::size_t negatives = 0;
      for (std::size_t j = 0; j < 2 * b; ++j) {
        const TokenSequence& doc = j < b ? batch[j].positive : batch[j - b].strong_negative;
        const double naive = score_train(g, embed_document(model, doc).data());
        worst = std::max(worst, std::abs(s.at(i, j) - naive));
        if (j != i) ++negatives;
      }
      min_neg = std::min(min_neg, negatives);
      max_neg = std::max(max_neg, negatives);
    }
    o.check(s.shape() == Shape{b, 2 * b} && worst <= 1e-12,
            fmt("B=%zu: %s matrix vs naive loop, max |diff| %.2e (tol 1e-12)", b,
                shape_string(s.shape()).c_str(), worst));
    o.check(min_neg == 2 * b - 1 && max_neg == 2 * b - 1,
            fmt("B=%zu: negatives per query %zu..%zu (expected %zu)", b, min_neg, max_neg, 2 * b - 1));
  }
  return o;
}

// 4-6. Trained models over several seeds.

struct SeedResult {
  std::uint64_t seed = 0;
  // Recall@10 on the test split: untrained, post-pretrained, intermediate FT, target FT.
  std::vector<double> recall;
  double pnr = 0.0;
  double pnr_max = 0.0;
  double pnr_quantized = 0.0;
  std::size_t capped = 0;
  double seconds = 0.0;
};

SeedResult train_and_measure(std::uint64_t seed) {
  const auto t0 = Clock::now();
  RunConfig cfg;
  cfg.seed = seed;
  const SyntheticCorpus corpus = generate_corpus(cfg.data_spec());
  EncoderModel model(cfg.encoder_for(corpus.vocab.size()), seed);
  const PipelineData data = pipeline_data(corpus.docs, corpus.click_log, corpus.graded_train);
  SeedResult out;
  out.seed = seed;
  auto test_recall = [&] {
    const CorpusEmbeddings emb = embed_corpus(model, corpus.vocab, corpus.docs);
    out.recall.push_back(evaluate_model(model, corpus.vocab, emb, corpus.test).recall);
  };
  test_recall();
  for (Stage s : cfg.stages) {
    run_stage(model, cfg.stage_config(s), data, corpus.vocab);
    if (s != Stage::kPretrain) test_recall();
  }
  const CorpusEmbeddings emb = embed_corpus(model, corpus.vocab, corpus.docs);
  const Calibration cal = calibrate_store(emb);
  ModelEvalOptions options;
  options.quantization = &cal.params;
  const ModelEvalReport r = evaluate_model(model, corpus.vocab, emb, corpus.validation, options);
  out.pnr = r.pnr.mean;
  out.pnr_max = r.pnr_max.mean;
  out.pnr_quantized = r.pnr_quantized->mean;
  out.capped = r.pnr.capped + r.pnr_max.capped + r.pnr_quantized->capped;
  out.seconds = seconds_since(t0);
  return out;
}

struct TrainedRuns {
  std::vector<SeedResult> seeds;
  double seconds = 0.0;
};

const TrainedRuns& trained_runs(std::size_t n_seeds) {
  static TrainedRuns runs;
  if (runs.seeds.empty()) {
    const auto t0 = Clock::now();
    for (std::uint64_t s = 0; s < n_seeds; ++s) {
      runs.seeds.push_back(train_and_measure(s));
      const SeedResult& r = runs.seeds.back();
      std::printf("  seed %llu trained in %.0f s\n", static_cast<unsigned long long>(s), r.seconds);
      std::fflush(stdout);
    }
    runs.seconds = seconds_since(t0);
  }
  return runs;
}

double relative_gap(double value, double reference) { return (value - reference) / reference; }

Outcome quantization(std::size_t n_seeds) {
  Outcome o;
  Rng rng(4);
  const Tensor sample = gaussian({10000, 16}, rng, 1.5);
  const QuantizationParams p = calibrate(sample).params;
  const Tensor back = roundtrip_rows(sample, p);
  double worst = 0.0;  // error in units of Q_i / 2
  for (std::size_t r = 0; r < sample.rows(); ++r) {
    for (std::size_t j = 0; j < sample.cols(); ++j)
      worst = std::max(worst, std::abs(back.at(r, j) - sample.at(r, j)) / (p.q[j] / 2));
  }
  o.check(worst <= 1.0 + 1e-12,
          fmt("round trip on 10000 random vectors: max error %.12f x Q_i/2 (limit 1, rounding 1e-12)", worst));

  const QuantizationParams unit{{-1.0}, {1.0}, {2.0 / 255.0}};
  const double mid = dequantize(std::vector<std::uint8_t>{127}, unit)[0];
  o.check(mid == 0.0, fmt("index 127 on (-1, 1) dequantizes to %.17g", mid));

  const TrainedRuns& runs = trained_runs(n_seeds);
  double sum_full = 0.0, sum_quant = 0.0;
  for (const auto& r : runs.seeds) {
    sum_full += r.pnr;
    sum_quant += r.pnr_quantized;
    o.note(fmt("seed %llu: validation PNR full %.4f quantized %.4f (%+.2f%%)",
               static_cast<unsigned long long>(r.seed), r.pnr, r.pnr_quantized,
               100 * relative_gap(r.pnr_quantized, r.pnr)));
  }
  const double gap = relative_gap(sum_quant, sum_full);
  o.check(std::abs(gap) <= 0.01, fmt("seed-averaged validation PNR full %.4f quantized %.4f: %+.2f%% (tol 1%%)",
                                     sum_full / runs.seeds.size(), sum_quant / runs.seeds.size(), 100 * gap));
  return o;
}

Outcome scoring_inconsistency(std::size_t n_seeds) {
  Outcome o;
  const TrainedRuns& runs = trained_runs(n_seeds);
  double sum_mean = 0.0, sum_max = 0.0;
  for (const auto& r : runs.seeds) {
    sum_mean += r.pnr;
    sum_max += r.pnr_max;
    o.note(fmt("seed %llu: validation PNR mean-pool %.4f max-pool %.4f (%+.2f%%)",
               static_cast<unsigned long long>(r.seed), r.pnr, r.pnr_max, 100 * relative_gap(r.pnr, r.pnr_max)));
  }
  const double gap = relative_gap(sum_mean, sum_max);
  o.check(std::abs(gap) <= 0.05, fmt("seed-averaged validation PNR mean-pool %.4f max-pool %.4f: %+.2f%% (tol 5%%)",
                                     sum_mean / runs.seeds.size(), sum_max / runs.seeds.size(), 100 * gap));
  return o;
}

Outcome training_trend(std::size_t n_seeds) {
  Outcome o;
  const TrainedRuns& runs = trained_runs(n_seeds);
  const char* names[] = {"untrained", "post-pretrained", "intermediate-FT", "target-FT"};
  std::vector<double> avg(4, 0.0);
  for (const auto& r : runs.seeds) {
    o.note(fmt("seed %llu: Recall@10 %.4f -> %.4f -> %.4f -> %.4f", static_cast<unsigned long long>(r.seed),
               r.recall[0], r.recall[1], r.recall[2], r.recall[3]));
    for (std::size_t i = 0; i < 4; ++i) avg[i] += r.recall[i] / static_cast<double>(runs.seeds.size());
  }
  std::string chain;
  bool monotone = true;
  for (std::size_t i = 0; i < 4; ++i) {
    chain += fmt("%s%s %.4f", i ? " -> " : "", names[i], avg[i]);
    if (i > 0 && avg[i] < avg[i - 1]) monotone = false;
  }
  o.check(monotone, fmt("%zu-seed average Recall@10 non-decreasing: %s", runs.seeds.size(), chain.c_str()));
  o.check(avg[3] >= 3.0 * avg[0], fmt("target-FT / untrained = %.1f (need >= 3)", avg[3] / avg[0]));
  o.check(runs.seconds < 1800.0, fmt("total runtime %.0f s (limit 1800 s)", runs.seconds));
  return o;
}

// 7. Index correctness.

Outcome index_correctness() {
  Outcome o;
  Rng rng(7);
  const std::size_t n_docs = 10000, n_queries = 1000, dim = 16;
  // Clustered vectors, like document embeddings of a topical corpus.
  const Tensor centres = gaussian({200, dim}, rng);
  Tensor docs({n_docs, dim});
  std::vector<std::uint64_t> ids(n_docs);
  for (std::size_t r = 0; r < n_docs; ++r) {
    ids[r] = 100000 + 7 * r;
    const std::size_t c = rng.index(centres.rows());
    for (std::size_t j = 0; j < dim; ++j) docs.at(r, j) = centres.at(c, j) + rng.normal(0.0, 0.3);
  }
  Tensor queries({n_queries, dim});
  for (std::size_t r = 0; r < n_queries; ++r) {
    const std::size_t c = rng.index(centres.rows());
    for (std::size_t j = 0; j < dim; ++j) queries.at(r, j) = centres.at(c, j) + rng.normal(0.0, 0.3);
  }

  const AnnIndex flat = AnnIndex::build(ids, docs, {AnnMode::kFlat});
  const AnnIndex ivf = AnnIndex::build(ids, docs, {AnnMode::kIvf, 100, 10, 25, 7});
  std::size_t mismatched = 0;
  double recall = 0.0;
  for (std::size_t q = 0; q < n_queries; ++q) {
    std::vector<ScoredDoc> oracle;
    for (std::size_t r = 0; r < n_docs; ++r) oracle.push_back({ids[r], dot(queries.row(q), docs.row(r))});
    std::sort(oracle.begin(), oracle.end(), ranks_before);
    oracle.resize(10);
    const SearchResult exact = flat.search(queries.row(q), 10);
    if (exact.hits != oracle) ++mismatched;
    std::vector<std::uint64_t> truth, found;
    for (const auto& h : exact.hits) truth.push_back(h.doc_id);
    for (const auto& h : ivf.search(queries.row(q), 10).hits) found.push_back(h.doc_id);
    recall += recall_at_k(found, truth, 10) / static_cast<double>(n_queries);
  }
  o.check(mismatched == 0, fmt("flat top-10 equals full-scan oracle exactly on %zu queries x %zu docs, %zu differ",
                               n_queries, n_docs, mismatched));
  o.check(recall >= 0.95, fmt("IVF (100 clusters, 10 probes) Recall@10 vs flat %.4f (need >= 0.95)", recall));

  const std::vector<TermDocument> hand{{1, {"red", "shoe", "red"}}, {2, {"blue", "shoe"}}, {3, {"green", "hat"}}};
  const InvertedIndex bm25 = InvertedIndex::build(hand);
  const std::vector<std::string> red_shoe{"red", "shoe"}, shoe_shoe{"shoe", "shoe"}, hat{"hat"};
  struct Case {
    const std::vector<std::string>* terms;
    std::uint64_t doc;
    double expected;
  };
  const Case cases[] = {{&red_shoe, 1, 1.6691453431260639},
                        {&red_shoe, 2, 0.4991762683023676},
                        {&shoe_shoe, 1, 0.42081720292932145},
                        {&hat, 3, 1.041708310095213},
                        {&hat, 1, 0.0}};
  double worst = 0.0;
  for (const Case& c : cases) worst = std::max(worst, std::abs(bm25.score_document(*c.terms, c.doc) - c.expected));
  o.check(worst <= 1e-9, fmt("BM25 on the 3-document hand corpus: max |diff| %.2e over 5 scores (tol 1e-9)", worst));
  return o;
}

// 8. Workflow collapse.

Outcome workflow_collapse() {
  Outcome o;
  RunConfig cfg;
  cfg.seed = 3;
  cfg.data.n_topics = 20;
  const SyntheticCorpus corpus = generate_corpus(cfg.data_spec());
  EncoderModel model(cfg.encoder_for(corpus.vocab.size()), 3);
  const CorpusEmbeddings emb = embed_corpus(model, corpus.vocab, corpus.docs);
  const AnnIndex ann = AnnIndex::build(emb.doc_ids, emb.vectors, {AnnMode::kFlat});
  std::vector<std::pair<std::uint64_t, std::string>> titles;
  for (const auto& d : corpus.docs) titles.emplace_back(d.doc_id, d.title);
  const InvertedIndex inverted = InvertedIndex::build_from_titles(titles);
  const Calibration cal = calibrate_store(emb);
  const EmbeddingStore store = build_store(emb, cal.params);
  const FeatureTable table(doc_statistics(corpus.click_log));
  const std::size_t k = 20;
  std::size_t differ = 0, queries = 0;
  for (const auto& q : corpus.queries) {
    if (queries == 200) break;
    ++queries;
    const auto qemb = online_query_embedding(model, make_sequence(corpus.vocab, q.text, model.config().max_len),
                                             &cal.params);
    CandidatePool pool = retrieve(q.text, qemb, ann, inverted, k, 0);
    backfill_semantic(pool, qemb, store);
    const FilterResult out = filter_rank(pool, table, LinearRanker::semantic_only(), k);
    const SearchResult raw = ann.search(qemb, k);
    bool same = out.results.size() == raw.hits.size();
    for (std::size_t i = 0; same && i < raw.hits.size(); ++i)
      same = out.results[i].doc_id == raw.hits[i].doc_id && out.results[i].score == raw.hits[i].score;
    if (!same) ++differ;
  }
  o.check(differ == 0, fmt("k_text=0, semantic-only ranker: retrieve->backfill->filter equals ann_search "
                           "(ids and scores) on %zu queries, %zu differ",
                           queries, differ));
  return o;
}

// 9. Metric oracles.

Outcome metric_oracles() {
  Outcome o;
  EvalRecord rec{1, {}};
  const double labels[] = {2, 1, 0}, scores[] = {0.9, 0.5, 0.7};
  for (std::size_t i = 0; i < 3; ++i) rec.docs.push_back({i, labels[i], scores[i]});
  const double p = pnr_query(rec).pnr;
  o.check(p == 2.0, fmt("PNR([2,1,0],[0.9,0.5,0.7]) = %.6g (expected 2.0)", p));

  const std::vector<std::uint64_t> retrieved{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const std::vector<std::uint64_t> truth{1, 3, 5, 7, 9, 10, 20, 21, 22, 23};
  const double rec10 = recall_at_k(retrieved, truth, 10);
  o.check(rec10 == 0.6, fmt("Recall@10 with 6/10 overlap = %.6g (expected 0.6)", rec10));

  const double dcg = dcg_at_k(std::vector<double>{4, 3, 2, 1}, 4).value;
  o.check(std::abs(dcg - 7.3235) <= 1e-3, fmt("DCG@4([4,3,2,1]) = %.6f (expected 7.3235 +- 1e-3)", dcg));

  InterleaveLog log;
  for (int i = 0; i < 3; ++i) log.push_back({1, Winner::kA, 20.0});
  log.push_back({2, Winner::kB, 20.0});
  const double dab = delta_ab(log);
  o.check(dab == 0.25, fmt("Delta_AB(3,1,0) = %.6g (expected 0.25)", dab));

  const double gsb = delta_gsb(7, 0, 3);
  o.check(std::abs(gsb - 0.4) <= 1e-15, fmt("Delta_GSB(7,0,3) = %.6g (expected 0.4)", gsb));

  std::vector<RankedList> lists;
  for (std::uint64_t q = 0; q < 50; ++q) lists.push_back({q, {q * 10, q * 10 + 1, q * 10 + 2, q * 10 + 3}});
  auto grade = [](std::uint64_t, std::uint64_t doc) { return static_cast<double>(doc % 5); };
  const InterleaveLog same = simulate_interleave(lists, lists, grade, ClickModel{}, 9, 5);
  const double d_same = delta_ab(same);
  o.check(d_same == 0.0, fmt("identical interleaved lists: Delta_AB = %.6g over %zu events", d_same, same.size()));

  Rng rng(9);
  InterleaveLog mixed;
  for (int i = 0; i < 100; ++i) mixed.push_back({0, static_cast<Winner>(rng.index(3)), 20.0});
  const double plain = delta_ab(mixed), weighted = delta_ab_tw(mixed);
  o.check(plain == weighted,
          fmt("equal dwell: Delta_AB-tw %.17g == Delta_AB %.17g", weighted, plain));
  return o;
}

// 10. Reproducibility.

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), root).string()] =
        std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return files;
}

std::map<std::string, std::string> run_commands(const RunConfig& cfg, const fs::path& root) {
  fs::remove_all(root);
  std::ostringstream log, out;
  command_gen_data(cfg, log);
  command_train(cfg, log);
  command_build_index(cfg, log);
  command_quantize(cfg, log);
  command_eval(cfg, out);
  command_retrieve(cfg, "alpha", 10, out);
  command_ablate(cfg, {{Stage::kIntermediateFineTune, Stage::kTargetFineTune}, cfg.stages}, true, out);
  auto files = snapshot(root);
  files["<stdout>"] = out.str();
  return files;
}

Outcome reproducibility(const fs::path& workdir) {
  Outcome o;
  RunConfig cfg;
  cfg.seed = 11;
  cfg.data.n_topics = 16;
  cfg.data.queries_per_topic = 10;
  for (auto& s : cfg.stage_configs) s.epochs = 1;
  cfg.ann.n_clusters = 8;
  cfg.ann.n_probe = 3;
  const fs::path root = workdir / "repro";
  cfg.paths.data_dir = (root / "data").string();
  cfg.paths.run_dir = (root / "run").string();
  const auto first = run_commands(cfg, root);
  const auto second = run_commands(cfg, root);
  std::vector<std::string> differ;
  std::size_t bytes = 0;
  for (const auto& [name, content] : first) {
    bytes += content.size();
    auto it = second.find(name);
    if (it == second.end() || it->second != content) differ.push_back(name);
  }
  for (const auto& [name, content] : second)
    if (!first.count(name)) differ.push_back(name);
  std::string names;
  for (const auto& [name, content] : first) names += (names.empty() ? "" : " ") + name;
  o.note("compared: " + names);
  std::string bad;
  for (const auto& n : differ) bad += " " + n;
  o.check(differ.empty(), fmt("gen-data, train, build-index, quantize, eval, retrieve, ablate rerun with seed 11: "
                              "%zu outputs (%zu bytes), %zu differ%s",
                              first.size(), bytes, differ.size(), bad.c_str()));
  fs::remove_all(root);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("polyret acceptance suite");
  std::vector<int> only;
  std::size_t n_seeds = 5;
  std::string workdir = (fs::temp_directory_path() / "polyret_acceptance").string();
  app.add_option("--criteria", only, "Run only these criteria")->delimiter(',');
  app.add_option("--seeds", n_seeds, "Seeds for the trained-model criteria")->check(CLI::PositiveNumber);
  app.add_option("--workdir", workdir, "Scratch directory");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"poly-attention contracts", poly_attention_contracts},
      {"in-batch negative oracle", in_batch_negatives},
      {"quantization", [&] { return quantization(n_seeds); }},
      {"scoring inconsistency (mean vs max pooling)", [&] { return scoring_inconsistency(n_seeds); }},
      {"training-paradigm trend", [&] { return training_trend(n_seeds); }},
      {"index correctness", index_correctness},
      {"workflow collapse", workflow_collapse},
      {"metric oracles", metric_oracles},
      {"reproducibility", [&] { return reproducibility(workdir); }},
  };
  fs::create_directories(workdir);
  std::size_t failed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    ++ran;
    if (!o.pass()) ++failed;
    std::printf("%s criterion %d: %s (%.1f s)\n", o.pass() ? "PASS" : "FAIL", number, criteria[i].first.c_str(),
                seconds_since(t0));
    for (const auto& line : o.lines()) std::printf("       %s\n", line.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu of %zu criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
