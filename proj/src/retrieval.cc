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

#include "polyret/retrieval.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "polyret/binio.h"
#include "polyret/errors.h"

namespace polyret {

namespace {

constexpr std::string_view kFeatureMagic = "PRFEATUR";
constexpr std::uint32_t kFeatureVersion = 1;

}  // namespace

const Candidate* CandidatePool::find(std::uint64_t doc_id) const {
  auto it = std::lower_bound(entries.begin(), entries.end(), doc_id,
                             [](const Candidate& c, std::uint64_t id) { return c.doc_id < id; });
  return it != entries.end() && it->doc_id == doc_id ? &*it : nullptr;
}

CandidatePool merge_candidates(const SearchResult& semantic, const SearchResult& text) {
  std::map<std::uint64_t, Candidate> merged;
  for (const auto& h : semantic.hits) {
    Candidate& c = merged[h.doc_id];
    c.doc_id = h.doc_id;
    c.from_semantic = true;
    c.semantic_score = h.score;
  }
  for (const auto& h : text.hits) {
    Candidate& c = merged[h.doc_id];
    c.doc_id = h.doc_id;
    c.from_text = true;
    c.bm25_score = h.score;
  }
  CandidatePool pool;
  pool.entries.reserve(merged.size());
  for (auto& [id, c] : merged) pool.entries.push_back(c);
  pool.empty_flag = pool.entries.empty();
  return pool;
}

std::vector<double> online_query_embedding(const EncoderModel& model, const TokenSequence& query,
                                           const QuantizationParams* params) {
  Tensor e = embed_query(model, query);
  if (!params) return e.storage();
  return dequantize(quantize(e.data(), *params), *params);
}

CandidatePool retrieve(std::string_view query_text, std::span<const double> query_embedding,
                       const AnnIndex& ann, const InvertedIndex& inverted, std::size_t k_sem,
                       std::size_t k_text) {
  // The channels share no state; each sees only immutable inputs.
  SearchResult semantic, text;
  if (k_sem > 0) semantic = ann.search(query_embedding, k_sem);
  if (k_text > 0) text = inverted.search(query_text, k_text);
  return merge_candidates(semantic, text);
}

void backfill_semantic(CandidatePool& pool, std::span<const double> query_embedding,
                       const EmbeddingStore& store, const EmbeddingFallback& fallback) {
  std::vector<Candidate> kept;
  kept.reserve(pool.entries.size());
  for (Candidate& c : pool.entries) {
    if (!c.semantic_score) {
      if (const QuantizedVector* qv = store.get(c.doc_id)) {
        c.semantic_score = dot(dequantize(*qv, store.params()), query_embedding);
      } else if (auto v = fallback ? fallback(c.doc_id) : std::nullopt) {
        c.semantic_score = dot(*v, query_embedding);
      } else {
        ++pool.dropped;
        continue;
      }
    }
    kept.push_back(c);
  }
  pool.entries = std::move(kept);
}

const std::vector<std::string>& feature_names() {
  static const std::vector<std::string> names = {"ctr", "mean_dwell", "f_bm25", "f_ernie"};
  return names;
}

std::map<std::uint64_t, DocStatistics> doc_statistics(std::span<const ClickLogRecord> click_log) {
  struct Counts {
    std::size_t impressions = 0;
    std::size_t clicks = 0;
    double dwell = 0.0;
  };
  std::map<std::uint64_t, Counts> counts;
  for (const auto& r : click_log) {
    auto& c = counts[r.doc_id];
    ++c.impressions;
    if (r.clicked) {
      ++c.clicks;
      c.dwell += r.dwell_time;
    }
  }
  std::map<std::uint64_t, DocStatistics> out;
  for (const auto& [id, c] : counts) {
    out[id] = {static_cast<double>(c.clicks) / static_cast<double>(c.impressions),
               c.clicks == 0 ? 0.0 : c.dwell / static_cast<double>(c.clicks)};
  }
  return out;
}

FeatureTable::FeatureTable(std::map<std::uint64_t, DocStatistics> stats) : stats_(std::move(stats)) {
  if (stats_.empty()) return;
  for (const auto& [id, s] : stats_) {
    means_.ctr += s.ctr;
    means_.mean_dwell += s.mean_dwell;
  }
  means_.ctr /= static_cast<double>(stats_.size());
  means_.mean_dwell /= static_cast<double>(stats_.size());
}

DocStatistics FeatureTable::lookup(std::uint64_t doc_id, bool* imputed) const {
  auto it = stats_.find(doc_id);
  if (imputed) *imputed = it == stats_.end();
  return it == stats_.end() ? means_ : it->second;
}

void FeatureTable::save(const std::string& path) const {
  BinaryWriter w(path);
  w.magic(kFeatureMagic);
  w.put<std::uint32_t>(kFeatureVersion);
  w.put<std::uint64_t>(stats_.size());
  for (const auto& [id, s] : stats_) {
    w.put<std::uint64_t>(id);
    w.put<double>(s.ctr);
    w.put<double>(s.mean_dwell);
  }
  w.close();
}

FeatureTable FeatureTable::load(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kFeatureMagic);
  if (const auto v = r.get<std::uint32_t>(); v != kFeatureVersion) {
    throw InputError(path + ": unsupported feature table version " + std::to_string(v));
  }
  std::map<std::uint64_t, DocStatistics> stats;
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto id = r.get<std::uint64_t>();
    DocStatistics s;
    s.ctr = r.get<double>();
    s.mean_dwell = r.get<double>();
    stats.emplace(id, s);
  }
  return FeatureTable(std::move(stats));
}

FeatureVector candidate_features(const Candidate& c, const FeatureTable& table, bool* imputed) {
  if (!c.semantic_score) {
    throw ContractError("candidate_features: doc " + std::to_string(c.doc_id) +
                        " has no semantic score; backfill first");
  }
  const DocStatistics s = table.lookup(c.doc_id, imputed);
  FeatureVector f(kFeatureCount);
  f[kFeatCtr] = s.ctr;
  f[kFeatDwell] = s.mean_dwell;
  f[kFeatBm25] = c.bm25_score.value_or(0.0);
  f[kFeatSemantic] = *c.semantic_score;
  return f;
}

double LinearRanker::score(std::span<const double> features) const {
  if (features.size() != weights.size()) {
    throw ShapeError("LinearRanker::score: " + std::to_string(features.size()) +
                     " features for " + std::to_string(weights.size()) + " weights");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * features[i];
  return s + bias;
}

std::string LinearRanker::to_json() const {
  nlohmann::json j;
  j["features"] = names;
  j["weights"] = weights;
  j["bias"] = bias;
  return j.dump(2);
}

LinearRanker LinearRanker::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("ranker: malformed JSON: ") + e.what());
  }
  LinearRanker r;
  try {
    r.names = j.at("features").get<std::vector<std::string>>();
    r.weights = j.at("weights").get<std::vector<double>>();
    r.bias = j.at("bias").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("ranker: missing or invalid field: ") + e.what());
  }
  if (r.names != feature_names() || r.weights.size() != kFeatureCount) {
    throw InputError("ranker: features must be exactly [ctr, mean_dwell, f_bm25, f_ernie]");
  }
  return r;
}

void LinearRanker::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path + " for writing");
  out << to_json() << "\n";
}

LinearRanker LinearRanker::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path + " for reading");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

LinearRanker LinearRanker::semantic_only() {
  LinearRanker r;
  r.weights[kFeatSemantic] = 1.0;
  return r;
}

RankerTrainResult train_ranker(std::span<const PreferencePair> pairs,
                               const RankerTrainOptions& options) {
  if (pairs.empty()) throw ContractError("train_ranker: no preference pairs");
  const std::size_t d = pairs[0].better.size();
  RankerTrainResult result;

  // Standardise features over all pair members.
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  double count = 0.0;
  for (const auto& p : pairs) {
    if (p.better.size() != d || p.worse.size() != d) throw ShapeError("train_ranker: ragged pairs");
    for (const auto* x : {&p.better, &p.worse}) {
      for (std::size_t i = 0; i < d; ++i) mean[i] += (*x)[i];
    }
    count += 2.0;
  }
  for (auto& m : mean) m /= count;
  for (const auto& p : pairs) {
    for (const auto* x : {&p.better, &p.worse}) {
      for (std::size_t i = 0; i < d; ++i) sd[i] += ((*x)[i] - mean[i]) * ((*x)[i] - mean[i]);
    }
  }
  for (auto& s : sd) s = std::sqrt(s / count);
  for (auto& s : sd) s = s > 0.0 ? s : 1.0;

  std::vector<std::vector<double>> diffs;
  diffs.reserve(pairs.size());
  for (const auto& p : pairs) {
    std::vector<double> z(d);
    bool zero = true;
    for (std::size_t i = 0; i < d; ++i) {
      z[i] = (p.better[i] - p.worse[i]) / sd[i];
      zero = zero && z[i] == 0.0;
    }
    result.degenerate_pairs += zero ? 1 : 0;
    diffs.push_back(std::move(z));
  }

  const double n = static_cast<double>(diffs.size());
  std::vector<double> w(d, 0.0), grad(d);
  auto objective = [&](const std::vector<double>& wv) {
    double loss = 0.0;
    for (const auto& z : diffs) loss += std::max(0.0, 1.0 - dot(wv, z));
    double reg = 0.0;
    for (double x : wv) reg += x * x;
    return loss / n + options.lambda * reg;
  };
  std::size_t it = 0;
  for (; it < options.max_iterations; ++it) {
    for (std::size_t i = 0; i < d; ++i) grad[i] = 2.0 * options.lambda * w[i];
    for (const auto& z : diffs) {
      if (1.0 - dot(w, z) > 0.0) {
        for (std::size_t i = 0; i < d; ++i) grad[i] -= z[i] / n;
      }
    }
    double norm = 0.0;
    for (double g : grad) norm += g * g;
    if (std::sqrt(norm) < options.tolerance) break;
    const double step = options.learning_rate / std::sqrt(1.0 + static_cast<double>(it));
    for (std::size_t i = 0; i < d; ++i) w[i] -= step * grad[i];
  }
  result.iterations = it;
  result.final_objective = objective(w);

  // score(x) = sum w_i (x_i - mean_i) / sd_i
  LinearRanker& r = result.ranker;
  if (d != kFeatureCount) {
    r.names.clear();
    for (std::size_t i = 0; i < d; ++i) r.names.push_back("f" + std::to_string(i));
  }
  r.weights.assign(d, 0.0);
  r.bias = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    r.weights[i] = w[i] / sd[i];
    r.bias -= w[i] * mean[i] / sd[i];
  }
  return result;
}

FilterResult filter_rank(const CandidatePool& pool, const FeatureTable& table,
                         const LinearRanker& ranker, std::size_t n_out) {
  FilterResult out;
  out.results.reserve(pool.entries.size());
  for (const Candidate& c : pool.entries) {
    bool imputed = false;
    RankedCandidate rc;
    rc.doc_id = c.doc_id;
    rc.features = candidate_features(c, table, &imputed);
    rc.score = ranker.score(rc.features);
    rc.from_text = c.from_text;
    rc.from_semantic = c.from_semantic;
    out.imputed += imputed ? 1 : 0;
    out.results.push_back(std::move(rc));
  }
  std::sort(out.results.begin(), out.results.end(),
            [](const RankedCandidate& a, const RankedCandidate& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.doc_id < b.doc_id;
            });
  if (out.results.size() > n_out) out.results.resize(n_out);
  return out;
}

}  // namespace polyret
