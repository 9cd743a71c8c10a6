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

#include "polyret/engine.h"

#include <filesystem>

#include "json.hpp"
#include "polyret/errors.h"

namespace polyret {

namespace {

std::string require_file(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw InputError("missing input file " + p.string());
  return p.string();
}

}  // namespace

Engine::Engine(EncoderModel model, Vocabulary vocab, std::vector<Document> docs, AnnIndex ann,
               InvertedIndex inverted, EmbeddingStore store, FeatureTable features,
               LinearRanker ranker, RetrievalConfig options)
    : model_(std::move(model)),
      vocab_(std::move(vocab)),
      docs_(std::move(docs)),
      ann_(std::move(ann)),
      inverted_(std::move(inverted)),
      store_(std::move(store)),
      features_(std::move(features)),
      ranker_(std::move(ranker)),
      options_(options) {
  for (std::size_t i = 0; i < docs_.size(); ++i) doc_row_.emplace(docs_[i].doc_id, i);
}

Engine Engine::open(const std::string& data_dir, const std::string& run_dir,
                    const RetrievalConfig& options) {
  const std::filesystem::path data(data_dir), run(run_dir);
  return Engine(EncoderModel::load(require_file(run / RunFiles::kModel)),
                Vocabulary::load(require_file(data / "vocab.txt")),
                read_documents(require_file(data / "docs.jsonl")),
                AnnIndex::load(require_file(run / RunFiles::kAnn)),
                InvertedIndex::load(require_file(run / RunFiles::kInverted)),
                EmbeddingStore::load(require_file(run / RunFiles::kStore)),
                FeatureTable::load(require_file(run / RunFiles::kFeatures)),
                LinearRanker::load(require_file(run / RunFiles::kRanker)), options);
}

const std::string& Engine::title(std::uint64_t doc_id) const {
  static const std::string kNone;
  auto it = doc_row_.find(doc_id);
  return it == doc_row_.end() ? kNone : docs_[it->second].title;
}

QueryResult Engine::query(const std::string& text, std::size_t n_out) const {
  QueryResult out;
  const TokenSequence seq = make_sequence(vocab_, text, model_.config().max_len);
  out.embedding = online_query_embedding(model_, seq,
                                         options_.quantized_query ? &store_.params() : nullptr);
  out.pool = retrieve(text, out.embedding, ann_, inverted_, options_.k_sem, options_.k_text);
  const EmbeddingFallback fallback =
      [this](std::uint64_t doc_id) -> std::optional<std::vector<double>> {
    auto it = doc_row_.find(doc_id);
    if (it == doc_row_.end()) return std::nullopt;
    const Tensor e = embed_document(
        model_, make_sequence(vocab_, docs_[it->second].title, model_.config().max_len));
    return std::vector<double>(e.data().begin(), e.data().end());
  };
  backfill_semantic(out.pool, out.embedding, store_, fallback);
  out.ranked = filter_rank(out.pool, features_, ranker_, n_out);
  return out;
}

std::string Engine::result_json(const RankedCandidate& r) const {
  nlohmann::ordered_json j;
  j["doc_id"] = r.doc_id;
  j["title"] = title(r.doc_id);
  j["score"] = r.score;
  std::vector<std::string> sources;
  if (r.from_semantic) sources.push_back("semantic");
  if (r.from_text) sources.push_back("text");
  j["sources"] = sources;
  return j.dump();
}

}  // namespace polyret
