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

#include "polyret/evaluation.h"

#include <algorithm>
#include <limits>

#include "polyret/ann_index.h"
#include "polyret/errors.h"

namespace polyret {

CorpusEmbeddings::CorpusEmbeddings(std::vector<std::uint64_t> ids, Tensor v)
    : doc_ids(std::move(ids)), vectors(std::move(v)) {
  for (std::size_t r = 0; r < doc_ids.size(); ++r) row.emplace(doc_ids[r], r);
}

CorpusEmbeddings embed_corpus(const EncoderModel& model, const Vocabulary& vocab,
                              const std::vector<Document>& docs) {
  std::vector<TokenSequence> seqs;
  std::vector<std::uint64_t> ids;
  for (const auto& d : docs) {
    seqs.push_back(make_sequence(vocab, d.title, model.config().max_len));
    ids.push_back(d.doc_id);
  }
  return CorpusEmbeddings(std::move(ids), embed_documents(model, seqs));
}

ModelEvalReport evaluate_model(const EncoderModel& model, const Vocabulary& vocab,
                               const CorpusEmbeddings& corpus,
                               const std::vector<GradedLabelRecord>& labels,
                               const ModelEvalOptions& options) {
  const auto queries = group_labels(labels);
  std::vector<TokenSequence> seqs;
  for (const auto& q : queries) seqs.push_back(make_sequence(vocab, q.text, model.config().max_len));
  const Tensor q_emb = embed_queries(model, seqs);
  const Tensor q_global = query_global_embeddings(model, seqs);
  const std::size_t g = model.config().global_count();

  AnnParams flat;
  flat.mode = AnnMode::kFlat;
  const AnnIndex index = AnnIndex::build(corpus.doc_ids, corpus.vectors, flat);

  Tensor doc_q;
  if (options.quantization) doc_q = roundtrip_rows(corpus.vectors, *options.quantization);

  ModelEvalReport report;
  std::vector<EvalRecord> mean_records, max_records, quant_records;
  double recall_sum = 0.0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    const auto qv = q_emb.row(i);
    std::vector<std::uint64_t> truth;
    EvalRecord mean_rec{q.query_id, {}}, max_rec{q.query_id, {}}, quant_rec{q.query_id, {}};
    std::vector<double> qq;
    if (options.quantization) qq = dequantize(quantize(qv, *options.quantization), *options.quantization);
    for (const auto& [doc_id, grade] : q.docs) {
      auto it = corpus.row.find(doc_id);
      if (it == corpus.row.end())
        throw InputError("labeled document " + std::to_string(doc_id) + " is not in the corpus");
      const auto dv = corpus.vectors.row(it->second);
      if (grade >= options.relevant_grade) truth.push_back(doc_id);
      mean_rec.docs.push_back({doc_id, static_cast<double>(grade), dot(qv, dv)});
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < g; ++j) best = std::max(best, dot(q_global.row(i * g + j), dv));
      max_rec.docs.push_back({doc_id, static_cast<double>(grade), best});
      if (options.quantization)
        quant_rec.docs.push_back(
            {doc_id, static_cast<double>(grade), dot(qq, doc_q.row(it->second))});
    }
    mean_records.push_back(std::move(mean_rec));
    max_records.push_back(std::move(max_rec));
    if (options.quantization) quant_records.push_back(std::move(quant_rec));
    if (!truth.empty()) {
      std::vector<std::uint64_t> got;
      for (const auto& h : index.search(qv, options.k).hits) got.push_back(h.doc_id);
      recall_sum += recall_at_k(got, truth, options.k);
      ++report.recall_queries;
    }
  }
  report.recall = report.recall_queries ? recall_sum / static_cast<double>(report.recall_queries) : 0.0;
  report.pnr = pnr(mean_records, options.pnr_cap);
  report.pnr_max = pnr(max_records, options.pnr_cap);
  if (options.quantization) report.pnr_quantized = pnr(quant_records, options.pnr_cap);
  return report;
}

Validator make_validator(const Vocabulary& vocab, const std::vector<Document>& docs,
                         const std::vector<GradedLabelRecord>& labels) {
  return [&vocab, &docs, &labels](const EncoderModel& model) {
    const auto corpus = embed_corpus(model, vocab, docs);
    const auto r = evaluate_model(model, vocab, corpus, labels);
    return ValidationMetrics{r.recall, r.pnr.mean};
  };
}

}  // namespace polyret
