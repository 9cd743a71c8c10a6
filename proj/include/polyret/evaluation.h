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

// Offline evaluation of an encoder against graded labels: Recall@k over the
// whole corpus and PNR under several scoring modes.

#pragma once

#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "polyret/dataset.h"
#include "polyret/encoder.h"
#include "polyret/metrics.h"
#include "polyret/quantstore.h"
#include "polyret/training.h"

namespace polyret {

struct CorpusEmbeddings {
  std::vector<std::uint64_t> doc_ids;
  Tensor vectors;  // [n x embedding_dim]
  std::unordered_map<std::uint64_t, std::size_t> row;

  CorpusEmbeddings() = default;
  CorpusEmbeddings(std::vector<std::uint64_t> ids, Tensor v);
};

CorpusEmbeddings embed_corpus(const EncoderModel& model, const Vocabulary& vocab,
                              const std::vector<Document>& docs);

struct ModelEvalOptions {
  std::size_t k = 10;
  /// Documents graded at least this are relevant for Recall@k.
  int relevant_grade = 3;
  double pnr_cap = kDefaultPnrCap;
  /// Also score with both sides quantized under these parameters.
  const QuantizationParams* quantization = nullptr;
};

struct ModelEvalReport {
  double recall = 0.0;
  std::size_t recall_queries = 0;
  /// Mean-pooled query embedding against document embeddings.
  PnrReport pnr;
  /// max_i P_i . C' over the compressed global representations.
  PnrReport pnr_max;
  std::optional<PnrReport> pnr_quantized;
};

/// Labeled documents missing from `corpus` throw InputError.
ModelEvalReport evaluate_model(const EncoderModel& model, const Vocabulary& vocab,
                               const CorpusEmbeddings& corpus,
                               const std::vector<GradedLabelRecord>& labels,
                               const ModelEvalOptions& options = {});

/// Validator for the training pipeline reporting Recall@10 and PNR.
Validator make_validator(const Vocabulary& vocab, const std::vector<Document>& docs,
                         const std::vector<GradedLabelRecord>& labels);

}  // namespace polyret
