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

// Shared-parameter Transformer bi-encoder with poly attention over the query
// outputs and a linear compression layer.
//
// Query side:    [CLS] q1..qN -> C, F1..FN -> P_i (one per context code)
//                -> compress -> mean over i at prediction time.
// Document side: [CLS] t1..tM -> C' -> compress.
//
// Training scores a query/document pair with max_i P_i . C'; prediction uses
// the mean-pooled surrogate (1/m sum_i P_i) . C' so that documents can be
// indexed ahead of time.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "polyret/random.h"
#include "polyret/tensor.h"
#include "polyret/text.h"

namespace polyret {

struct EncoderConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 1024;
  std::size_t max_len = 64;
  std::size_t m = 4;  // context codes
  std::size_t d_compress = 16;
  double dropout = 0.1;
  // Ablation switches. Without poly attention the query is represented by
  // its [CLS] output; without compression embeddings keep width d_model.
  bool use_poly = true;
  bool use_compression = true;

  /// Throws ContractError naming the offending field.
  void validate() const;
  /// Width of the embeddings that are scored and indexed.
  std::size_t embedding_dim() const { return use_compression ? d_compress : d_model; }
  /// Number of global query representations actually produced.
  std::size_t global_count() const { return use_poly ? m : 1; }

  /// The full-size production settings (6 layers, width 768, 12 heads,
  /// 16 codes, 256-wide compression, dropout 0.1).
  static EncoderConfig production();
};

/// Token ids of one query or title. The first id is always kClsId.
struct TokenSequence {
  std::vector<TokenId> ids;

  std::size_t size() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

/// [CLS] followed by the vocabulary ids of the words of `text`, truncated
/// to max_len.
TokenSequence make_sequence(const Vocabulary& vocab, std::string_view text, std::size_t max_len);

/// Throws InputError if the sequence is empty, does not start with [CLS],
/// exceeds max_len or holds an id outside the vocabulary.
void validate_sequence(const TokenSequence& seq, const EncoderConfig& config);

struct EncoderOutput {
  Tensor cls;     // [d_model]
  Tensor tokens;  // [N x d_model], one row per non-[CLS] input token
};

enum class Role { kQuery, kDocument };

struct TransformerLayer {
  // Keys carry no bias: a key bias shifts every score of a query row by the
  // same amount and cancels in the softmax.
  Tensor w_q, b_q, w_k, w_v, b_v, w_o, b_o;
  Tensor ln1_gain, ln1_bias;
  Tensor w_ff1, b_ff1, w_ff2, b_ff2;
  Tensor ln2_gain, ln2_bias;
};

struct NamedParameter {
  std::string name;
  Tensor* tensor;
};

class EncoderModel {
 public:
  /// Randomly initialised model; deterministic for a given seed.
  explicit EncoderModel(EncoderConfig config, std::uint64_t seed = 0);

  const EncoderConfig& config() const { return config_; }

  // Backbone, shared by the query and document roles.
  Tensor token_embedding;     // [vocab x d]
  Tensor position_embedding;  // [max_len x d]
  Tensor emb_ln_gain, emb_ln_bias;
  std::vector<TransformerLayer> layers;

  // Retrieval head.
  Tensor context_codes;  // [m x d]
  Tensor compress_weight;  // [d x d_compress]
  Tensor compress_bias;    // [d_compress]

  // Pretraining heads. The MLM decoder is tied to token_embedding.
  Tensor mlm_weight, mlm_bias, mlm_ln_gain, mlm_ln_bias, mlm_output_bias;
  Tensor nsp_weight;  // [d x 1]
  Tensor nsp_bias;    // [1]

  /// Every parameter in declaration (and checkpoint) order.
  std::vector<NamedParameter> parameters();
  std::vector<Tensor*> backbone_parameters();
  std::vector<Tensor*> retrieval_parameters();
  std::vector<Tensor*> pretraining_parameters();
  std::size_t parameter_count();

  /// Checkpoint: magic, version, config, then named parameter blobs with
  /// explicit shapes, all little-endian.
  void save(const std::string& path) const;
  static EncoderModel load(const std::string& path);

  bool operator==(const EncoderModel& other) const;

 private:
  EncoderConfig config_;
};

// ---------------------------------------------------------------------------
// Differentiable graph construction.

/// Builds encoder computations on a tape. A graph constructed from a mutable
/// model binds parameters as trainable leaves; one constructed from a const
/// model binds them frozen. Parameters are bound on first use.
class EncoderGraph {
 public:
  EncoderGraph(Tape& tape, EncoderModel& model);
  EncoderGraph(Tape& tape, const EncoderModel& model);

  struct Encoded {
    Var hidden;  // [total tokens x d_model]
    std::vector<Segment> segments;
  };

  /// Runs the Transformer over all sequences packed row-wise. Dropout is
  /// applied when `dropout_rng` is non-null and the configured rate is > 0.
  Encoded encode(std::span<const TokenSequence> seqs, Rng* dropout_rng = nullptr);
  /// [CLS] output row of each sequence: [S x d_model].
  Var cls(const Encoded& enc);
  /// Global representations P_i per sequence: [S*m x d_model]; with poly
  /// attention disabled this is cls(enc).
  Var global(const Encoded& enc);
  /// Applies the compression layer row-wise.
  Var compress(Var rows);

  /// Train-time in-batch score matrix: row i scores query i against every
  /// document with max_i P_i . C' over compressed embeddings.
  Var score_matrix_train(std::span<const TokenSequence> queries,
                         std::span<const TokenSequence> docs, Rng* dropout_rng = nullptr);
  /// Same layout, mean-pooled surrogate scoring.
  Var score_matrix_predict(std::span<const TokenSequence> queries,
                           std::span<const TokenSequence> docs);

  /// MLM logits over the vocabulary for the given rows of `enc.hidden`.
  Var mlm_logits(const Encoded& enc, const std::vector<std::size_t>& rows);
  /// One NSP logit per sequence: [S x 1].
  Var nsp_logits(const Encoded& enc);

  Var bind(const Tensor& t);

 private:
  Tape& tape_;
  const EncoderModel& model_;
  EncoderModel* mutable_model_;
  std::unordered_map<const Tensor*, Var> bound_;
};

// ---------------------------------------------------------------------------
// Inference API over plain tensors.

/// Runs the shared Transformer. The role does not change the computation.
EncoderOutput encode(const EncoderModel& model, const TokenSequence& seq, Role role = Role::kQuery,
                     bool train_mode = false, Rng* rng = nullptr);

struct PolyAttention {
  Tensor global;   // [m x d], row i is P_i
  Tensor weights;  // [m x (N+1)], softmax over (C, F_1..F_N)
};

/// Each context code attends over {C, F_1..F_N}.
PolyAttention poly_attend(const Tensor& codes, const EncoderOutput& out);

/// max_i P_i . c_doc
double score_train(const Tensor& global, std::span<const double> c_doc);
/// ((1/m) sum_i P_i) . c_doc
double score_predict(const Tensor& global, std::span<const double> c_doc);

/// Affine compression of a vector [d_model] or of each row of [R x d_model].
Tensor compress(const EncoderModel& model, const Tensor& v);

/// Compressed global query representations [global_count x embedding_dim].
Tensor query_global_embeddings(const EncoderModel& model, const TokenSequence& seq);
/// Mean of the compressed global representations.
Tensor embed_query(const EncoderModel& model, const TokenSequence& seq);
/// Compressed [CLS] output of the document.
Tensor embed_document(const EncoderModel& model, const TokenSequence& seq);

/// Batched forms; row r corresponds to seqs[r]. Bit-identical to the
/// single-sequence calls.
Tensor embed_queries(const EncoderModel& model, std::span<const TokenSequence> seqs);
Tensor embed_documents(const EncoderModel& model, std::span<const TokenSequence> seqs);
/// [S*global_count x embedding_dim].
Tensor query_global_embeddings(const EncoderModel& model, std::span<const TokenSequence> seqs);

}  // namespace polyret
