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

#include "polyret/encoder.h"

#include <algorithm>
#include <cmath>

#include "polyret/binio.h"
#include "polyret/errors.h"

namespace polyret {

namespace {

constexpr std::string_view kCheckpointMagic = "PRENCODR";
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr double kInitStd = 0.02;
// Sequences per tape when embedding a corpus.
constexpr std::size_t kInferenceChunk = 256;

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

Tensor filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

std::vector<double> dropout_mask(std::size_t n, double p, Rng& rng) {
  std::vector<double> mask(n);
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& m : mask) m = rng.bernoulli(p) ? 0.0 : keep_scale;
  return mask;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config and sequences

void EncoderConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ContractError("encoder config: " + field + " " + why);
  };
  if (n_layers == 0) fail("n_layers", "must be >= 1");
  if (d_model == 0) fail("d_model", "must be >= 1");
  if (n_heads == 0 || d_model % n_heads != 0) fail("n_heads", "must divide d_model");
  if (d_ff == 0) fail("d_ff", "must be >= 1");
  if (vocab_size <= static_cast<std::size_t>(kFirstWordId)) fail("vocab_size", "too small");
  if (max_len < 2) fail("max_len", "must be >= 2");
  if (m == 0) fail("m", "must be >= 1");
  if (d_compress == 0 || d_compress > d_model) fail("d_compress", "must be in [1, d_model]");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout", "must be in [0, 1)");
}

EncoderConfig EncoderConfig::production() {
  EncoderConfig c;
  c.n_layers = 6;
  c.d_model = 768;
  c.n_heads = 12;
  c.d_ff = 3072;
  c.vocab_size = 18000;
  c.max_len = 512;
  c.m = 16;
  c.d_compress = 256;
  c.dropout = 0.1;
  return c;
}

TokenSequence make_sequence(const Vocabulary& vocab, std::string_view text, std::size_t max_len) {
  TokenSequence seq;
  seq.ids.push_back(kClsId);
  for (const auto& w : split_words(text)) {
    if (seq.ids.size() >= max_len) break;
    seq.ids.push_back(vocab.id(w));
  }
  return seq;
}

void validate_sequence(const TokenSequence& seq, const EncoderConfig& config) {
  if (seq.ids.empty() || seq.ids.front() != kClsId) {
    throw InputError("token sequence must start with [CLS]");
  }
  if (seq.ids.size() > config.max_len) {
    throw InputError("token sequence of length " + std::to_string(seq.ids.size()) +
                     " exceeds max_len " + std::to_string(config.max_len));
  }
  for (TokenId id : seq.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(config.vocab_size));
    }
  }
}

// ---------------------------------------------------------------------------
// Model

EncoderModel::EncoderModel(EncoderConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.d_model, ff = config_.d_ff;
  token_embedding = normal_tensor({config_.vocab_size, d}, kInitStd, rng);
  position_embedding = normal_tensor({config_.max_len, d}, kInitStd, rng);
  emb_ln_gain = filled({d}, 1.0);
  emb_ln_bias = Tensor({d});
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    TransformerLayer layer;
    layer.w_q = normal_tensor({d, d}, kInitStd, rng);
    layer.b_q = Tensor({d});
    layer.w_k = normal_tensor({d, d}, kInitStd, rng);
    layer.w_v = normal_tensor({d, d}, kInitStd, rng);
    layer.b_v = Tensor({d});
    layer.w_o = normal_tensor({d, d}, kInitStd, rng);
    layer.b_o = Tensor({d});
    layer.ln1_gain = filled({d}, 1.0);
    layer.ln1_bias = Tensor({d});
    layer.w_ff1 = normal_tensor({d, ff}, kInitStd, rng);
    layer.b_ff1 = Tensor({ff});
    layer.w_ff2 = normal_tensor({ff, d}, kInitStd, rng);
    layer.b_ff2 = Tensor({d});
    layer.ln2_gain = filled({d}, 1.0);
    layer.ln2_bias = Tensor({d});
    layers.push_back(std::move(layer));
  }
  context_codes = normal_tensor({config_.m, d}, kInitStd, rng);
  compress_weight = normal_tensor({d, config_.d_compress}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  compress_bias = Tensor({config_.d_compress});
  mlm_weight = normal_tensor({d, d}, kInitStd, rng);
  mlm_bias = Tensor({d});
  mlm_ln_gain = filled({d}, 1.0);
  mlm_ln_bias = Tensor({d});
  mlm_output_bias = Tensor({config_.vocab_size});
  nsp_weight = normal_tensor({d, 1}, kInitStd, rng);
  nsp_bias = Tensor({1});
}

std::vector<NamedParameter> EncoderModel::parameters() {
  std::vector<NamedParameter> out = {
      {"token_embedding", &token_embedding},
      {"position_embedding", &position_embedding},
      {"emb_ln_gain", &emb_ln_gain},
      {"emb_ln_bias", &emb_ln_bias},
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& L = layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    for (auto [name, t] : std::initializer_list<std::pair<const char*, Tensor*>>{
             {"w_q", &L.w_q},       {"b_q", &L.b_q},         {"w_k", &L.w_k},
             {"w_v", &L.w_v},         {"b_v", &L.b_v},
             {"w_o", &L.w_o},       {"b_o", &L.b_o},         {"ln1_gain", &L.ln1_gain},
             {"ln1_bias", &L.ln1_bias}, {"w_ff1", &L.w_ff1}, {"b_ff1", &L.b_ff1},
             {"w_ff2", &L.w_ff2},   {"b_ff2", &L.b_ff2},     {"ln2_gain", &L.ln2_gain},
             {"ln2_bias", &L.ln2_bias}}) {
      out.push_back({p + name, t});
    }
  }
  out.insert(out.end(), {
                            {"context_codes", &context_codes},
                            {"compress_weight", &compress_weight},
                            {"compress_bias", &compress_bias},
                            {"mlm_weight", &mlm_weight},
                            {"mlm_bias", &mlm_bias},
                            {"mlm_ln_gain", &mlm_ln_gain},
                            {"mlm_ln_bias", &mlm_ln_bias},
                            {"mlm_output_bias", &mlm_output_bias},
                            {"nsp_weight", &nsp_weight},
                            {"nsp_bias", &nsp_bias},
                        });
  return out;
}

std::vector<Tensor*> EncoderModel::backbone_parameters() {
  std::vector<Tensor*> out = {&token_embedding, &position_embedding, &emb_ln_gain, &emb_ln_bias};
  for (auto& L : layers) {
    out.insert(out.end(), {&L.w_q, &L.b_q, &L.w_k, &L.w_v, &L.b_v, &L.w_o, &L.b_o,
                           &L.ln1_gain, &L.ln1_bias, &L.w_ff1, &L.b_ff1, &L.w_ff2, &L.b_ff2,
                           &L.ln2_gain, &L.ln2_bias});
  }
  return out;
}

std::vector<Tensor*> EncoderModel::retrieval_parameters() {
  std::vector<Tensor*> out;
  if (config_.use_poly) out.push_back(&context_codes);
  if (config_.use_compression) out.insert(out.end(), {&compress_weight, &compress_bias});
  return out;
}

std::vector<Tensor*> EncoderModel::pretraining_parameters() {
  return {&mlm_weight, &mlm_bias, &mlm_ln_gain, &mlm_ln_bias, &mlm_output_bias, &nsp_weight, &nsp_bias};
}

std::size_t EncoderModel::parameter_count() {
  std::size_t n = 0;
  for (auto& p : parameters()) n += p.tensor->numel();
  return n;
}

void EncoderModel::save(const std::string& path) const {
  BinaryWriter w(path);
  w.magic(kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  for (std::size_t v : {config_.n_layers, config_.d_model, config_.n_heads, config_.d_ff,
                        config_.vocab_size, config_.max_len, config_.m, config_.d_compress}) {
    w.put<std::uint64_t>(v);
  }
  w.put<double>(config_.dropout);
  w.put<std::uint8_t>(config_.use_poly ? 1 : 0);
  w.put<std::uint8_t>(config_.use_compression ? 1 : 0);
  auto params = const_cast<EncoderModel*>(this)->parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.put_string(p.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.tensor->rank()));
    for (std::size_t dim : p.tensor->shape()) w.put<std::uint64_t>(dim);
    w.put_array<double>(p.tensor->data());
  }
  w.close();
}

EncoderModel EncoderModel::load(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kCheckpointMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw InputError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  EncoderConfig c;
  for (std::size_t* f : {&c.n_layers, &c.d_model, &c.n_heads, &c.d_ff, &c.vocab_size, &c.max_len,
                         &c.m, &c.d_compress}) {
    *f = static_cast<std::size_t>(r.get<std::uint64_t>());
  }
  c.dropout = r.get<double>();
  c.use_poly = r.get<std::uint8_t>() != 0;
  c.use_compression = r.get<std::uint8_t>() != 0;
  EncoderModel model(c, 0);
  auto params = model.parameters();
  const auto count = r.get<std::uint32_t>();
  if (count != params.size()) throw InputError(path + ": parameter count mismatch");
  for (auto& p : params) {
    const std::string name = r.get_string();
    if (name != p.name) throw InputError(path + ": expected parameter " + p.name + ", found " + name);
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& dim : shape) dim = static_cast<std::size_t>(r.get<std::uint64_t>());
    if (shape != p.tensor->shape()) throw InputError(path + ": shape mismatch for " + name);
    r.get_array<double>(p.tensor->data());
  }
  return model;
}

bool EncoderModel::operator==(const EncoderModel& other) const {
  auto a = const_cast<EncoderModel*>(this)->parameters();
  auto b = const_cast<EncoderModel&>(other).parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].tensor->shape() != b[i].tensor->shape() ||
        a[i].tensor->storage() != b[i].tensor->storage()) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Graph

EncoderGraph::EncoderGraph(Tape& tape, EncoderModel& model)
    : tape_(tape), model_(model), mutable_model_(&model) {}

EncoderGraph::EncoderGraph(Tape& tape, const EncoderModel& model)
    : tape_(tape), model_(model), mutable_model_(nullptr) {}

Var EncoderGraph::bind(const Tensor& t) {
  auto it = bound_.find(&t);
  if (it != bound_.end()) return it->second;
  // A mutable model owns `t`, so the cast only restores the original access.
  Var v = mutable_model_ ? tape_.parameter(const_cast<Tensor&>(t)) : tape_.frozen(t);
  bound_.emplace(&t, v);
  return v;
}

EncoderGraph::Encoded EncoderGraph::encode(std::span<const TokenSequence> seqs, Rng* dropout_rng) {
  const EncoderConfig& cfg = model_.config();
  if (seqs.empty()) throw ContractError("encode: no sequences");
  Encoded enc;
  std::vector<std::size_t> ids, positions;
  for (const auto& seq : seqs) {
    validate_sequence(seq, cfg);
    enc.segments.push_back({ids.size(), seq.size()});
    for (std::size_t i = 0; i < seq.size(); ++i) {
      ids.push_back(static_cast<std::size_t>(seq.ids[i]));
      positions.push_back(i);
    }
  }
  const bool drop = dropout_rng != nullptr && cfg.dropout > 0.0;
  auto maybe_dropout = [&](Var x) {
    return drop ? apply_mask(x, dropout_mask(x.value().numel(), cfg.dropout, *dropout_rng)) : x;
  };

  Var x = add(gather_rows(bind(model_.token_embedding), std::move(ids)),
              gather_rows(bind(model_.position_embedding), std::move(positions)));
  x = maybe_dropout(layernorm(x, bind(model_.emb_ln_gain), bind(model_.emb_ln_bias)));

  for (const auto& L : model_.layers) {
    Var q = add_bias(matmul(x, bind(L.w_q)), bind(L.b_q));
    Var k = matmul(x, bind(L.w_k));
    Var v = add_bias(matmul(x, bind(L.w_v)), bind(L.b_v));
    std::vector<double> attn_mask;
    if (drop) {
      attn_mask = dropout_mask(attention_mask_size(enc.segments, cfg.n_heads), cfg.dropout,
                               *dropout_rng);
    }
    Var a = self_attention(q, k, v, enc.segments, cfg.n_heads, std::move(attn_mask));
    a = maybe_dropout(add_bias(matmul(a, bind(L.w_o)), bind(L.b_o)));
    x = layernorm(add(x, a), bind(L.ln1_gain), bind(L.ln1_bias));
    Var f = gelu(add_bias(matmul(x, bind(L.w_ff1)), bind(L.b_ff1)));
    f = maybe_dropout(add_bias(matmul(f, bind(L.w_ff2)), bind(L.b_ff2)));
    x = layernorm(add(x, f), bind(L.ln2_gain), bind(L.ln2_bias));
  }
  enc.hidden = x;
  return enc;
}

Var EncoderGraph::cls(const Encoded& enc) {
  std::vector<std::size_t> rows;
  rows.reserve(enc.segments.size());
  for (const auto& s : enc.segments) rows.push_back(s.offset);
  return gather_rows(enc.hidden, std::move(rows));
}

Var EncoderGraph::global(const Encoded& enc) {
  if (!model_.config().use_poly) return cls(enc);
  return poly_attention(bind(model_.context_codes), enc.hidden, enc.segments);
}

Var EncoderGraph::compress(Var rows) {
  if (!model_.config().use_compression) return rows;
  return add_bias(matmul(rows, bind(model_.compress_weight)), bind(model_.compress_bias));
}

Var EncoderGraph::score_matrix_train(std::span<const TokenSequence> queries,
                                     std::span<const TokenSequence> docs, Rng* dropout_rng) {
  Var p = compress(global(encode(queries, dropout_rng)));
  Var c = compress(cls(encode(docs, dropout_rng)));
  return group_max_rows(matmul_nt(p, c), model_.config().global_count());
}

Var EncoderGraph::score_matrix_predict(std::span<const TokenSequence> queries,
                                       std::span<const TokenSequence> docs) {
  Var p = compress(global(encode(queries)));
  Var c = compress(cls(encode(docs)));
  return matmul_nt(group_mean_rows(p, model_.config().global_count()), c);
}

Var EncoderGraph::mlm_logits(const Encoded& enc, const std::vector<std::size_t>& rows) {
  Var h = gather_rows(enc.hidden, rows);
  h = gelu(add_bias(matmul(h, bind(model_.mlm_weight)), bind(model_.mlm_bias)));
  h = layernorm(h, bind(model_.mlm_ln_gain), bind(model_.mlm_ln_bias));
  return add_bias(matmul_nt(h, bind(model_.token_embedding)), bind(model_.mlm_output_bias));
}

Var EncoderGraph::nsp_logits(const Encoded& enc) {
  return add_bias(matmul(cls(enc), bind(model_.nsp_weight)), bind(model_.nsp_bias));
}

// ---------------------------------------------------------------------------
// Inference API

EncoderOutput encode(const EncoderModel& model, const TokenSequence& seq, Role /*role*/,
                     bool train_mode, Rng* rng) {
  Tape tape(Tape::Mode::kInference);
  EncoderGraph graph(tape, model);
  auto enc = graph.encode(std::span(&seq, 1), train_mode ? rng : nullptr);
  const Tensor& h = enc.hidden.value();
  const std::size_t d = model.config().d_model, n = seq.size() - 1;
  EncoderOutput out;
  out.cls = Tensor({d}, std::vector<double>(h.data().begin(), h.data().begin() + d));
  out.tokens = Tensor({n, d}, std::vector<double>(h.data().begin() + d, h.data().end()));
  return out;
}

PolyAttention poly_attend(const Tensor& codes, const EncoderOutput& out) {
  const std::size_t d = out.cls.numel();
  if (codes.rank() != 2 || codes.cols() != d) {
    throw ShapeError("poly_attend: codes " + shape_string(codes.shape()) +
                     " do not match output width " + std::to_string(d));
  }
  const std::size_t n = out.tokens.numel() / std::max<std::size_t>(d, 1);
  std::vector<double> rows(out.cls.data().begin(), out.cls.data().end());
  rows.insert(rows.end(), out.tokens.data().begin(), out.tokens.data().end());
  Tensor h({n + 1, d}, std::move(rows));

  Tape tape(Tape::Mode::kInference);
  Var hv = tape.frozen(h);
  Var cv = tape.frozen(codes);
  PolyAttention res;
  res.global = poly_attention(cv, hv, {{0, n + 1}}).value();
  res.weights = softmax(matmul_nt(cv, hv)).value();
  return res;
}

double score_train(const Tensor& global, std::span<const double> c_doc) {
  if (global.rank() != 2 || global.cols() != c_doc.size()) {
    throw ShapeError("score_train: global " + shape_string(global.shape()) +
                     " does not match document width " + std::to_string(c_doc.size()));
  }
  double best = dot(global.row(0), c_doc);
  for (std::size_t i = 1; i < global.rows(); ++i) best = std::max(best, dot(global.row(i), c_doc));
  return best;
}

double score_predict(const Tensor& global, std::span<const double> c_doc) {
  if (global.rank() != 2 || global.cols() != c_doc.size()) {
    throw ShapeError("score_predict: global " + shape_string(global.shape()) +
                     " does not match document width " + std::to_string(c_doc.size()));
  }
  return dot(mean_rows(global).data(), c_doc);
}

Tensor compress(const EncoderModel& model, const Tensor& v) {
  if (v.cols() != model.config().d_model) {
    throw ShapeError("compress: input " + shape_string(v.shape()) + " does not have width " +
                     std::to_string(model.config().d_model));
  }
  if (!model.config().use_compression) return v;
  Tape tape(Tape::Mode::kInference);
  EncoderGraph graph(tape, model);
  const Tensor rows = v.rank() == 1 ? v.reshaped({1, v.numel()}) : v;
  Tensor out = graph.compress(tape.frozen(rows)).value();
  return v.rank() == 1 ? out.reshaped({out.numel()}) : out;
}

Tensor query_global_embeddings(const EncoderModel& model, std::span<const TokenSequence> seqs) {
  const std::size_t g = model.config().global_count(), w = model.config().embedding_dim();
  std::vector<double> data;
  data.reserve(seqs.size() * g * w);
  for (std::size_t start = 0; start < seqs.size(); start += kInferenceChunk) {
    const auto chunk = seqs.subspan(start, std::min(kInferenceChunk, seqs.size() - start));
    Tape tape(Tape::Mode::kInference);
    EncoderGraph graph(tape, model);
    const Tensor& out = graph.compress(graph.global(graph.encode(chunk))).value();
    data.insert(data.end(), out.data().begin(), out.data().end());
  }
  return Tensor({seqs.size() * g, w}, std::move(data));
}

Tensor query_global_embeddings(const EncoderModel& model, const TokenSequence& seq) {
  return query_global_embeddings(model, std::span(&seq, 1));
}

Tensor embed_query(const EncoderModel& model, const TokenSequence& seq) {
  return mean_rows(query_global_embeddings(model, seq));
}

Tensor embed_queries(const EncoderModel& model, std::span<const TokenSequence> seqs) {
  const std::size_t w = model.config().embedding_dim();
  if (seqs.empty()) return Tensor({0, w});
  Tape tape(Tape::Mode::kInference);
  Var rows = tape.constant(query_global_embeddings(model, seqs));
  return group_mean_rows(rows, model.config().global_count()).value();
}

Tensor embed_documents(const EncoderModel& model, std::span<const TokenSequence> seqs) {
  const std::size_t w = model.config().embedding_dim();
  std::vector<double> data;
  data.reserve(seqs.size() * w);
  for (std::size_t start = 0; start < seqs.size(); start += kInferenceChunk) {
    const auto chunk = seqs.subspan(start, std::min(kInferenceChunk, seqs.size() - start));
    Tape tape(Tape::Mode::kInference);
    EncoderGraph graph(tape, model);
    const Tensor& out = graph.compress(graph.cls(graph.encode(chunk))).value();
    data.insert(data.end(), out.data().begin(), out.data().end());
  }
  return Tensor({seqs.size(), w}, std::move(data));
}

Tensor embed_document(const EncoderModel& model, const TokenSequence& seq) {
  Tensor rows = embed_documents(model, std::span(&seq, 1));
  return rows.reshaped({rows.numel()});
}

}  // namespace polyret
