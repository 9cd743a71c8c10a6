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

#include <cmath>
#include <vector>

#include "doctest.h"
#include "fixtures.h"
#include "polyret/encoder.h"
#include "polyret/errors.h"

using namespace polyret;
using polyret::testing::random_tensor;
using polyret::testing::TempDir;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 12;
  c.vocab_size = 20;
  c.max_len = 8;
  c.m = 3;
  c.d_compress = 4;
  c.dropout = 0.0;
  return c;
}

TokenSequence seq(std::vector<TokenId> words) {
  TokenSequence s;
  s.ids.push_back(kClsId);
  s.ids.insert(s.ids.end(), words.begin(), words.end());
  return s;
}

}  // namespace

TEST_CASE("encoder config validation names the field") {
  EncoderConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("n_heads"), ContractError);
  c = tiny_config();
  c.d_compress = 9;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("d_compress"), ContractError);
  c = tiny_config();
  c.m = 0;
  CHECK_THROWS_AS(EncoderModel(c, 0), ContractError);
  EncoderConfig prod = EncoderConfig::production();
  CHECK(prod.d_model == 768);
  CHECK(prod.m == 16);
  CHECK(prod.embedding_dim() == 256);
}

TEST_CASE("tokenization into sequences") {
  Vocabulary vocab({"red", "shoe", "size"});
  TokenSequence s = make_sequence(vocab, "Red shoe, SIZE nine", 8);
  CHECK(s.ids == std::vector<TokenId>{kClsId, kFirstWordId, kFirstWordId + 1, kFirstWordId + 2,
                                      kUnkId});
  CHECK(make_sequence(vocab, "red shoe size", 2).ids.size() == 2);
  CHECK(make_sequence(vocab, "", 4).ids == std::vector<TokenId>{kClsId});
}

TEST_CASE("sequence validation") {
  EncoderConfig c = tiny_config();
  CHECK_THROWS_AS(validate_sequence(TokenSequence{}, c), InputError);
  CHECK_THROWS_AS(validate_sequence(TokenSequence{{7, 8}}, c), InputError);
  CHECK_THROWS_AS(validate_sequence(seq({5, 6, 7, 8, 9, 10, 11, 12}), c), InputError);
  CHECK_THROWS_AS(validate_sequence(seq({20}), c), InputError);
  CHECK_NOTHROW(validate_sequence(seq({19}), c));
}

TEST_CASE("model initialisation is deterministic per seed") {
  EncoderModel a(tiny_config(), 7), b(tiny_config(), 7), c(tiny_config(), 8);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  std::size_t total = 0;
  for (auto& p : a.parameters()) total += p.tensor->numel();
  CHECK(total == a.parameter_count());
  CHECK(a.backbone_parameters().size() + a.retrieval_parameters().size() +
            a.pretraining_parameters().size() ==
        a.parameters().size());
}

TEST_CASE("checkpoint round trip is bit-exact") {
  TempDir dir("ckpt");
  EncoderConfig c = tiny_config();
  c.use_poly = false;
  EncoderModel a(c, 3);
  a.save(dir.file("model.bin"));
  EncoderModel b = EncoderModel::load(dir.file("model.bin"));
  CHECK(a == b);
  CHECK_FALSE(b.config().use_poly);
  CHECK(b.config().d_compress == c.d_compress);

  std::string bytes = polyret::testing::read_bytes(dir.file("model.bin"));
  {
    std::ofstream out(dir.file("short.bin"), std::ios::binary);
    out << bytes.substr(0, bytes.size() / 2);
  }
  CHECK_THROWS_AS(EncoderModel::load(dir.file("short.bin")), InputError);
  {
    std::ofstream out(dir.file("bad.bin"), std::ios::binary);
    out << "XXXX" << bytes.substr(4);
  }
  CHECK_THROWS_AS(EncoderModel::load(dir.file("bad.bin")), InputError);
  CHECK_THROWS_AS(EncoderModel::load(dir.file("missing.bin")), InputError);
}

TEST_CASE("encode shapes and role symmetry") {
  EncoderModel model(tiny_config(), 1);
  TokenSequence s = seq({5, 9, 11});
  EncoderOutput q = encode(model, s, Role::kQuery);
  EncoderOutput d = encode(model, s, Role::kDocument);
  CHECK(q.cls.shape() == Shape{8});
  CHECK(q.tokens.shape() == Shape{3, 8});
  CHECK(q.cls.storage() == d.cls.storage());
  CHECK(q.tokens.storage() == d.tokens.storage());
}

TEST_CASE("packing several sequences does not mix them") {
  EncoderModel model(tiny_config(), 2);
  std::vector<TokenSequence> seqs{seq({5, 6}), seq({7}), seq({8, 9, 10, 11})};
  Tensor batched = embed_documents(model, seqs);
  Tensor queries = embed_queries(model, seqs);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    Tensor one = embed_document(model, seqs[i]);
    Tensor q = embed_query(model, seqs[i]);
    for (std::size_t c = 0; c < one.numel(); ++c) {
      CHECK(batched.at(i, c) == one[c]);
      CHECK(queries.at(i, c) == q[c]);
    }
  }
}

TEST_CASE("poly attention weights form a distribution") {
  EncoderModel model(tiny_config(), 4);
  for (std::size_t n = 1; n <= 6; ++n) {
    std::vector<TokenId> words;
    for (std::size_t i = 0; i < n; ++i) words.push_back(static_cast<TokenId>(5 + i));
    PolyAttention pa = poly_attend(model.context_codes, encode(model, seq(words)));
    CHECK(pa.weights.shape() == Shape{3, n + 1});
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0;
      for (double w : pa.weights.row(r)) {
        CHECK(w >= 0.0);
        total += w;
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("poly_attend agrees with the batched global representation") {
  EncoderConfig c = tiny_config();
  c.use_compression = false;
  EncoderModel model(c, 5);
  TokenSequence s = seq({6, 12, 13});
  PolyAttention pa = poly_attend(model.context_codes, encode(model, s));
  Tensor g = query_global_embeddings(model, s);
  REQUIRE(g.shape() == pa.global.shape());
  for (std::size_t i = 0; i < g.numel(); ++i) CHECK(g[i] == doctest::Approx(pa.global[i]).epsilon(1e-13));
}

TEST_CASE("max scoring dominates mean-pooled scoring") {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    Tensor global = random_tensor({4, 6}, rng);
    Tensor doc = random_tensor({6}, rng);
    CHECK(score_train(global, doc.data()) >= score_predict(global, doc.data()));
  }
  Tensor one = random_tensor({1, 6}, rng);
  Tensor doc = random_tensor({6}, rng);
  CHECK(score_train(one, doc.data()) == score_predict(one, doc.data()));
  CHECK_THROWS_AS(score_train(one, Tensor({5}).data()), ShapeError);
}

TEST_CASE("score matrices match per-pair scoring") {
  EncoderModel model(tiny_config(), 6);
  std::vector<TokenSequence> queries{seq({5, 6}), seq({7, 8, 9})};
  std::vector<TokenSequence> docs{seq({10}), seq({11, 12}), seq({13, 14, 15})};
  Tape tape(Tape::Mode::kInference);
  EncoderGraph graph(tape, model);
  Tensor train = graph.score_matrix_train(queries, docs).value();
  Tensor predict = graph.score_matrix_predict(queries, docs).value();
  for (std::size_t i = 0; i < queries.size(); ++i) {
    Tensor g = query_global_embeddings(model, queries[i]);
    for (std::size_t j = 0; j < docs.size(); ++j) {
      Tensor d = embed_document(model, docs[j]);
      CHECK(train.at(i, j) == score_train(g, d.data()));
      CHECK(predict.at(i, j) == doctest::Approx(score_predict(g, d.data())).epsilon(1e-13));
      CHECK(train.at(i, j) >= predict.at(i, j));
    }
  }
}

TEST_CASE("ablation switches change the embedding layout") {
  EncoderConfig c = tiny_config();
  c.use_poly = false;
  c.use_compression = false;
  EncoderModel model(c, 7);
  TokenSequence s = seq({5, 6});
  CHECK(c.global_count() == 1);
  CHECK(embed_query(model, s).numel() == 8);
  // Without poly attention or compression the query embedding is the [CLS] output.
  CHECK(embed_query(model, s).storage() == encode(model, s).cls.storage());
  CHECK(embed_query(model, s).storage() == embed_document(model, s).storage());
}

TEST_CASE("dropout is reproducible and only active in train mode") {
  EncoderConfig c = tiny_config();
  c.dropout = 0.3;
  EncoderModel model(c, 8);
  TokenSequence s = seq({5, 6, 7});
  Rng r1(1), r2(1);
  EncoderOutput a = encode(model, s, Role::kQuery, true, &r1);
  EncoderOutput b = encode(model, s, Role::kQuery, true, &r2);
  EncoderOutput eval1 = encode(model, s);
  EncoderOutput eval2 = encode(model, s, Role::kQuery, false, &r1);
  CHECK(a.cls.storage() == b.cls.storage());
  CHECK(a.cls.storage() != eval1.cls.storage());
  CHECK(eval1.cls.storage() == eval2.cls.storage());
}

TEST_CASE("encoder gradients match finite differences on a tiny model") {
  EncoderModel model(tiny_config(), 9);
  Rng rng(9);
  for (auto& p : model.parameters()) {
    if (p.tensor->rank() == 2) *p.tensor = random_tensor(p.tensor->shape(), rng, 0.3);
  }
  std::vector<TokenSequence> queries{seq({5, 6}), seq({7})};
  std::vector<TokenSequence> docs{seq({8}), seq({9, 10}), seq({11}), seq({12})};
  auto loss = [&](Tape& t) {
    EncoderGraph graph(t, model);
    Var s = graph.score_matrix_train(queries, docs);
    return softmax_cross_entropy(s, {0, 1});
  };
  std::vector<Tensor*> params;
  for (auto* p : model.backbone_parameters()) params.push_back(p);
  for (auto* p : model.retrieval_parameters()) params.push_back(p);
  GradCheckReport r = finite_diff_check(loss, params);
  INFO("worst tensor ", r.worst_param, " element ", r.worst_element, ": analytic ",
       r.worst_analytic, " numeric ", r.worst_numeric);
  CHECK(r.max_rel_error < 1e-4);
}
