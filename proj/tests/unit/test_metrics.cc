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
#include "polyret/errors.h"
#include "polyret/metrics.h"

using namespace polyret;

namespace {

EvalRecord record(std::uint64_t qid, std::vector<double> labels, std::vector<double> scores) {
  EvalRecord r{qid, {}};
  for (std::size_t i = 0; i < labels.size(); ++i) r.docs.push_back({i, labels[i], scores[i]});
  return r;
}

InterleaveLog counters(std::size_t a, std::size_t b, std::size_t ties, double dwell = 20.0) {
  InterleaveLog log;
  for (std::size_t i = 0; i < a; ++i) log.push_back({i, Winner::kA, dwell});
  for (std::size_t i = 0; i < b; ++i) log.push_back({i, Winner::kB, dwell});
  for (std::size_t i = 0; i < ties; ++i) log.push_back({i, Winner::kTie, dwell});
  return log;
}

}  // namespace

TEST_CASE("PNR of a three-document query") {
  QueryPnr q = pnr_query(record(1, {2, 1, 0}, {0.9, 0.5, 0.7}));
  CHECK(q.concordant == 2);
  CHECK(q.discordant == 1);
  CHECK(q.pnr == 2.0);
}

TEST_CASE("PNR ties, caps and skipped queries") {
  // Equal labels are not pairs; equal scores count as neither.
  QueryPnr tied = pnr_query(record(1, {1, 1, 0}, {0.5, 0.5, 0.5}));
  CHECK(tied.concordant + tied.discordant == 0);
  QueryPnr perfect = pnr_query(record(2, {2, 1, 0}, {3, 2, 1}), 50.0);
  CHECK(perfect.capped);
  CHECK(perfect.pnr == 50.0);
  std::vector<EvalRecord> records{record(1, {2, 1, 0}, {0.9, 0.5, 0.7}),
                                  record(2, {1, 1}, {0.1, 0.2}),
                                  record(3, {1, 0}, {0.0, 1.0}),
                                  record(4, {0, 1}, {0.0, 1.0})};
  PnrReport r = pnr(records, 10.0);
  CHECK(r.skipped == 1);
  CHECK(r.capped == 1);
  CHECK(r.per_query.size() == 3);
  CHECK(r.mean == doctest::Approx((2.0 + 0.0 + 10.0) / 3.0));
}

TEST_CASE("PNR counts agree with a brute-force pair enumeration") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> labels, scores;
    const std::size_t n = 2 + rng.index(12);
    for (std::size_t i = 0; i < n; ++i) {
      labels.push_back(static_cast<double>(rng.index(5)));
      scores.push_back(static_cast<double>(rng.index(6)) / 5.0);
    }
    std::size_t conc = 0, disc = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dl = labels[i] - labels[j], ds = scores[i] - scores[j];
        if (dl == 0 || ds == 0) continue;
        (dl * ds > 0 ? conc : disc) += 1;
      }
    QueryPnr q = pnr_query(record(0, labels, scores));
    CHECK(q.concordant == conc);
    CHECK(q.discordant == disc);
    // Reversing the scores swaps the two counts.
    for (double& s : scores) s = -s;
    QueryPnr rev = pnr_query(record(0, labels, scores));
    CHECK(rev.concordant == disc);
    CHECK(rev.discordant == conc);
  }
}

TEST_CASE("Recall@k") {
  std::vector<std::uint64_t> retrieved{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<std::uint64_t> truth{1, 3, 5, 7, 9, 10, 20, 21, 22, 23};
  CHECK(recall_at_k(retrieved, truth, 10) == 0.6);
  CHECK(recall_at_k(std::vector<std::uint64_t>{1, 1}, truth, 10) == 0.1);
  CHECK(recall_at_k({}, truth, 10) == 0.0);
  CHECK_THROWS_AS(recall_at_k(retrieved, truth, 5), ContractError);
  CHECK_THROWS_AS(recall_at_k(retrieved, truth, 0), ContractError);
}

TEST_CASE("DCG@4") {
  std::vector<double> g{4, 3, 2, 1};
  DcgResult d = dcg_at_k(g, 4);
  CHECK(std::abs(d.value - 7.3235) <= 1e-3);
  CHECK_FALSE(d.short_list);
  CHECK(dcg_at_k(g, 4, DcgGain::kExponential).value ==
        doctest::Approx(15.0 + 7.0 / std::log2(3.0) + 1.5 + 1.0 / std::log2(5.0)));
  DcgResult shortd = dcg_at_k(std::vector<double>{2}, 4);
  CHECK(shortd.short_list);
  CHECK(shortd.value == 2.0);
  CHECK(dcg_at_k(std::vector<double>{0, 0, 0, 0, 9}, 4).value == 0.0);
}

TEST_CASE("interleaving deltas") {
  CHECK(delta_ab(counters(3, 1, 0)) == 0.25);
  CHECK(delta_ab(counters(0, 0, 5)) == 0.0);
  CHECK(delta_ab(counters(1, 3, 0)) == -0.25);
  CHECK(delta_gsb(7, 0, 3) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK_THROWS_AS(delta_gsb(0, 0, 0), ContractError);
  CHECK_THROWS_AS(delta_ab(InterleaveLog{}), ContractError);
  CHECK_THROWS_AS(delta_ab(counters(1, 0, 0, -1.0)), InputError);
}

TEST_CASE("time-weighted delta") {
  for (double dwell : {0.0, 12.5, 30.0, 400.0}) {
    InterleaveLog log = counters(5, 2, 3, dwell);
    CHECK(delta_ab_tw(log) == delta_ab(log));
  }
  // Long dwell on A's wins pulls the weighted delta above the plain one.
  InterleaveLog mixed = counters(2, 2, 0, 5.0);
  mixed[0].dwell_time = mixed[1].dwell_time = 90.0;
  CHECK(delta_ab(mixed) == 0.0);
  CHECK(delta_ab_tw(mixed) > 0.2);
  DwellSigmoid s;
  CHECK(s(30.0) == 0.5);
  CHECK(s(40.0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("sign test") {
  CHECK(sign_test_p_value(0, 0) == 1.0);
  CHECK(sign_test_p_value(10, 0) == doctest::Approx(2.0 / 1024.0).epsilon(1e-12));
  CHECK(sign_test_p_value(5, 5) == 1.0);
  CHECK(sign_test_p_value(7, 3) == doctest::Approx(2.0 * 176.0 / 1024.0).epsilon(1e-12));
}

TEST_CASE("simulated interleaving") {
  std::vector<RankedList> a{{1, {10, 11, 12, 13}}, {2, {20, 21, 22}}, {3, {}}};
  auto grade = [](std::uint64_t, std::uint64_t doc) { return doc % 10 == 0 ? 4.0 : 1.0; };
  ClickModel model;

  SUBCASE("identical lists always tie") {
    InterleaveLog log = simulate_interleave(a, a, grade, model, 5, 20);
    REQUIRE_FALSE(log.empty());
    CHECK(delta_ab(log) == 0.0);
    CHECK(delta_ab_tw(log) == 0.0);
    for (const auto& e : log) CHECK(e.winner == Winner::kTie);
  }
  SUBCASE("the list that ranks the good result first wins") {
    std::vector<RankedList> worse{{1, {11, 12, 13, 10}}, {2, {21, 22, 20}}};
    InterleaveLog log = simulate_interleave(a, worse, grade, model, 6, 50);
    CHECK(delta_ab(log) > 0.2);
    InterleaveLog flipped = simulate_interleave(worse, a, grade, model, 6, 50);
    CHECK(delta_ab(flipped) < -0.2);
  }
  SUBCASE("same seed, same log") {
    std::vector<RankedList> other{{1, {12, 10}}, {2, {22, 20, 21}}};
    auto l1 = simulate_interleave(a, other, grade, model, 9, 10);
    auto l2 = simulate_interleave(a, other, grade, model, 9, 10);
    REQUIRE(l1.size() == l2.size());
    for (std::size_t i = 0; i < l1.size(); ++i) {
      CHECK(l1[i].winner == l2[i].winner);
      CHECK(l1[i].dwell_time == l2[i].dwell_time);
    }
  }
}
