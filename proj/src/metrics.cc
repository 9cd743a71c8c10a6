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

#include "polyret/metrics.h"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "polyret/errors.h"

namespace polyret {

QueryPnr pnr_query(const EvalRecord& record, double cap) {
  QueryPnr out;
  out.query_id = record.query_id;
  const auto& d = record.docs;
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d.size(); ++j) {
      if (!(d[i].label > d[j].label)) continue;
      if (d[i].score > d[j].score) ++out.concordant;
      if (d[i].score < d[j].score) ++out.discordant;
    }
  }
  if (out.discordant == 0) {
    out.pnr = out.concordant > 0 ? cap : 0.0;
    out.capped = out.concordant > 0;
  } else {
    out.pnr = static_cast<double>(out.concordant) / static_cast<double>(out.discordant);
  }
  return out;
}

PnrReport pnr(std::span<const EvalRecord> records, double cap) {
  PnrReport report;
  double total = 0.0;
  for (const auto& r : records) {
    QueryPnr q = pnr_query(r, cap);
    if (q.concordant + q.discordant == 0) {
      ++report.skipped;
      continue;
    }
    report.capped += q.capped ? 1 : 0;
    total += q.pnr;
    report.per_query.push_back(q);
  }
  if (!report.per_query.empty()) report.mean = total / static_cast<double>(report.per_query.size());
  return report;
}

double recall_at_k(std::span<const std::uint64_t> retrieved, std::span<const std::uint64_t> truth,
                   std::size_t k) {
  if (k == 0) throw ContractError("recall_at_k: k must be >= 1");
  if (retrieved.size() > k) {
    throw ContractError("recall_at_k: " + std::to_string(retrieved.size()) +
                        " retrieved ids exceed k=" + std::to_string(k));
  }
  std::unordered_set<std::uint64_t> gt(truth.begin(), truth.end());
  std::unordered_set<std::uint64_t> seen;
  std::size_t hits = 0;
  for (auto id : retrieved) {
    if (seen.insert(id).second && gt.count(id)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(k);
}

DcgResult dcg_at_k(std::span<const double> grades, std::size_t k, DcgGain gain) {
  DcgResult out;
  out.short_list = grades.size() < k;
  const std::size_t n = std::min(k, grades.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double g = gain == DcgGain::kLinear ? grades[i] : std::exp2(grades[i]) - 1.0;
    out.value += g / std::log2(static_cast<double>(i) + 2.0);
  }
  return out;
}

namespace {

double delta_from_counters(double wins_a, double wins_b, double ties) {
  const double total = wins_a + wins_b + ties;
  return (wins_a + 0.5 * ties) / total - 0.5;
}

}  // namespace

double delta_ab(std::span<const InterleaveEvent> log) {
  if (log.empty()) throw ContractError("delta_ab: empty interleave log");
  double a = 0, b = 0, t = 0;
  for (const auto& e : log) {
    if (e.dwell_time < 0.0) throw InputError("delta_ab: negative dwell_time");
    (e.winner == Winner::kA ? a : e.winner == Winner::kB ? b : t) += 1.0;
  }
  return delta_from_counters(a, b, t);
}

double DwellSigmoid::operator()(double dwell) const {
  return 1.0 / (1.0 + std::exp(-(dwell - center) / scale));
}

double delta_ab_tw(std::span<const InterleaveEvent> log, DwellSigmoid sigmoid) {
  if (log.empty()) throw ContractError("delta_ab_tw: empty interleave log");
  std::vector<double> w;
  w.reserve(log.size());
  for (const auto& e : log) {
    if (e.dwell_time < 0.0) throw InputError("delta_ab_tw: negative dwell_time");
    w.push_back(sigmoid(e.dwell_time));
  }
  // The formula is invariant to a common factor; dividing by the largest
  // weight keeps equal weights at exactly 1.
  const double top = *std::max_element(w.begin(), w.end());
  double a = 0, b = 0, t = 0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const double inc = w[i] / top;
    (log[i].winner == Winner::kA ? a : log[i].winner == Winner::kB ? b : t) += inc;
  }
  return delta_from_counters(a, b, t);
}

double delta_gsb(std::size_t good, std::size_t same, std::size_t bad) {
  const std::size_t total = good + same + bad;
  if (total == 0) throw ContractError("delta_gsb: no judgments");
  return (static_cast<double>(good) - static_cast<double>(bad)) / static_cast<double>(total);
}

double sign_test_p_value(std::size_t wins_a, std::size_t wins_b) {
  const std::size_t n = wins_a + wins_b;
  if (n == 0) return 1.0;
  const std::size_t k = std::min(wins_a, wins_b);
  // P(X <= k) for X ~ Binomial(n, 1/2), in log space.
  double tail = 0.0;
  for (std::size_t i = 0; i <= k; ++i) {
    const double log_p = std::lgamma(static_cast<double>(n) + 1) -
                         std::lgamma(static_cast<double>(i) + 1) -
                         std::lgamma(static_cast<double>(n - i) + 1) -
                         static_cast<double>(n) * std::log(2.0);
    tail += std::exp(log_p);
  }
  return std::min(1.0, 2.0 * tail);
}

InterleaveLog simulate_interleave(std::span<const RankedList> system_a,
                                  std::span<const RankedList> system_b, const GradeFn& grade,
                                  const ClickModel& model, std::uint64_t seed,
                                  std::size_t impressions_per_query) {
  std::unordered_map<std::uint64_t, const RankedList*> b_lists;
  for (const auto& l : system_b) b_lists.emplace(l.query_id, &l);
  Rng rng(seed);
  InterleaveLog log;
  const double max_gain = std::exp2(model.max_grade) - 1.0;
  for (const auto& la : system_a) {
    auto it = b_lists.find(la.query_id);
    if (it == b_lists.end()) continue;
    const RankedList& lb = *it->second;
    if (la.docs.empty() || lb.docs.empty()) continue;

    auto rank_in = [](const RankedList& l, std::uint64_t doc) {
      auto p = std::find(l.docs.begin(), l.docs.end(), doc);
      return p == l.docs.end() ? l.docs.size() + 1 : static_cast<std::size_t>(p - l.docs.begin());
    };
    for (std::size_t imp = 0; imp < impressions_per_query; ++imp) {
      // Balanced interleaving: alternate taking the next unseen result of
      // each list, with a coin flip for who goes first.
      const bool a_first = rng.bernoulli(0.5);
      std::vector<std::uint64_t> merged;
      std::unordered_set<std::uint64_t> in_merged;
      std::size_t ka = 0, kb = 0;
      const std::size_t length = std::max(la.docs.size(), lb.docs.size());
      while (merged.size() < length && (ka < la.docs.size() || kb < lb.docs.size())) {
        const bool take_a = kb >= lb.docs.size() ||
                            (ka < la.docs.size() && (ka < kb || (ka == kb && a_first)));
        const std::uint64_t doc = take_a ? la.docs[ka] : lb.docs[kb];
        if (in_merged.insert(doc).second) merged.push_back(doc);
        (take_a ? ka : kb) += 1;
      }
      std::size_t first_click = merged.size();
      double dwell = 0.0;
      for (std::size_t r = 0; r < merged.size(); ++r) {
        const double examine = 1.0 / std::pow(static_cast<double>(r + 1), model.position_decay);
        const double g = grade(la.query_id, merged[r]);
        const double attract = (std::exp2(g) - 1.0) / max_gain;
        if (rng.bernoulli(examine * attract)) {
          if (first_click == merged.size()) {
            first_click = r;
            const double mu = std::log(model.dwell_base + model.dwell_per_grade * g);
            dwell = std::exp(rng.normal(mu, model.dwell_sigma));
          }
        }
      }
      if (first_click == merged.size()) continue;
      const std::uint64_t doc = merged[first_click];
      const std::size_t ra = rank_in(la, doc), rb = rank_in(lb, doc);
      const Winner w = ra < rb ? Winner::kA : rb < ra ? Winner::kB : Winner::kTie;
      log.push_back({la.query_id, w, dwell});
    }
  }
  return log;
}

}  // namespace polyret
