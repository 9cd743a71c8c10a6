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

// Offline ranking metrics and interleaving / side-by-side comparisons.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "polyret/random.h"

namespace polyret {

// ---------------------------------------------------------------------------
// PNR

struct LabeledScore {
  std::uint64_t doc_id = 0;
  double label = 0.0;
  double score = 0.0;
};

struct EvalRecord {
  std::uint64_t query_id = 0;
  std::vector<LabeledScore> docs;
};

struct QueryPnr {
  std::uint64_t query_id = 0;
  std::size_t concordant = 0;
  std::size_t discordant = 0;
  double pnr = 0.0;
  bool capped = false;
};

struct PnrReport {
  std::vector<QueryPnr> per_query;
  double mean = 0.0;
  /// Queries whose discordant count was 0 (PNR set to the cap).
  std::size_t capped = 0;
  /// Queries with no pair that is ordered in both label and score.
  std::size_t skipped = 0;
};

inline constexpr double kDefaultPnrCap = 100.0;

/// Counts pairs with label_i > label_j: concordant if score_i > score_j,
/// discordant if score_i < score_j; score ties count as neither.
QueryPnr pnr_query(const EvalRecord& record, double cap = kDefaultPnrCap);
/// Mean of per-query PNR over the queries that are not skipped.
PnrReport pnr(std::span<const EvalRecord> records, double cap = kDefaultPnrCap);

// ---------------------------------------------------------------------------
// Retrieval metrics

/// |retrieved ∩ truth| / k. Throws ContractError if retrieved holds more than
/// k ids or k is 0.
double recall_at_k(std::span<const std::uint64_t> retrieved, std::span<const std::uint64_t> truth,
                   std::size_t k = 10);

struct DcgResult {
  double value = 0.0;
  /// Fewer than k grades were available.
  bool short_list = false;
};

enum class DcgGain { kLinear, kExponential };

/// sum_{i=1..k} gain(grade_i) / log2(i + 1), gain = grade or 2^grade - 1.
DcgResult dcg_at_k(std::span<const double> grades, std::size_t k = 4,
                   DcgGain gain = DcgGain::kLinear);

// ---------------------------------------------------------------------------
// Interleaving

enum class Winner { kA, kB, kTie };

struct InterleaveEvent {
  std::uint64_t query_id = 0;
  Winner winner = Winner::kTie;
  double dwell_time = 0.0;
};

using InterleaveLog = std::vector<InterleaveEvent>;

/// (wins(A) + ties / 2) / (wins(A) + wins(B) + ties) - 1/2.
double delta_ab(std::span<const InterleaveEvent> log);

struct DwellSigmoid {
  double center = 30.0;  // seconds
  double scale = 10.0;   // seconds
  double operator()(double dwell) const;
};

/// delta_ab with every counter increment weighted by sigmoid(dwell).
double delta_ab_tw(std::span<const InterleaveEvent> log, DwellSigmoid sigmoid = {});

/// (good - bad) / (good + same + bad).
double delta_gsb(std::size_t good, std::size_t same, std::size_t bad);

/// Two-sided exact sign test over decided (non-tie) events.
double sign_test_p_value(std::size_t wins_a, std::size_t wins_b);

struct ClickModel {
  /// Examination probability at 0-based rank r: 1 / (r + 1)^position_decay.
  double position_decay = 1.0;
  /// Click probability given examination: (2^grade - 1) / (2^max_grade - 1).
  double max_grade = 4.0;
  /// Dwell seconds ~ exp(N(log(base + per_grade * grade), sigma)).
  double dwell_base = 10.0;
  double dwell_per_grade = 15.0;
  double dwell_sigma = 0.5;
};

struct RankedList {
  std::uint64_t query_id = 0;
  std::vector<std::uint64_t> docs;
};

using GradeFn = std::function<double(std::uint64_t query_id, std::uint64_t doc_id)>;

/// Balanced interleaving of the two systems' lists for each query, with
/// `impressions_per_query` simulated impressions. An impression with clicks
/// produces one event credited to the system that ranks the highest clicked
/// result strictly higher; equal ranks are a tie. Impressions without clicks
/// and queries with an empty list are skipped.
InterleaveLog simulate_interleave(std::span<const RankedList> system_a,
                                  std::span<const RankedList> system_b, const GradeFn& grade,
                                  const ClickModel& model, std::uint64_t seed,
                                  std::size_t impressions_per_query = 1);

}  // namespace polyret
