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

#include "polyret/ann_index.h"

#include <algorithm>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "polyret/binio.h"
#include "polyret/errors.h"
#include "polyret/random.h"

namespace polyret {

namespace {

constexpr std::string_view kAnnMagic = "PRANNIDX";
constexpr std::uint32_t kAnnVersion = 1;

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::size_t nearest_centroid(std::span<const double> v, const Tensor& centroids) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double d = squared_distance(v, centroids.row(c));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

std::vector<ScoredDoc> top_k(std::vector<ScoredDoc> scored, std::size_t k) {
  const std::size_t keep = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                    ranks_before);
  scored.resize(keep);
  return scored;
}

}  // namespace

std::string ann_mode_name(AnnMode mode) { return mode == AnnMode::kFlat ? "flat" : "ivf"; }

AnnMode parse_ann_mode(const std::string& name) {
  if (name == "flat") return AnnMode::kFlat;
  if (name == "ivf") return AnnMode::kIvf;
  throw InputError("ann mode must be 'flat' or 'ivf', got '" + name + "'");
}

AnnIndex AnnIndex::build(std::vector<std::uint64_t> doc_ids, Tensor vectors, const AnnParams& params) {
  if (doc_ids.empty()) throw ContractError("build_ann: empty embedding set");
  if (vectors.rank() != 2 || vectors.rows() != doc_ids.size()) {
    throw ShapeError("build_ann: " + std::to_string(doc_ids.size()) + " ids for vectors " +
                     shape_string(vectors.shape()));
  }
  std::unordered_set<std::uint64_t> seen;
  for (auto id : doc_ids) {
    if (!seen.insert(id).second) throw ContractError("build_ann: duplicate doc_id " + std::to_string(id));
  }
  AnnIndex index;
  index.params_ = params;
  index.doc_ids_ = std::move(doc_ids);
  index.vectors_ = std::move(vectors);
  const std::size_t n = index.doc_ids_.size(), d = index.vectors_.cols();
  if (params.mode == AnnMode::kFlat) return index;

  const std::size_t kc = params.n_clusters;
  if (kc == 0 || kc > n) {
    throw ContractError("build_ann: n_clusters " + std::to_string(kc) + " outside [1, " +
                        std::to_string(n) + "]");
  }
  if (params.n_probe == 0) throw ContractError("build_ann: n_probe must be >= 1");

  // Seeded initialisation from distinct points.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(params.seed);
  rng.shuffle(order);
  Tensor centroids({kc, d});
  for (std::size_t c = 0; c < kc; ++c) {
    auto src = index.vectors_.row(order[c]);
    std::copy(src.begin(), src.end(), centroids.row(c).begin());
  }

  std::vector<std::size_t> assign(n, 0);
  for (std::size_t it = 0; it < params.kmeans_iterations; ++it) {
    for (std::size_t r = 0; r < n; ++r) assign[r] = nearest_centroid(index.vectors_.row(r), centroids);
    Tensor sums({kc, d});
    std::vector<std::size_t> counts(kc, 0);
    for (std::size_t r = 0; r < n; ++r) {
      auto row = index.vectors_.row(r);
      auto dst = sums.row(assign[r]);
      for (std::size_t j = 0; j < d; ++j) dst[j] += row[j];
      ++counts[assign[r]];
    }
    for (std::size_t c = 0; c < kc; ++c) {
      if (counts[c] == 0) continue;  // an empty cluster keeps its centroid
      auto dst = centroids.row(c);
      auto src = sums.row(c);
      for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] / static_cast<double>(counts[c]);
    }
  }
  index.lists_.assign(kc, {});
  for (std::size_t r = 0; r < n; ++r) {
    index.lists_[nearest_centroid(index.vectors_.row(r), centroids)].push_back(
        static_cast<std::uint32_t>(r));
  }
  index.centroids_ = std::move(centroids);
  return index;
}

SearchResult AnnIndex::search(std::span<const double> query, std::size_t k) const {
  return search(query, k, params_.n_probe);
}

SearchResult AnnIndex::search(std::span<const double> query, std::size_t k,
                              std::size_t n_probe) const {
  if (k == 0) throw ContractError("ann_search: k must be >= 1");
  if (query.size() != dim()) {
    throw ShapeError("ann_search: query width " + std::to_string(query.size()) +
                     " against index width " + std::to_string(dim()));
  }
  SearchResult result;
  result.flagged = k > size();
  std::vector<ScoredDoc> scored;
  if (params_.mode == AnnMode::kFlat) {
    scored.reserve(size());
    for (std::size_t r = 0; r < size(); ++r) scored.push_back({doc_ids_[r], dot(vectors_.row(r), query)});
  } else {
    std::vector<ScoredDoc> clusters;
    for (std::size_t c = 0; c < centroids_.rows(); ++c) {
      clusters.push_back({c, dot(centroids_.row(c), query)});
    }
    for (const auto& c : top_k(std::move(clusters), std::max<std::size_t>(n_probe, 1))) {
      for (std::uint32_t r : lists_[c.doc_id]) scored.push_back({doc_ids_[r], dot(vectors_.row(r), query)});
    }
  }
  result.hits = top_k(std::move(scored), k);
  return result;
}

void AnnIndex::save(const std::string& path) const {
  BinaryWriter w(path);
  w.magic(kAnnMagic);
  w.put<std::uint32_t>(kAnnVersion);
  w.put<std::uint8_t>(params_.mode == AnnMode::kFlat ? 0 : 1);
  w.put<std::uint64_t>(params_.n_clusters);
  w.put<std::uint64_t>(params_.n_probe);
  w.put<std::uint64_t>(params_.kmeans_iterations);
  w.put<std::uint64_t>(params_.seed);
  w.put<std::uint64_t>(size());
  w.put<std::uint64_t>(dim());
  w.put_array<std::uint64_t>(doc_ids_);
  w.put_array<double>(vectors_.data());
  w.put<std::uint64_t>(centroids_.rows());
  if (centroids_.rows() > 0) w.put_array<double>(centroids_.data());
  for (const auto& list : lists_) {
    w.put<std::uint64_t>(list.size());
    w.put_array<std::uint32_t>(list);
  }
  w.close();
}

AnnIndex AnnIndex::load(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kAnnMagic);
  if (const auto v = r.get<std::uint32_t>(); v != kAnnVersion) {
    throw InputError(path + ": unsupported index version " + std::to_string(v));
  }
  AnnIndex index;
  auto& p = index.params_;
  p.mode = r.get<std::uint8_t>() == 0 ? AnnMode::kFlat : AnnMode::kIvf;
  p.n_clusters = r.get<std::uint64_t>();
  p.n_probe = r.get<std::uint64_t>();
  p.kmeans_iterations = r.get<std::uint64_t>();
  p.seed = r.get<std::uint64_t>();
  const auto n = static_cast<std::size_t>(r.get<std::uint64_t>());
  const auto d = static_cast<std::size_t>(r.get<std::uint64_t>());
  index.doc_ids_.resize(n);
  r.get_array<std::uint64_t>(std::span<std::uint64_t>(index.doc_ids_));
  index.vectors_ = Tensor({n, d});
  r.get_array<double>(index.vectors_.data());
  const auto kc = static_cast<std::size_t>(r.get<std::uint64_t>());
  if (kc > 0) {
    index.centroids_ = Tensor({kc, d});
    r.get_array<double>(index.centroids_.data());
    index.lists_.resize(kc);
    for (auto& list : index.lists_) {
      const auto count = static_cast<std::size_t>(r.get<std::uint64_t>());
      if (count > n) throw InputError(path + ": corrupt posting list");
      list.resize(count);
      r.get_array<std::uint32_t>(std::span<std::uint32_t>(list));
    }
  }
  return index;
}

bool AnnIndex::operator==(const AnnIndex& o) const {
  return params_.mode == o.params_.mode && params_.n_clusters == o.params_.n_clusters &&
         params_.n_probe == o.params_.n_probe &&
         params_.kmeans_iterations == o.params_.kmeans_iterations && params_.seed == o.params_.seed &&
         doc_ids_ == o.doc_ids_ && vectors_.shape() == o.vectors_.shape() &&
         vectors_.storage() == o.vectors_.storage() && centroids_.storage() == o.centroids_.storage() &&
         lists_ == o.lists_;
}

}  // namespace polyret
