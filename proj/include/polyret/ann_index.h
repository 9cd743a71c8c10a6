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

// Dot-product nearest-neighbour search, exact (flat) or over a k-means
// coarse quantizer (IVF).

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "polyret/search.h"
#include "polyret/tensor.h"

namespace polyret {

enum class AnnMode { kFlat, kIvf };

std::string ann_mode_name(AnnMode mode);
AnnMode parse_ann_mode(const std::string& name);

struct AnnParams {
  AnnMode mode = AnnMode::kFlat;
  std::size_t n_clusters = 100;
  std::size_t n_probe = 10;
  std::size_t kmeans_iterations = 25;
  std::uint64_t seed = 0;
};

class AnnIndex {
 public:
  AnnIndex() = default;

  /// `vectors` is [n x d]; row r belongs to doc_ids[r]. Throws ContractError
  /// on an empty set, duplicate ids, or n_clusters outside [1, n].
  static AnnIndex build(std::vector<std::uint64_t> doc_ids, Tensor vectors, const AnnParams& params);

  /// Top-k by dot product. Flat mode is exact; IVF scans the n_probe
  /// clusters whose centroids have the largest inner product with the query.
  SearchResult search(std::span<const double> query, std::size_t k) const;
  SearchResult search(std::span<const double> query, std::size_t k, std::size_t n_probe) const;

  std::size_t size() const { return doc_ids_.size(); }
  std::size_t dim() const { return vectors_.cols(); }
  const AnnParams& params() const { return params_; }
  const std::vector<std::uint64_t>& doc_ids() const { return doc_ids_; }
  const Tensor& vectors() const { return vectors_; }
  const Tensor& centroids() const { return centroids_; }
  /// Row indices per cluster, ascending.
  const std::vector<std::vector<std::uint32_t>>& lists() const { return lists_; }

  void save(const std::string& path) const;
  static AnnIndex load(const std::string& path);

  bool operator==(const AnnIndex& other) const;

 private:
  AnnParams params_;
  std::vector<std::uint64_t> doc_ids_;
  Tensor vectors_;
  Tensor centroids_;
  std::vector<std::vector<std::uint32_t>> lists_;
};

}  // namespace polyret
