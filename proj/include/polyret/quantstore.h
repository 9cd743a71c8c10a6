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

// Per-dimension uint8 quantization of embeddings and the key-value store
// that holds quantized document embeddings.
//
//   Q_i    = (s_max_i - s_min_i) / 255
//   QI_i   = floor((r_i - s_min_i) / Q_i), clamped to [0, 255]
//   r~_i   = QI_i * Q_i + Q_i / 2 + s_min_i

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "polyret/tensor.h"

namespace polyret {

inline constexpr int kQuantLevels = 255;

struct QuantizationParams {
  std::vector<double> s_min;
  std::vector<double> s_max;
  std::vector<double> q;  // interval length per dimension

  std::size_t dim() const { return s_min.size(); }
  bool operator==(const QuantizationParams&) const = default;
};

struct Calibration {
  QuantizationParams params;
  /// Dimensions whose sample range was empty and got widened.
  std::vector<std::size_t> widened;
};

/// Half-width used to widen a constant dimension.
inline constexpr double kCalibrationEpsilon = 1e-6;

/// Per-dimension min/max over the rows of `sample` [n x d].
Calibration calibrate(const Tensor& sample);

using QuantizedVector = std::vector<std::uint8_t>;

QuantizedVector quantize(std::span<const double> v, const QuantizationParams& params);
std::vector<double> dequantize(std::span<const std::uint8_t> qv, const QuantizationParams& params);
/// quantize() then dequantize() on every row.
Tensor roundtrip_rows(const Tensor& rows, const QuantizationParams& params);

class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  explicit EmbeddingStore(QuantizationParams params) : params_(std::move(params)) {}

  const QuantizationParams& params() const { return params_; }
  std::size_t dim() const { return params_.dim(); }
  std::size_t size() const { return entries_.size(); }

  /// Throws ContractError on a duplicate id and ShapeError on a width mismatch.
  void put(std::uint64_t doc_id, QuantizedVector qv);
  /// nullptr when the id is absent.
  const QuantizedVector* get(std::uint64_t doc_id) const;
  bool contains(std::uint64_t doc_id) const { return entries_.count(doc_id) != 0; }
  const std::map<std::uint64_t, QuantizedVector>& entries() const { return entries_; }

  /// Header (magic, version, dim, count, params) then (doc_id, bytes)
  /// records in ascending id order.
  void save(const std::string& path) const;
  static EmbeddingStore load(const std::string& path);

  bool operator==(const EmbeddingStore&) const = default;

 private:
  QuantizationParams params_;
  std::map<std::uint64_t, QuantizedVector> entries_;
};

}  // namespace polyret
