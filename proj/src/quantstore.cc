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

#include "polyret/quantstore.h"

#include <algorithm>
#include <cmath>

#include "polyret/binio.h"
#include "polyret/errors.h"

namespace polyret {

namespace {

constexpr std::string_view kStoreMagic = "PRQSTORE";
constexpr std::uint32_t kStoreVersion = 1;

void require_dim(std::size_t got, const QuantizationParams& params, const char* what) {
  if (got != params.dim()) {
    throw ShapeError(std::string(what) + ": vector of width " + std::to_string(got) +
                     " against parameters of width " + std::to_string(params.dim()));
  }
}

}  // namespace

Calibration calibrate(const Tensor& sample) {
  if (sample.rank() != 2 || sample.rows() == 0) {
    throw ContractError("calibrate: need a non-empty [n x d] sample");
  }
  const std::size_t n = sample.rows(), d = sample.cols();
  Calibration out;
  auto& p = out.params;
  p.s_min.assign(sample.row(0).begin(), sample.row(0).end());
  p.s_max = p.s_min;
  for (std::size_t r = 1; r < n; ++r) {
    auto row = sample.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      p.s_min[j] = std::min(p.s_min[j], row[j]);
      p.s_max[j] = std::max(p.s_max[j], row[j]);
    }
  }
  p.q.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    if (!(p.s_max[j] > p.s_min[j])) {
      p.s_min[j] -= kCalibrationEpsilon;
      p.s_max[j] += kCalibrationEpsilon;
      out.widened.push_back(j);
    }
    p.q[j] = (p.s_max[j] - p.s_min[j]) / kQuantLevels;
  }
  return out;
}

QuantizedVector quantize(std::span<const double> v, const QuantizationParams& params) {
  require_dim(v.size(), params, "quantize");
  QuantizedVector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    // At r == s_max the exact quotient is L; rounding may land just below it.
    if (v[i] >= params.s_max[i]) {
      out[i] = kQuantLevels;
      continue;
    }
    const double qi = std::floor((v[i] - params.s_min[i]) / params.q[i]);
    out[i] = static_cast<std::uint8_t>(std::clamp(qi, 0.0, static_cast<double>(kQuantLevels)));
  }
  return out;
}

std::vector<double> dequantize(std::span<const std::uint8_t> qv, const QuantizationParams& params) {
  require_dim(qv.size(), params, "dequantize");
  std::vector<double> out(qv.size());
  for (std::size_t i = 0; i < qv.size(); ++i) {
    out[i] = qv[i] * params.q[i] + params.q[i] / 2 + params.s_min[i];
  }
  return out;
}

Tensor roundtrip_rows(const Tensor& rows, const QuantizationParams& params) {
  Tensor out(rows.shape());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    auto back = dequantize(quantize(rows.row(r), params), params);
    std::copy(back.begin(), back.end(), out.row(r).begin());
  }
  return out;
}

void EmbeddingStore::put(std::uint64_t doc_id, QuantizedVector qv) {
  require_dim(qv.size(), params_, "EmbeddingStore::put");
  if (!entries_.emplace(doc_id, std::move(qv)).second) {
    throw ContractError("EmbeddingStore::put: duplicate doc_id " + std::to_string(doc_id));
  }
}

const QuantizedVector* EmbeddingStore::get(std::uint64_t doc_id) const {
  auto it = entries_.find(doc_id);
  return it == entries_.end() ? nullptr : &it->second;
}

void EmbeddingStore::save(const std::string& path) const {
  BinaryWriter w(path);
  w.magic(kStoreMagic);
  w.put<std::uint32_t>(kStoreVersion);
  w.put<std::uint64_t>(dim());
  w.put<std::uint64_t>(entries_.size());
  w.put<std::uint32_t>(kQuantLevels);
  w.put_array<double>(params_.s_min);
  w.put_array<double>(params_.s_max);
  w.put_array<double>(params_.q);
  for (const auto& [id, bytes] : entries_) {
    w.put<std::uint64_t>(id);
    w.put_array<std::uint8_t>(bytes);
  }
  w.close();
}

EmbeddingStore EmbeddingStore::load(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kStoreMagic);
  if (const auto v = r.get<std::uint32_t>(); v != kStoreVersion) {
    throw InputError(path + ": unsupported store version " + std::to_string(v));
  }
  const auto dim = static_cast<std::size_t>(r.get<std::uint64_t>());
  const auto count = static_cast<std::size_t>(r.get<std::uint64_t>());
  if (r.get<std::uint32_t>() != kQuantLevels) throw InputError(path + ": unexpected level count");
  QuantizationParams params;
  for (auto* field : {&params.s_min, &params.s_max, &params.q}) {
    field->resize(dim);
    r.get_array<double>(std::span<double>(*field));
  }
  EmbeddingStore store(std::move(params));
  std::uint64_t previous = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const auto id = r.get<std::uint64_t>();
    if (i > 0 && id <= previous) throw InputError(path + ": records not in ascending id order");
    previous = id;
    QuantizedVector bytes(dim);
    r.get_array<std::uint8_t>(std::span<std::uint8_t>(bytes));
    store.entries_.emplace_hint(store.entries_.end(), id, std::move(bytes));
  }
  return store;
}

}  // namespace polyret
