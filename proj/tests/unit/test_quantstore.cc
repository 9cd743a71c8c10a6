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
#include <fstream>
#include <vector>

#include "doctest.h"
#include "fixtures.h"
#include "polyret/errors.h"
#include "polyret/quantstore.h"

using namespace polyret;
using polyret::testing::random_tensor;
using polyret::testing::TempDir;

namespace {

QuantizationParams unit_range(std::size_t d) {
  Tensor sample({2, d});
  for (std::size_t j = 0; j < d; ++j) {
    sample.at(0, j) = -1.0;
    sample.at(1, j) = 1.0;
  }
  return calibrate(sample).params;
}

}  // namespace

TEST_CASE("calibration takes per-dimension extremes") {
  Tensor s = Tensor::matrix(3, 2, {0.0, 5.0, -2.0, 5.0, 4.0, 5.0});
  Calibration c = calibrate(s);
  CHECK(c.params.s_min == std::vector<double>{-2.0, 5.0 - kCalibrationEpsilon});
  CHECK(c.params.s_max == std::vector<double>{4.0, 5.0 + kCalibrationEpsilon});
  CHECK(c.params.q[0] == 6.0 / 255.0);
  CHECK(c.widened == std::vector<std::size_t>{1});
  CHECK_THROWS_AS(calibrate(Tensor({0, 3})), ContractError);
}

TEST_CASE("interval index formula") {
  QuantizationParams p = unit_range(1);
  const double q = 2.0 / 255.0;
  CHECK(p.q[0] == q);
  CHECK(quantize(std::vector<double>{-1.0}, p)[0] == 0);
  CHECK(quantize(std::vector<double>{1.0}, p)[0] == 255);
  CHECK(quantize(std::vector<double>{-5.0}, p)[0] == 0);
  CHECK(quantize(std::vector<double>{5.0}, p)[0] == 255);
  CHECK(quantize(std::vector<double>{-1.0 + 2.5 * q}, p)[0] == 2);
  // Index 127 reconstructs the midpoint of the range.
  CHECK(dequantize(std::vector<std::uint8_t>{127}, p)[0] == 0.0);
  CHECK(dequantize(std::vector<std::uint8_t>{0}, p)[0] == doctest::Approx(-1.0 + q / 2));
  CHECK_THROWS_AS(quantize(std::vector<double>{0.0, 0.0}, p), ShapeError);
}

TEST_CASE("in-range round trip error is at most half an interval") {
  Rng rng(1);
  Tensor sample = random_tensor({200, 16}, rng, 2.0);
  QuantizationParams p = calibrate(sample).params;
  Tensor back = roundtrip_rows(sample, p);
  for (std::size_t r = 0; r < sample.rows(); ++r) {
    for (std::size_t j = 0; j < 16; ++j) {
      CHECK(std::abs(back.at(r, j) - sample.at(r, j)) <= p.q[j] / 2 * (1 + 1e-12));
    }
  }
}

TEST_CASE("embedding store persistence") {
  TempDir dir("store");
  QuantizationParams p = unit_range(3);
  EmbeddingStore store(p);
  store.put(42, quantize(std::vector<double>{0.1, -0.2, 0.9}, p));
  store.put(7, quantize(std::vector<double>{-1.0, 1.0, 0.0}, p));
  CHECK(store.size() == 2);
  CHECK(store.contains(7));
  CHECK(store.get(8) == nullptr);
  CHECK((*store.get(7))[1] == 255);
  CHECK_THROWS_AS(store.put(7, QuantizedVector(3)), ContractError);
  CHECK_THROWS_AS(store.put(9, QuantizedVector(2)), ShapeError);

  store.save(dir.file("store.bin"));
  EmbeddingStore loaded = EmbeddingStore::load(dir.file("store.bin"));
  CHECK(loaded == store);
  CHECK(loaded.params() == p);

  // Saving is deterministic.
  loaded.save(dir.file("again.bin"));
  CHECK(polyret::testing::read_bytes(dir.file("store.bin")) ==
        polyret::testing::read_bytes(dir.file("again.bin")));

  std::string bytes = polyret::testing::read_bytes(dir.file("store.bin"));
  {
    std::ofstream out(dir.file("cut.bin"), std::ios::binary);
    out << bytes.substr(0, bytes.size() - 2);
  }
  CHECK_THROWS_AS(EmbeddingStore::load(dir.file("cut.bin")), InputError);
  CHECK_THROWS_AS(EmbeddingStore::load(dir.file("absent.bin")), InputError);
}
