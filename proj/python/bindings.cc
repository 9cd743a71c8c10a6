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

// polyret._core: commands, the query engine, metrics and quantization.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <string>
#include <vector>

#include "polyret/commands.h"
#include "polyret/config.h"
#include "polyret/engine.h"
#include "polyret/errors.h"
#include "polyret/metrics.h"
#include "polyret/quantstore.h"

namespace py = pybind11;
using namespace polyret;

namespace {

RunConfig resolve(const std::string& config_json, const std::vector<std::string>& overrides) {
  RunConfig c = config_json.empty() ? RunConfig{} : RunConfig::from_json(config_json);
  c = apply_overrides(c, overrides);
  c.validate();
  return c;
}

Tensor to_tensor(py::array_t<double, py::array::c_style | py::array::forcecast> a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array, got " + std::to_string(a.ndim()) + " dimensions");
  Tensor t({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))});
  std::copy(a.data(), a.data() + a.size(), t.data().begin());
  return t;
}

QuantizationParams params_from(std::vector<double> s_min, std::vector<double> s_max, std::vector<double> q) {
  if (s_min.size() != s_max.size() || s_min.size() != q.size())
    throw ShapeError("s_min, s_max and q must have equal length");
  return {std::move(s_min), std::move(s_max), std::move(q)};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Poly-encoder semantic retrieval toolkit";

  auto base = py::register_exception<Error>(m, "PolyretError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  m.def(
      "resolve_config",
      [](const std::string& config_json, const std::vector<std::string>& overrides) {
        return resolve(config_json, overrides).to_json();
      },
      py::arg("config_json") = "", py::arg("overrides") = std::vector<std::string>{},
      "Validated run configuration as JSON, with dotted path=value overrides applied.");

  m.def(
      "run_command",
      [](const std::string& name, const std::string& config_json, const std::vector<std::string>& overrides) {
        const RunConfig c = resolve(config_json, overrides);
        std::ostringstream out;
        py::gil_scoped_release release;
        if (name == "gen-data") command_gen_data(c, out);
        else if (name == "train") command_train(c, out);
        else if (name == "build-index") command_build_index(c, out);
        else if (name == "quantize") command_quantize(c, out);
        else if (name == "eval") command_eval(c, out);
        else throw ContractError("unknown command '" + name + "'");
        return out.str();
      },
      py::arg("name"), py::arg("config_json") = "", py::arg("overrides") = std::vector<std::string>{},
      "Runs gen-data, train, build-index, quantize or eval and returns its output.");

  py::class_<Engine>(m, "Engine")
      .def(py::init([](const std::string& data_dir, const std::string& run_dir) {
             return Engine::open(data_dir, run_dir, RetrievalConfig{});
           }),
           py::arg("data_dir"), py::arg("run_dir"))
      .def(
          "query_json",
          [](const Engine& e, const std::string& text, std::size_t k) {
            std::vector<std::string> out;
            for (const auto& r : e.query(text, k).ranked.results) out.push_back(e.result_json(r));
            return out;
          },
          py::arg("text"), py::arg("k") = 10, "Ranked results as JSON objects, best first.")
      .def(
          "embed_query",
          [](const Engine& e, const std::string& text) { return e.query(text, 0).embedding; },
          py::arg("text"))
      .def("title", &Engine::title, py::arg("doc_id"));

  m.def(
      "pnr",
      [](const std::vector<double>& labels, const std::vector<double>& scores, double cap) {
        if (labels.size() != scores.size()) throw ShapeError("labels and scores differ in length");
        EvalRecord rec{0, {}};
        for (std::size_t i = 0; i < labels.size(); ++i) rec.docs.push_back({i, labels[i], scores[i]});
        const QueryPnr q = pnr_query(rec, cap);
        return py::dict(py::arg("pnr") = q.pnr, py::arg("concordant") = q.concordant,
                        py::arg("discordant") = q.discordant, py::arg("capped") = q.capped);
      },
      py::arg("labels"), py::arg("scores"), py::arg("cap") = kDefaultPnrCap);
  m.def(
      "recall_at_k",
      [](const std::vector<std::uint64_t>& retrieved, const std::vector<std::uint64_t>& truth, std::size_t k) {
        return recall_at_k(retrieved, truth, k);
      },
      py::arg("retrieved"), py::arg("truth"), py::arg("k") = 10);
  m.def(
      "dcg_at_k", [](const std::vector<double>& grades, std::size_t k) { return dcg_at_k(grades, k).value; },
      py::arg("grades"), py::arg("k") = 4);
  m.def(
      "delta_ab",
      [](std::size_t wins_a, std::size_t wins_b, std::size_t ties) {
        InterleaveLog log;
        for (std::size_t i = 0; i < wins_a; ++i) log.push_back({0, Winner::kA, 0.0});
        for (std::size_t i = 0; i < wins_b; ++i) log.push_back({0, Winner::kB, 0.0});
        for (std::size_t i = 0; i < ties; ++i) log.push_back({0, Winner::kTie, 0.0});
        return delta_ab(log);
      },
      py::arg("wins_a"), py::arg("wins_b"), py::arg("ties"));
  m.def("delta_gsb", &delta_gsb, py::arg("good"), py::arg("same"), py::arg("bad"));

  m.def(
      "calibrate",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> sample) {
        const Calibration c = calibrate(to_tensor(sample));
        return py::make_tuple(c.params.s_min, c.params.s_max, c.params.q);
      },
      py::arg("sample"), "Per-dimension (s_min, s_max, Q) over the rows of a 2-d array.");
  m.def(
      "quantize",
      [](const std::vector<double>& v, std::vector<double> s_min, std::vector<double> s_max, std::vector<double> q) {
        return quantize(v, params_from(std::move(s_min), std::move(s_max), std::move(q)));
      },
      py::arg("vector"), py::arg("s_min"), py::arg("s_max"), py::arg("q"));
  m.def(
      "dequantize",
      [](const std::vector<std::uint8_t>& codes, std::vector<double> s_min, std::vector<double> s_max,
         std::vector<double> q) {
        return dequantize(codes, params_from(std::move(s_min), std::move(s_max), std::move(q)));
      },
      py::arg("codes"), py::arg("s_min"), py::arg("s_max"), py::arg("q"));
}
