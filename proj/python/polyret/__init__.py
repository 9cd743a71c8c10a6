# Copyright 2026 The polyret Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Python access to the polyret poly-encoder retrieval toolkit."""

from __future__ import annotations

import json
from typing import Any, Iterable, Mapping

from . import _core
from ._core import (
    ConfigError,
    ContractError,
    InputError,
    NumericError,
    PolyretError,
    ShapeError,
    calibrate,
    dcg_at_k,
    delta_ab,
    delta_gsb,
    dequantize,
    pnr,
    quantize,
    recall_at_k,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "Engine",
    "InputError",
    "NumericError",
    "PolyretError",
    "ShapeError",
    "calibrate",
    "dcg_at_k",
    "delta_ab",
    "delta_gsb",
    "dequantize",
    "pnr",
    "quantize",
    "recall_at_k",
    "resolve_config",
    "run",
]


def _overrides(config: Mapping[str, Any] | None, sets: Iterable[str]) -> tuple[str, list[str]]:
    return (json.dumps(dict(config)) if config else ""), list(sets)


def resolve_config(config: Mapping[str, Any] | None = None, sets: Iterable[str] = ()) -> dict:
    """The full validated run configuration after applying `config` and `path=value` overrides."""
    return json.loads(_core.resolve_config(*_overrides(config, sets)))


def run(command: str, config: Mapping[str, Any] | None = None, sets: Iterable[str] = ()) -> str:
    """Runs one of gen-data, train, build-index, quantize or eval; returns its log or report."""
    return _core.run_command(command, *_overrides(config, sets))


class Engine:
    """Online retrieval over a built run directory."""

    def __init__(self, data_dir: str, run_dir: str) -> None:
        self._engine = _core.Engine(data_dir, run_dir)

    def query(self, text: str, k: int = 10) -> list[dict]:
        return [json.loads(r) for r in self._engine.query_json(text, k)]

    def embed_query(self, text: str) -> list[float]:
        return self._engine.embed_query(text)

    def title(self, doc_id: int) -> str:
        return self._engine.title(doc_id)
