"""Run configuration: JSON schema validation and lossless round-tripping."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping

import jsonschema

from . import simulate as sm
from .errors import ValidationError
from .model import ProblemSpec
from .verify import VerifyOptions

DEFAULT_GRID = {"n_steps": 512, "n_paths": 100_000, "seed": 20240501}

_SECTION_DEFAULTS: dict[str, dict[str, Any]] = {
    "price": {"n_times": 11},
    "strategy": {"times": None, "ratios": [0.0, 0.1, 0.25, 0.5, 1.0]},
    "simulate": {"strategy": {"kind": "optimal"}, "dump_path": None, "dump_paths": 10},
    "verify": {
        "budget_fractions": [0.25, 0.5, 1.0],
        "budget_strategies": [
            {"kind": "optimal"}, {"kind": "merton"},
            {"kind": "constant", "value": 0.0}, {"kind": "constant", "value": 2.0},
        ],
        "ladder": [64, 128, 256, 512],
        "replication_paths": 20000,
        "replication_bound": 0.01,
        "probe_fractions": [0.0, 0.25, 0.5, 0.75],
        "probe_delta": None,
        "challengers": None,
        "chunk_paths": sm.DEFAULT_CHUNK_PATHS,
        "debug_lambda_scale": 1.0,
    },
    "sweep": {"axes": {}, "welfare": None},
}


def load_schema() -> dict:
    text = resources.files("endow_opt").joinpath("schemas/config.schema.json").read_text()
    return json.loads(text)


_VALIDATOR = jsonschema.Draft202012Validator(load_schema())


def _check_schema(data: Any) -> None:
    errors = sorted(_VALIDATOR.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ValidationError(f"config {path}: {err.message}", code="ConfigSchema", field=path)


@dataclass
class RunConfig:
    """Problem, grid and per-subcommand options."""

    spec: ProblemSpec
    grid: sm.GridConfig
    sections: dict = field(default_factory=lambda: copy.deepcopy(_SECTION_DEFAULTS))

    def section(self, name: str) -> dict:
        return self.sections[name]

    def to_dict(self) -> dict:
        return {**self.spec.to_dict(), "grid": self.grid.to_dict(), **copy.deepcopy(self.sections)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunConfig":
        _check_schema(data)
        spec = ProblemSpec.from_dict(data)
        grid = sm.GridConfig(**{**DEFAULT_GRID, **data.get("grid", {})})
        sections = copy.deepcopy(_SECTION_DEFAULTS)
        for name in sections:
            sections[name].update(copy.deepcopy(data.get(name, {})))
        return cls(spec, grid, sections)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}", code="ConfigJSON") from exc
        return cls.from_dict(data)

    def verify_options(self) -> VerifyOptions:
        v = self.sections["verify"]
        return VerifyOptions(
            budget_fractions=tuple(v["budget_fractions"]),
            budget_strategies=tuple(v["budget_strategies"]),
            ladder=tuple(v["ladder"]),
            replication_paths=v["replication_paths"],
            replication_bound=v["replication_bound"],
            probe_fractions=tuple(v["probe_fractions"]),
            probe_delta=v["probe_delta"],
            challengers=tuple(v["challengers"]) if v["challengers"] is not None else None,
            lambda_scale=v["debug_lambda_scale"],
            chunk_paths=v["chunk_paths"],
        )
