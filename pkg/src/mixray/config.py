"""Experiment configuration: JSON schema, validation and typed blocks."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass
from dataclasses import field as dc_field
from pathlib import Path
from typing import Any

import jsonschema

from .errors import MixrayError


class ConfigError(MixrayError):
    """The config file is missing, unreadable or fails schema validation."""


_SLOT = {
    "oneOf": [
        {"enum": ["identity", "star"]},
        {
            "type": "object",
            "properties": {
                "matrix": {
                    "type": "array", "minItems": 2, "maxItems": 2,
                    "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "number"}},
                }
            },
            "required": ["matrix"],
            "additionalProperties": False,
        },
    ]
}
_MIXING = {"type": "array", "items": _SLOT}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "mixray experiment",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "metric": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["euclidean", "constant_curvature", "custom"]},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "kappa": {"type": "number"},
                "family": {"enum": ["exp_linear", "bump"]},
                "params": {"type": "object"},
            },
        },
        "field": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"type": "string"},
                "params": {"type": "object"},
                "file": {"type": "string"},
            },
            "oneOf": [{"required": ["name"]}, {"required": ["file"]}],
        },
        "transform": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["geodesic", "mixing", "mixed", "transverse", "combined"]},
                "k": {"type": "integer", "minimum": 0},
                "l": {"type": "integer", "minimum": 0},
                "mixing": _MIXING,
            },
        },
        "rays": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_beta": {"type": "integer", "minimum": 1},
                "n_alpha": {"type": "integer", "minimum": 1},
                "h": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 4},
                "reg": {"type": "number", "minimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "maxiter": {"type": "integer", "minimum": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "svg": {"type": "boolean"},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "reduce": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "A": _MIXING,
                "A_tilde": _MIXING,
                "n_vectors": {"type": "integer", "minimum": 1},
                "probe": {"enum": ["dense", "svd", "power", "none"]},
            },
        },
        "decompose": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sizes": {"type": "array", "items": {"type": "integer", "minimum": 8}, "minItems": 1},
                "method": {"enum": ["poisson", "projection"]},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ranks": {"type": "array", "items": {"type": "integer", "minimum": 0, "maximum": 3}},
                "n_points": {"type": "integer", "minimum": 1},
                "n_rays": {"type": "integer", "minimum": 1},
                "n_pairs": {"type": "integer", "minimum": 1},
            },
        },
    },
}


@dataclass(frozen=True)
class RaysConfig:
    n_beta: int = 96
    n_alpha: int = 96
    h: float = 1e-3


@dataclass(frozen=True)
class GridConfig:
    N: int = 64
    reg: float = 1e-8
    tol: float = 1e-6
    maxiter: int = 5000


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    svg: bool = True


@dataclass(frozen=True)
class ReduceConfig:
    A: tuple = ("star",)
    A_tilde: tuple = ("identity",)
    n_vectors: int = 10
    probe: str = "dense"


@dataclass(frozen=True)
class DecomposeConfig:
    sizes: tuple = (33, 65, 129)
    method: str = "poisson"


@dataclass(frozen=True)
class VerifyConfig:
    ranks: tuple = (1, 2, 3)
    n_points: int = 1000
    n_rays: int = 50
    n_pairs: int = 20


@dataclass(frozen=True)
class ExperimentConfig:
    metric: dict = dc_field(default_factory=lambda: {"kind": "euclidean"})
    field: dict = dc_field(default_factory=lambda: {"name": "y_dx"})
    transform: dict = dc_field(default_factory=lambda: {"kind": "geodesic"})
    rays: RaysConfig = RaysConfig()
    grid: GridConfig = GridConfig()
    output: OutputConfig = OutputConfig()
    seed: int = 0
    reduce: ReduceConfig = ReduceConfig()
    decompose: DecomposeConfig = DecomposeConfig()
    verify: VerifyConfig = VerifyConfig()
    source: str | None = None

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("source")
        return d


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def validate(raw: Any) -> None:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None


def from_dict(raw: dict, source: str | None = None) -> ExperimentConfig:
    validate(raw)
    raw = copy.deepcopy(raw)
    return ExperimentConfig(
        metric=raw.get("metric", {"kind": "euclidean"}),
        field=raw.get("field", {"name": "y_dx"}),
        transform=raw.get("transform", {"kind": "geodesic"}),
        rays=RaysConfig(**raw.get("rays", {})),
        grid=GridConfig(**raw.get("grid", {})),
        output=OutputConfig(**raw.get("output", {})),
        seed=raw.get("seed", 0),
        reduce=ReduceConfig(**_tuples(raw.get("reduce", {}))),
        decompose=DecomposeConfig(**_tuples(raw.get("decompose", {}))),
        verify=VerifyConfig(**_tuples(raw.get("verify", {}))),
        source=source,
    )


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON ({path}): {exc}") from None
    cfg = from_dict(raw, str(path))
    field_file = cfg.field.get("file")
    if field_file and not Path(field_file).is_absolute():
        cfg = ExperimentConfig(**{**cfg.__dict__, "field": {"file": str(path.parent / field_file)}})
    return cfg
