"""Scenario files: JSON schema, validation and construction of solver inputs."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .hamiltonians import NoiseHamiltonian, QuadraticHamiltonian, Table
from .paths import (DriverPath, TimeGrid, make_brownian, make_fbm, read_path_csv,
                    zero_path)

SCHEMA_VERSION = 1

_number = {"type": "number"}
_array = {"type": "array"}
_table = {"type": "object", "required": ["times", "values"], "additionalProperties": False,
          "properties": {"times": {"type": "array", "items": _number, "minItems": 2},
                         "values": {"type": "array", "minItems": 2}}}
_block = {"anyOf": [_number, _array, _table]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "roughquad scenario",
    "type": "object",
    "required": ["task", "horizon"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "task": {"enum": ["flow", "kernel", "propagate", "cauchy", "dispersive-sweep", "nls"]},
        "dim": {"type": "integer", "minimum": 1, "maximum": 3},
        "builtin": {"enum": ["free", "harmonic", "saddle", "rotating_trap"]},
        "omega": {"type": "number", "exclusiveMinimum": 0},
        "G": _block, "L": _block, "E": _block, "a": _block, "b": _block, "h0": _block,
        "K": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "builtin": {"enum": ["zero", "position", "angular_momentum"]},
                "g": _number, "axis": {"type": "integer", "minimum": 0, "maximum": 2},
                "G": _block, "L": _block, "E": _block, "V": _array,
            },
        },
        "mu": {"type": "number", "minimum": 0, "maximum": 1},
        "lambda": _number,
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "driver": {
            "type": "object", "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["brownian", "fbm", "zero", "custom-csv"]},
                "seed": {"type": "integer", "minimum": 0},
                "hurst": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "scale": {"type": "number", "minimum": 0},
                "file": {"type": "string"},
                "mollify": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "horizon": {
            "type": "object", "required": ["T"], "additionalProperties": False,
            "properties": {"t0": _number, "T": {"type": "number", "exclusiveMinimum": 0},
                           "n": {"type": "integer", "minimum": 2}},
        },
        "times": {"type": "object", "additionalProperties": False,
                  "properties": {"s": _number, "t": _number}},
        "grid": {"type": "object", "additionalProperties": False,
                 "properties": {"Lbox": {"type": "number", "exclusiveMinimum": 0},
                                "m": {"type": "integer", "minimum": 8}}},
        "state": {"type": "object", "additionalProperties": False,
                  "properties": {"center": {"type": "array", "items": _number}}},
        "kernel": {"type": "object", "additionalProperties": False,
                   "properties": {"kind": {"enum": ["hk", "mehler"]},
                                  "probe_half_width": {"type": "number", "exclusiveMinimum": 0},
                                  "probe_points": {"type": "integer", "minimum": 2}}},
        "eps_schedule": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                         "minItems": 2},
        "nls": {"type": "object", "additionalProperties": False,
                "properties": {"dt": {"type": "number", "exclusiveMinimum": 0},
                               "method": {"enum": ["splitstep", "duhamel"]},
                               "duration": {"type": "number", "exclusiveMinimum": 0}}},
        "sweep": {"type": "object", "additionalProperties": False,
                  "properties": {"dt_min": {"type": "number", "exclusiveMinimum": 0},
                                 "dt_max": {"type": "number", "exclusiveMinimum": 0}}},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "tolerances": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "flow_tol": {"type": "number", "exclusiveMinimum": 0},
                "nodes_per_interval": {"type": "integer", "minimum": 2},
                "max_step": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "gamma_min": {"type": "number", "minimum": 0},
                "tail_tol": {"type": "number", "exclusiveMinimum": 0},
                "bisect_tol": {"type": "number", "exclusiveMinimum": 0},
                "verify_tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "output_dir": {"type": "string"},
    },
}

DEFAULT_TOLERANCES = {"flow_tol": 1e-12, "nodes_per_interval": 8, "max_step": 0.05,
                      "max_iter": 50, "gamma_min": 1e-3, "tail_tol": 1e-6,
                      "bisect_tol": 1e-3, "verify_tol": 1e-8}


class ConfigError(ValueError):
    """Scenario file failed schema validation or is inconsistent."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


def validate_config(cfg: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(e.message, e.json_path)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _block(spec, path):
    if isinstance(spec, dict):
        return Table(spec["times"], spec["values"])
    try:
        return np.asarray(spec, dtype=float)
    except ValueError as exc:
        raise ConfigError("block must be numeric", path) from exc


@dataclass
class Scenario:
    """Validated scenario with the solver inputs it describes."""

    raw: dict

    @classmethod
    def load(cls, fname) -> "Scenario":
        with open(fname) as fh:
            try:
                cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(cfg, base=Path(fname).parent)

    @classmethod
    def from_dict(cls, cfg: dict, base=None) -> "Scenario":
        validate_config(cfg)
        scn = cls(cfg)
        scn._base = Path(base) if base is not None else Path(".")
        scn.hamiltonian()
        scn.noise()
        return scn

    @property
    def task(self) -> str:
        return self.raw["task"]

    @property
    def tol(self) -> dict:
        return {**DEFAULT_TOLERANCES, **self.raw.get("tolerances", {})}

    @property
    def flow_kw(self) -> dict:
        t = self.tol
        return {"tol": t["flow_tol"], "nodes_per_interval": t["nodes_per_interval"],
                "max_step": t["max_step"], "max_iter": t["max_iter"]}

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @property
    def dim(self) -> int:
        return self.hamiltonian().dim

    def hamiltonian(self) -> QuadraticHamiltonian:
        c = self.raw
        name = c.get("builtin")
        if name == "free":
            return QuadraticHamiltonian.free(c.get("dim", 1))
        if name == "harmonic":
            return QuadraticHamiltonian.harmonic(c.get("dim", 1), c.get("omega", 1.0))
        if name == "saddle":
            return QuadraticHamiltonian.saddle()
        if name == "rotating_trap":
            return QuadraticHamiltonian.rotating_trap()
        if "dim" not in c:
            raise ConfigError("'dim' is required without a builtin", "$.dim")
        blocks = {k: _block(c[k], f"$.{k}") for k in ("G", "L", "E", "a", "b", "h0") if k in c}
        try:
            return QuadraticHamiltonian(c["dim"], **blocks)
        except ValueError as exc:
            raise ConfigError(str(exc), "$") from exc

    def noise(self) -> NoiseHamiltonian:
        d = self.hamiltonian().dim
        k = self.raw.get("K", {"builtin": "zero"})
        name = k.get("builtin")
        if name == "zero":
            return NoiseHamiltonian.zero(d)
        if name == "position":
            return NoiseHamiltonian.position(d, k.get("g", 1.0))
        if name == "angular_momentum":
            return NoiseHamiltonian.angular_momentum(d, k.get("axis", 2), k.get("g", 1.0))
        try:
            return NoiseHamiltonian(d, **{kk: np.asarray(k[kk], dtype=float)
                                          for kk in ("G", "L", "E", "V") if kk in k})
        except ValueError as exc:
            raise ConfigError(str(exc), "$.K") from exc

    def grid(self) -> TimeGrid:
        h = self.raw["horizon"]
        return TimeGrid(h.get("t0", h["T"]), h["T"], h.get("n", 1025))

    def driver(self, seed: int | None = None, scale: float | None = None) -> DriverPath:
        spec = self.raw.get("driver", {"kind": "zero"})
        g = self.grid()
        kind = spec["kind"]
        seed = spec.get("seed", 0) if seed is None else seed
        if kind == "zero":
            beta = zero_path(g)
        elif kind == "brownian":
            beta = make_brownian(seed, g, spec.get("scale", 1.0) if scale is None else scale)
        elif kind == "fbm":
            if "hurst" not in spec:
                raise ConfigError("fbm driver needs 'hurst'", "$.driver.hurst")
            beta = make_fbm(spec["hurst"], seed, g)
        else:
            if "file" not in spec:
                raise ConfigError("custom-csv driver needs 'file'", "$.driver.file")
            beta = read_path_csv(self._base / spec["file"])
        if kind == "fbm" and scale is not None:
            beta = beta.scaled(scale)
        if "mu" in self.raw:
            beta = DriverPath(beta.grid, beta.values, self.raw["mu"], beta.smooth)
        if "mollify" in spec:
            from .paths import mollify
            beta = mollify(beta, spec["mollify"])
        return beta

    def times(self) -> tuple[float, float]:
        g = self.grid()
        tt = self.raw.get("times", {})
        s = tt.get("s", g.start)
        t = tt.get("t", min(g.end, s + 1.0))
        return float(t), float(s)

    def seeds(self) -> list[int]:
        return list(self.raw.get("seeds", [self.raw.get("driver", {}).get("seed", 0)]))
