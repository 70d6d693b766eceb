"""Versioned JSON run configurations.

A configuration names one experiment and carries everything it needs: the
phase-space grid, truncation order, h sweep, model parameters and the
tolerances of its assertions.  Validation happens before any computation and
reports every offending path.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from jsonschema import Draft202012Validator

from .errors import ConfigError

SCHEMA_VERSION = 1

EXPERIMENTS = ("moyal_check", "projector_build", "orthogonality", "factorization",
               "magnetic_well", "degennes", "functional_calculus")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_RANGE = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_ORDER = {"oneOf": [{"type": "integer", "minimum": 0},
                    {"type": "string", "pattern": r"^\d+(/[1-9]\d*)?$"}]}
_EXPR = {"oneOf": [{"type": "string", "minLength": 1}, {"type": "number"}]}
_GAMMA = {"oneOf": [{"type": "number"}, {"const": "inf"}]}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_PHASE_GRID = _obj({
    "kind": {"enum": ["periodic", "clamped"]},
    "x_range": _RANGE,
    "xi_range": _RANGE,
    "n_x": {"type": "integer", "minimum": 16, "maximum": 1024},
    "n_xi": {"type": "integer", "minimum": 16, "maximum": 1024},
    "fd_order": {"enum": [4, 6, 8]},
    "margin_cells": {"type": "integer", "minimum": 0},
}, ["kind", "x_range", "xi_range", "n_x", "n_xi"])

_WELL_GRID = _obj({
    "nodes": {"type": "integer", "minimum": 16, "maximum": 512},
    "scale": {"type": "number", "minimum": 1},
    "fd_order": {"enum": [4, 6, 8]},
    "margin_cells": {"type": "integer", "minimum": 0},
})

_WELL_MODEL = {
    "B": _EXPR, "V": _EXPR, "alpha": _EXPR,
    "J": {"type": "integer", "minimum": 0, "maximum": 4},
    "n_base": {"type": "integer", "minimum": 16, "maximum": 1024},
}

_MODELS = {
    "moyal_check": _obj({
        "gaussian_width": _POS,
    }),
    "projector_build": _obj({
        "name": {"enum": ["smooth_two_level", "rotating_two_level"]},
        "coupling": _NUM,
        "eps": _NUM,
        "method": {"enum": ["eigen", "contour"]},
    }, ["name"]),
    "orthogonality": _obj({
        "name": {"const": "three_level"},
        "bands": {"type": "array", "minItems": 2, "maxItems": 2,
                  "items": {"type": "array", "items": {"type": "integer", "minimum": 0},
                            "minItems": 2, "maxItems": 2}},
        "delta": _POS,
    }, ["name"]),
    "factorization": _obj({
        "name": {"enum": ["rotating_two_level", "smooth_two_level"]},
        "eps": _NUM,
        "coupling": _NUM,
        "gauge": {"enum": ["equal", "left"]},
        "x_independent_check": {"type": "boolean"},
    }, ["name"]),
    "magnetic_well": _obj({**_WELL_MODEL,
                           "window_C": _POS,
                           "n_pairs": {"type": "integer", "minimum": 1, "maximum": 32}}),
    "functional_calculus": _obj({**_WELL_MODEL, "chi_eps": _POS}),
    "degennes": _obj({
        "gammas": {"type": "array", "items": _GAMMA, "minItems": 1},
        "sigmas": {"type": "array", "items": _NUM, "minItems": 1},
        "n_levels": {"type": "integer", "minimum": 1, "maximum": 4},
        "threshold_levels": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 3}},
        "windows": {"type": "array", "items": _RANGE},
        "window_gammas": {"type": "array", "items": _GAMMA},
    }),
}

_TOLERANCE_DEFAULTS = {
    "moyal_check": {"commutation": 1e-12, "associativity": 1e-8, "adjoint": 1e-10,
                    "gaussian_first_order": 1e-8},
    "projector_build": {"slope_margin": 0.8, "compatibility": 1e-8, "min_decades": 1.8},
    "orthogonality": {"slope_margin": 0.8, "min_decades": 1.8},
    "factorization": {"slope_margin": 0.8, "compatibility": 1e-8, "min_decades": 1.8,
                      "selfadjoint_difference": 1e-9, "x_independent_identity": 1e-8},
    "magnetic_well": {"leading_factor": 0.5, "slope_min": 2.3, "second_order_rel": 0.05,
                      "min_decades": 0.9},
    "functional_calculus": {"slope_margin": 0.8, "min_decades": 0.6},
    "degennes": {"anchor": 1e-6, "theta0_reference": 0.590106, "theta0": 1e-4},
}

_MODEL_DEFAULTS = {
    "moyal_check": {"gaussian_width": 1.0},
    "projector_build": {"method": "eigen"},
    "orthogonality": {"bands": [[0, 0], [1, 1]], "delta": 0.5},
    "factorization": {"gauge": "equal", "x_independent_check": True},
    "magnetic_well": {"B": "1 + (q1**2 + q2**2)/4", "V": "0", "alpha": "0", "J": 2,
                      "n_base": 256, "window_C": 2.5, "n_pairs": 4},
    "functional_calculus": {"B": "1 + (q1**2 + q2**2)/4", "V": "0", "alpha": "0", "J": 2,
                            "n_base": 256, "chi_eps": 0.1},
    "degennes": {"gammas": [0, 1, "inf"], "sigmas": [0.0], "n_levels": 2,
                 "threshold_levels": [1, 2], "windows": [], "window_gammas": [0]},
}

_NEEDS_PHASE_GRID = ("moyal_check", "projector_build", "orthogonality", "factorization")
_WELL = ("magnetic_well", "functional_calculus")

_BASE = _obj({
    "schema_version": {"const": SCHEMA_VERSION},
    "experiment": {"enum": list(EXPERIMENTS)},
    "seed": {"type": "integer", "minimum": 0},
    "grid": {"type": "object"},
    "fiber_m": {"type": "integer", "minimum": 4, "maximum": 64},
    "K": {"oneOf": [_ORDER, {"type": "array", "items": _ORDER, "minItems": 1}]},
    "h_values": {"type": "array", "items": _POS, "minItems": 2, "uniqueItems": True},
    "model": {"type": "object"},
    "tolerances": {"type": "object", "additionalProperties": _POS},
    "output_dir": {"type": "string"},
}, ["schema_version", "experiment"])


def _errors(schema: dict, doc, prefix: str = "$") -> list[str]:
    out = []
    for err in sorted(Draft202012Validator(schema).iter_errors(doc), key=lambda e: list(e.path)):
        path = prefix + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.path)
        out.append(f"{path}: {err.message}")
    return out


def _as_order(value) -> Fraction:
    return Fraction(value) if isinstance(value, str) else Fraction(int(value))


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with defaults filled in."""

    experiment: str
    seed: int
    grid: dict | None
    fiber_m: int | None
    K: tuple
    h_values: tuple
    model: dict
    tolerances: dict
    output_dir: str | None = None

    @property
    def single_K(self) -> Fraction:
        if len(self.K) != 1:
            raise ConfigError(f"$.K: experiment {self.experiment} takes a single order")
        return self.K[0]

    def to_dict(self) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "experiment": self.experiment,
            "seed": self.seed,
            "grid": self.grid,
            "fiber_m": self.fiber_m,
            "K": [str(k) for k in self.K],
            "h_values": list(self.h_values),
            "model": self.model,
            "tolerances": self.tolerances,
        }
        return copy.deepcopy(d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def validate(doc) -> RunConfig:
    """Check a parsed document against the schema and the module preconditions."""
    errs = _errors(_BASE, doc)
    if errs:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errs))
    exp = doc["experiment"]
    model = {**_MODEL_DEFAULTS.get(exp, {}), **doc.get("model", {})}
    errs += _errors(_MODELS[exp], model, "$.model")
    tol = {**_TOLERANCE_DEFAULTS[exp], **doc.get("tolerances", {})}
    unknown = sorted(set(tol) - set(_TOLERANCE_DEFAULTS[exp]))
    errs += [f"$.tolerances.{k}: unknown tolerance for {exp}" for k in unknown]

    grid = doc.get("grid")
    if exp in _NEEDS_PHASE_GRID:
        if grid is None:
            errs.append("$.grid: required for " + exp)
        else:
            grid = {"fd_order": 6, **grid}
            if grid.get("kind") == "clamped":
                grid.setdefault("margin_cells", 8)
            errs += _errors(_PHASE_GRID, grid, "$.grid")
            for key in ("x_range", "xi_range"):
                r = grid.get(key)
                if isinstance(r, list) and len(r) == 2 and all(isinstance(v, (int, float)) for v in r) \
                        and not r[0] < r[1]:
                    errs.append(f"$.grid.{key}: lower end must be below upper end")
    elif exp in _WELL:
        grid = {"nodes": 64, "scale": 1.25, "fd_order": 6, "margin_cells": 6, **(grid or {})}
        errs += _errors(_WELL_GRID, grid, "$.grid")
    elif grid is not None:
        errs.append(f"$.grid: not used by {exp}")

    fiber_m = doc.get("fiber_m")
    if exp in _WELL:
        fiber_m = 12 if fiber_m is None else fiber_m
        J = model.get("J")
        if isinstance(J, int) and isinstance(fiber_m, int) and fiber_m // 2 < J + 2:
            errs.append(f"$.fiber_m: ladder of size {fiber_m} cannot hold monomials of degree {J + 2}")
    elif fiber_m is not None:
        errs.append(f"$.fiber_m: not used by {exp}")

    raw_K = doc.get("K", 1)
    K = tuple(_as_order(k) for k in (raw_K if isinstance(raw_K, list) else [raw_K]))
    lattice = 2 if exp in _WELL else 1
    for i, k in enumerate(K):
        if (k * lattice).denominator != 1:
            errs.append(f"$.K[{i}]: order {k} is not on the exponent lattice (1/{lattice})Z")
    if exp not in ("projector_build",) and len(K) != 1:
        errs.append(f"$.K: {exp} takes a single truncation order")

    h_values = doc.get("h_values")
    if exp in ("moyal_check", "degennes"):
        h_values = h_values or []
    elif h_values is None:
        errs.append(f"$.h_values: required for {exp}")
    elif exp in _NEEDS_PHASE_GRID and len(h_values) < 5:
        errs.append("$.h_values: slope fits need at least 5 values")
    if exp in _WELL and h_values:
        for i, h in enumerate(h_values):
            if isinstance(h, (int, float)) and h >= 0.25:
                errs.append(f"$.h_values[{i}]: h = {h} too large for the two-scale model")
    if exp == "degennes":
        for i, w in enumerate(model.get("windows", [])):
            if isinstance(w, list) and len(w) == 2 and not w[0] <= w[1]:
                errs.append(f"$.model.windows[{i}]: empty window")

    if errs:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errs))
    return RunConfig(exp, int(doc.get("seed", 0)), grid, fiber_m, K,
                     tuple(float(h) for h in h_values), model, tol, doc.get("output_dir"))


def load(path) -> RunConfig:
    """Read and validate a configuration file."""
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: not valid JSON ({exc})") from exc
    return validate(doc)
