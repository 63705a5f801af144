"""Run configuration: JSON schema, defaults and loading."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError

CHECKS = ("kahler", "solution", "extended", "nullity", "equivalence", "mobility", "f_poly", "cproj", "cone")

# documented defaults, keyed by record name
TOLERANCES = {
    "kahler.nabla_J": 1e-8,
    "kahler.nabla_omega": 1e-8,
    "kahler.dtau": 1e-4,
    "kahler.fd_christoffel": 1e-5,
    "kahler.fd_riemann": 1e-5,
    "solution.main": 1e-7,
    "solution.killing": 1e-8,
    "solution.integrability": 1e-7,
    "extended.B_spread": 1e-7,
    "extended.main": 1e-7,
    "extended.lambda": 1e-7,
    "extended.mu": 1e-4,
    "nullity.fibre_span": 1e-6,
    "nullity.j_invariance": 1e-8,
    "equivalence.commutator": 1e-6,
    "equivalence.extended": 1e-6,
    "equivalence.killing_nullity": 1e-6,
    "equivalence.eigen_gradients": 1e-6,
    "mobility.included": 1e-6,
    "f_poly.spread": 1e-6,
    "cproj.pattern": 1e-6,
    "cproj.roundtrip": 1e-8,
    "cone.nabla_J": 1e-7,
    "cone.cone_field": 1e-8,
    "cone.moment_killing": 1e-8,
    "cone.parallel": 1e-6,
    "cone.eigen_spread": 1e-7,
}

DEFAULT_POINTS = {"count": 20, "seed": 0}

_num = {"type": "number"}
_box = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_poly = {"type": "array", "items": _num, "minItems": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["instance"],
    "properties": {
        "instance": {"$ref": "#/$defs/instance"},
        "points": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "tolerances": {
            "type": "object",
            "propertyNames": {"enum": sorted(TOLERANCES)},
            "additionalProperties": {"type": "number", "exclusiveMinimum": 0},
        },
        "checks": {
            "type": "array",
            "items": {"enum": list(CHECKS) + ["all"]},
            "uniqueItems": True,
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"report": {"type": "string"}, "csv": {"type": "string"}},
        },
    },
    "$defs": {
        "instance": {
            "type": "object",
            "required": ["kind"],
            "oneOf": [
                {
                    "properties": {
                        "kind": {"const": "catalog"},
                        "name": {"type": "string"},
                        "params": {"type": "object"},
                    },
                    "required": ["name"],
                    "additionalProperties": False,
                },
                {
                    "properties": {
                        "kind": {"const": "SpaceForm"},
                        "m": {"type": "integer", "minimum": 1},
                        "c": _num,
                        "W": {"type": "array", "items": {"type": "array"}},
                        "half_width": {"type": "number", "exclusiveMinimum": 0},
                        "margin": {"type": "number", "minimum": 0, "maximum": 0.5},
                    },
                    "required": ["m", "c"],
                    "additionalProperties": False,
                },
                {
                    "properties": {
                        "kind": {"const": "HamiltonianBundle"},
                        "thetas": {"type": "array", "items": _poly, "minItems": 1},
                        "xi_boxes": {"type": "array", "items": _box, "minItems": 1},
                        "constants": {
                            "type": "array",
                            "items": {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["eta"],
                                "properties": {
                                    "eta": _num,
                                    "mult": {"type": "integer", "minimum": 1},
                                    "c": _num,
                                },
                            },
                        },
                        "t_box": _box,
                        "margin": {"type": "number", "minimum": 0, "maximum": 0.5},
                    },
                    "required": ["thetas", "xi_boxes"],
                    "additionalProperties": False,
                },
                {
                    "properties": {
                        "kind": {"const": "Orthotoric4D"},
                        "F1": _poly,
                        "F2": _poly,
                        "box": {"type": "array", "items": _box, "minItems": 2, "maxItems": 2},
                        "margin": {"type": "number", "minimum": 0, "maximum": 0.5},
                    },
                    "required": ["F1", "F2", "box"],
                    "additionalProperties": False,
                },
                {
                    "properties": {
                        "kind": {"const": "Product"},
                        "factors": {"type": "array", "items": {"$ref": "#/$defs/instance"}, "minItems": 1},
                        "eigenvalues": {"type": "array", "items": _num, "minItems": 1},
                    },
                    "required": ["factors", "eigenvalues"],
                    "additionalProperties": False,
                },
                {
                    "properties": {
                        "kind": {"const": "Scaled"},
                        "base": {"$ref": "#/$defs/instance"},
                        "s": _num,
                    },
                    "required": ["base", "s"],
                    "additionalProperties": False,
                },
            ],
        }
    },
}


def validate(cfg: dict) -> dict:
    """Validate and fill defaults; raises :class:`ConfigError`."""
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a JSON object")
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid configuration at {where}: {exc.message}") from exc
    out = copy.deepcopy(cfg)
    pts = dict(DEFAULT_POINTS)
    pts.update(out.get("points", {}))
    out["points"] = pts
    tol = dict(TOLERANCES)
    tol.update(out.get("tolerances", {}))
    out["tolerances"] = tol
    checks = out.get("checks", ["all"])
    out["checks"] = list(CHECKS) if "all" in checks else [c for c in CHECKS if c in checks]
    out.setdefault("output", {})
    return out


def load(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return validate(cfg)
