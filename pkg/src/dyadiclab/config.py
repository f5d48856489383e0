"""Experiment configuration: JSON schema, defaults and loading."""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Mapping, Optional

import jsonschema

MAX_CELL_EXPONENT = 24


class ConfigError(ValueError):
    """A configuration problem; ``path`` names the offending field."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


_WEIGHT = {
    "oneOf": [
        {"type": "object", "required": ["kind"], "additionalProperties": False,
         "properties": {"kind": {"const": "constant"}, "value": {"type": "number", "exclusiveMinimum": 0}}},
        {"type": "object", "required": ["kind", "alpha"], "additionalProperties": False,
         "properties": {"kind": {"const": "power"},
                        "alpha": {"type": "number", "exclusiveMinimum": -0.95, "exclusiveMaximum": 0.95}}},
        {"type": "object", "required": ["kind", "values"], "additionalProperties": False,
         "properties": {"kind": {"const": "cells"},
                        "values": {"type": "array", "minItems": 1,
                                   "items": {"type": ["number", "string"]}}}},
        {"type": "object", "required": ["kind"], "additionalProperties": False,
         "properties": {"kind": {"const": "random"}, "seed": {"type": "integer", "minimum": 0},
                        "log_amplitude": {"type": "number", "minimum": 0}}},
        {"type": "object", "required": ["kind", "of"], "additionalProperties": False,
         "properties": {"kind": {"const": "inverse"}, "of": {"type": "string"}}},
    ]
}

_CUBE = {
    "type": "object", "required": ["level", "pos"], "additionalProperties": False,
    "properties": {"level": {"type": "integer", "minimum": 0},
                   "pos": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
}

_SPARSE = {
    "oneOf": [
        {"type": "object", "required": ["kind", "cubes"], "additionalProperties": False,
         "properties": {"kind": {"const": "explicit"}, "cubes": {"type": "array", "items": _CUBE}}},
        {"type": "object", "required": ["kind"], "additionalProperties": False,
         "properties": {"kind": {"const": "random"}, "seed": {"type": "integer", "minimum": 0},
                        "target_lambda": {"type": "number", "minimum": 1}}},
        {"type": "object", "required": ["kind"], "additionalProperties": False,
         "properties": {"kind": {"const": "chain"}, "length": {"type": "integer", "minimum": 1}}},
    ]
}

_FUNCTION = {
    "oneOf": [
        {"type": "object", "required": ["kind"], "additionalProperties": False,
         "properties": {"kind": {"const": "random"}, "seed": {"type": "integer", "minimum": 0},
                        "sigma": {"type": "number", "exclusiveMinimum": 0}}},
        {"type": "object", "required": ["kind", "values"], "additionalProperties": False,
         "properties": {"kind": {"const": "cells"}, "values": {"type": "array", "minItems": 1,
                                                                "items": {"type": ["number", "string"]}}}},
        {"type": "object", "required": ["kind", "value"], "additionalProperties": False,
         "properties": {"kind": {"const": "constant"}, "value": {"type": ["number", "string"]}}},
        {"type": "object", "required": ["kind"], "additionalProperties": False,
         "properties": {"kind": {"const": "sparse_bmo"}, "weight": {"type": "string"},
                        "noise": {"type": "number", "minimum": 0}}},
        {"type": "object", "required": ["kind", "name"], "additionalProperties": False,
         "properties": {"kind": {"const": "weight"}, "name": {"type": "string"}}},
        {"type": "object", "required": ["kind", "cube"], "additionalProperties": False,
         "properties": {"kind": {"const": "haar"}, "cube": _CUBE,
                        "sig": {"type": "array", "items": {"enum": [0, 1]}}}},
    ]
}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {"type": "object", "required": ["n", "D"], "additionalProperties": False,
                  "properties": {"n": {"type": "integer", "minimum": 1, "maximum": 4},
                                 "D": {"type": "integer", "minimum": 1, "maximum": 30}}},
        "mode": {"enum": ["rational", "float"]},
        "seed": {"type": "integer", "minimum": 0},
        "draws": {"type": "integer", "minimum": 1},
        "weights": {"type": "object", "additionalProperties": _WEIGHT},
        "sparse": _SPARSE,
        "functions": {"type": "object", "additionalProperties": _FUNCTION},
        "operation": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "p": {"type": "number", "exclusiveMinimum": 1},
                "q": {"type": "number", "exclusiveMinimum": 1},
                "lambda": {"type": "number", "exclusiveMinimum": 1},
                "algorithm": {"enum": ["paraproduct", "bilinear", "oscillation"]},
                "q0": _CUBE,
                "runs": {"type": "integer", "minimum": 1},
                "bloom_draws": {"type": "integer", "minimum": 0},
                "alphas": {"type": "array", "minItems": 1,
                           "items": {"type": "number", "exclusiveMinimum": -0.95, "exclusiveMaximum": 0.95}},
                "operator": {"enum": ["identity", "Pi", "PiStar", "Gamma", "sparse", "composition", "square"]},
                "symbol": {"type": "string"},
                "method": {"enum": ["auto", "power", "svd", "nonlinear"]},
                "csv": {"type": "boolean"},
            },
        },
        "output": {"type": "object", "additionalProperties": False,
                   "properties": {"dir": {"type": "string"}, "csv": {"type": "boolean"}}},
    },
}

DEFAULTS: dict[str, dict] = {
    "identities": {"model": {"n": 1, "D": 4}, "mode": "rational", "seed": 0, "draws": 50},
    "bounds": {"model": {"n": 1, "D": 8}, "mode": "float", "seed": 0, "draws": 200,
               "operation": {"bloom_draws": 0}},
    "dominate": {"model": {"n": 1, "D": 8}, "mode": "float", "seed": 0,
                 "weights": {"w": {"kind": "power", "alpha": 0.5}},
                 "sparse": {"kind": "random", "target_lambda": 2.0},
                 "functions": {"b": {"kind": "sparse_bmo", "weight": "w", "noise": 0.1}, "f": {"kind": "random"}},
                 "operation": {"algorithm": "paraproduct", "lambda": 2.0, "runs": 1}},
    "sharpness": {"model": {"n": 1, "D": 10}, "mode": "float", "seed": 0,
                  "operation": {"alphas": [0.3, -0.3, 0.6, -0.6, 0.8, -0.8]}},
    "norm": {"model": {"n": 1, "D": 4}, "mode": "float", "seed": 0,
             "weights": {"mu": {"kind": "constant"}, "lambda": {"kind": "constant"}},
             "functions": {"b": {"kind": "random"}},
             "operation": {"operator": "Pi", "symbol": "b", "p": 2.0, "method": "auto"}},
}


def _path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    return ".".join(parts) if parts else "<root>"


def validate(cfg: Mapping) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (len(list(e.absolute_path)), _path(e)), reverse=True)
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(err.message, _path(err))


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load(command: str, path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None,
         force_large: bool = False) -> dict:
    """Defaults for ``command`` merged with the file at ``path`` and CLI overrides."""
    user: dict = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"no such file {path}", "--config") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON ({exc.msg} at line {exc.lineno})", "--config") from None
        if not isinstance(user, dict):
            raise ConfigError("top level must be an object", "<root>")
    validate(user)
    cfg = _merge(DEFAULTS[command], user)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    validate(cfg)
    n, depth = cfg["model"]["n"], cfg["model"]["D"]
    if n * depth > MAX_CELL_EXPONENT and not force_large:
        raise ConfigError(f"n*D = {n * depth} exceeds {MAX_CELL_EXPONENT}; pass --force-large", "model")
    return cfg
