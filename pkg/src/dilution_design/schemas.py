"""JSON schemas for the serialized objects and CLI run configurations."""
from __future__ import annotations

import jsonschema

from .errors import InvalidArgumentError

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}

MEASURE = {
    "type": "object",
    "required": ["atoms"],
    "properties": {
        "atoms": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["x", "m"],
                "properties": {"x": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                               "m": {"type": "number", "minimum": 0}},
            },
        },
    },
}

PRIOR = {
    "oneOf": [
        {"type": "object", "required": ["type", "lambda"],
         "properties": {"type": {"const": "point"}, "lambda": {"type": "number", "minimum": 0}}},
        {"type": "object", "required": ["type", "u"],
         "properties": {"type": {"const": "uniform"}, "u": _POS, "lower": _POS}},
        {"type": "object", "required": ["type", "alpha"],
         "properties": {"type": {"const": "gamma"}, "alpha": _POS, "beta": _POS}},
        {"type": "object", "required": ["type", "lambda1", "lambda2", "p"],
         "properties": {"type": {"const": "two_point"}, "lambda1": _POS, "lambda2": _POS,
                        "p": {"type": "number", "minimum": 0, "maximum": 1}}},
    ]
}

CRITERION = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["G1", "G2", "G3", "G4", "G1_cost", "G4_cost", "G1_mixture"]},
        "prior": PRIOR,
        "c1": {"type": ["number", "null"], "minimum": 0},
        "c2": {"type": ["number", "null"], "minimum": 0},
    },
}

STEP_RULE = {
    "type": "object",
    "additionalProperties": False,
    "properties": {"initial_step": _POS,
                   "shrink": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                   "sufficient_decrease": {"type": "number", "exclusiveMinimum": 0,
                                           "exclusiveMaximum": 1}},
}

OPTIMIZER = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "grid_points": {"type": "integer", "minimum": 2},
        "x_min": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "budget_scan": {"type": ["array", "null"],
                        "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
        "budget_points": {"type": "integer", "minimum": 1},
        "golden_iters": {"type": "integer", "minimum": 0},
        "step_rule": STEP_RULE,
        "max_iters": {"type": "integer", "minimum": 1},
        "grad_tol": _POS,
        "refine_rounds": {"type": "integer", "minimum": 0},
        "cert_tol": _POS,
        "slack_tol": _POS,
    },
}

QUADRATURE = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "tol": _POS,
        "order": {"type": "integer", "minimum": 2},
        "panel_width": _POS,
        "panels_per_sd": _POS,
        "tail_mass": _POS,
        "max_panels": {"type": "integer", "minimum": 1},
        "limit": {"type": "integer", "minimum": 1},
    },
}

CERTIFICATE = {
    "type": "object",
    "required": ["u1", "u2", "volume_active", "max_violation", "support_residual"],
    "properties": {"u1": _NUM, "u2": _NUM, "volume_active": {"type": "boolean"},
                   "max_violation": _NUM, "support_residual": _NUM},
}

RUN_CONFIG = {
    "type": "object",
    "properties": {
        "criterion": {"type": "string"},
        "prior": {"oneOf": [{"type": "string"}, PRIOR]},
        "family": {"type": "string"},
        "n": _POS,
        "beta": _POS,
        "c1": {"type": "number", "minimum": 0},
        "c2": {"type": "number", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "quad_tol": _POS,
        "grid_points": {"type": "integer", "minimum": 2},
        "optimizer": OPTIMIZER,
        "quadrature": QUADRATURE,
        "design": MEASURE,
        "lambda": _POS,
        "replicates": {"type": "integer", "minimum": 1000},
        "start": _NUM,
        "stop": _NUM,
        "num": {"type": "integer", "minimum": 1},
        "log": {"type": "boolean"},
    },
}

SCHEMAS = {"measure": MEASURE, "prior": PRIOR, "criterion": CRITERION,
           "optimizer": OPTIMIZER, "quadrature": QUADRATURE,
           "certificate": CERTIFICATE, "run_config": RUN_CONFIG}


def validate(name: str, obj) -> None:
    """Raise InvalidArgumentError when ``obj`` does not match schema ``name``."""
    try:
        jsonschema.validate(obj, SCHEMAS[name])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InvalidArgumentError(f"{name} config invalid at {where}: {exc.message}") from exc
