"""Run configuration: one strict JSON document shared by the CLI commands.

Unknown keys are rejected at every level so a sweep is reproducible from
its config alone.
"""

import json

import jsonschema

from .errors import ConfigError

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "depth": {"type": "integer", "minimum": 1},
                "base_filters": {"type": "integer", "minimum": 1},
                "in_channels": {"type": "integer", "minimum": 1},
                "out_channels": {"type": "integer", "minimum": 1},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "momentum": {"type": "number", "minimum": 0, "maximum": 1},
                "seed": {"type": "integer"},
            },
        },
        "lrp": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seed_mode": {"enum": ["predicted_positive", "full_output"]},
                "eps_stab": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "filters": {
            "type": "array",
            "items": {"type": "string"},
        },
        "metrics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "theta_x": {"type": "number", "minimum": 0, "maximum": 1},
                "theta_lrp": {"type": "number", "minimum": 0, "maximum": 1},
                "alphas": {"type": "array", "items": {"type": "number"}},
                "family": {"enum": ["pass", "clamp"]},
            },
        },
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "data": {"type": "string"},
                "model": {"type": "string"},
                "out": {"type": "string"},
            },
        },
    },
}

DEFAULTS = {
    "model": {"depth": 2, "base_filters": 8, "in_channels": 6, "out_channels": 1},
    "train": {"epochs": 80, "lr": 0.01, "momentum": 0.9, "seed": 0},
    "lrp": {"seed_mode": "predicted_positive", "eps_stab": 1e-9},
    "filters": [],
    "metrics": {"theta_x": 0.5, "theta_lrp": 0.0, "alphas": [0.05, 0.1, 0.2, 0.4, 0.6, 1.0],
                "family": "pass"},
    "paths": {},
}


def validate_config(doc):
    try:
        jsonschema.validate(doc, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"invalid run config at {path}: {e.message}") from e
    return doc


def load_config(path):
    """Read, schema-check, and fill a run config with defaults."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    validate_config(doc)
    merged = {}
    for section, defaults in DEFAULTS.items():
        if isinstance(defaults, dict):
            merged[section] = {**defaults, **doc.get(section, {})}
        else:
            merged[section] = doc.get(section, defaults)
    return merged


def default_config():
    return json.loads(json.dumps(DEFAULTS))
