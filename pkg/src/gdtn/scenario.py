"""Scenario documents: one JSON file, sections picked per subcommand."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import jsonschema

from .errors import ScenarioError

_num = {"type": "number"}
_nonneg_int = {"type": "integer", "minimum": 0}
_scalar = {"type": ["number", "string", "boolean"]}

_dist = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["deterministic", "uniform", "exponential", "discrete", "mixture"]},
        "value": _num,
        "lo": _num,
        "hi": _num,
        "rate": _num,
        "points": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}},
        "model": {"type": "object"},
    },
    "additionalProperties": False,
}

_mixture_model = {
    "type": "object",
    "required": ["components"],
    "properties": {
        "load": {"type": ["number", "null"]},
        "components": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["w", "mu", "sigma"],
                "properties": {"w": _num, "mu": _num, "sigma": _num},
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}

TWIN_GRAPH_SCHEMA = {
    "type": "object",
    "properties": {
        "assets": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "kind"],
                "properties": {
                    "id": {"type": "string"},
                    "kind": {"enum": ["NetworkElement", "EndDevice", "IndustrialAsset", "Service", "External"]},
                    "attributes": {"type": "object", "additionalProperties": _scalar},
                },
                "additionalProperties": False,
            },
        },
        "twins": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["asset_id", "fidelity"],
                "properties": {
                    "id": {"type": "string"},
                    "asset_id": {"type": "string"},
                    "fidelity": {"enum": ["Doppel", "Light"]},
                    "exposed_keys": {"type": "array", "items": {"type": "string"}},
                    "state": {"type": "object", "additionalProperties": _scalar},
                },
                "additionalProperties": False,
            },
        },
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["parent", "child", "relation"],
                "properties": {
                    "parent": {"type": "string"},
                    "child": {"type": "string"},
                    "relation": {"enum": ["Contains", "ConnectsTo", "DependsOn"]},
                },
                "additionalProperties": False,
            },
        },
        "rules": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["target_key", "aggregator", "source_key"],
                "properties": {
                    "target_key": {"type": "string"},
                    "aggregator": {"enum": ["Sum", "Max", "Min", "Mean", "Count"]},
                    "source_key": {"type": "string"},
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "twin_graph": TWIN_GRAPH_SCHEMA,
        "durations": {
            "type": "object",
            "properties": {
                "key": {"type": "string"},
                "default": {"anyOf": [_dist, {"type": "null"}]},
                "by_twin": {"type": "object", "additionalProperties": _dist},
            },
            "additionalProperties": False,
        },
        "topology": {
            "type": "object",
            "required": ["nodes", "links"],
            "properties": {
                "nodes": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["id", "kind"],
                        "properties": {"id": {"type": "string"}, "kind": {"enum": ["switch", "end_device"]}},
                        "additionalProperties": False,
                    },
                },
                "links": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["id", "a", "b", "latency_ns"],
                        "properties": {
                            "id": {"type": "string"},
                            "a": {"type": "string"},
                            "b": {"type": "string"},
                            "latency_ns": {"type": "integer", "minimum": 1},
                            "up": {"type": "boolean"},
                        },
                        "additionalProperties": False,
                    },
                },
            },
            "additionalProperties": False,
        },
        "mgmt": {
            "type": "object",
            "required": ["detect_delay_ns", "compute_delay_ns", "push_delay_net_ns", "push_delay_dev_ns"],
            "properties": {
                "detect_delay_ns": _nonneg_int,
                "compute_delay_ns": _nonneg_int,
                "push_delay_net_ns": _nonneg_int,
                "push_delay_dev_ns": _nonneg_int,
                "registry_refresh_ns": {"type": ["integer", "null"], "minimum": 1},
            },
            "additionalProperties": False,
        },
        "traffic": {
            "type": "object",
            "required": ["flow", "period_ns", "duration_ns"],
            "properties": {
                "flow": {
                    "type": "object",
                    "required": ["id", "src", "dst"],
                    "properties": {
                        "id": {"type": "string"},
                        "src": {"type": "string"},
                        "dst": {"type": "string"},
                        "qos": {"type": "integer"},
                    },
                    "additionalProperties": False,
                },
                "period_ns": {"type": "integer", "minimum": 1},
                "duration_ns": {"type": "integer", "minimum": 1},
                "failure": {
                    "anyOf": [
                        {"type": "null"},
                        {
                            "type": "object",
                            "required": ["link", "at_ns"],
                            "properties": {"link": {"type": "string"}, "at_ns": _nonneg_int},
                            "additionalProperties": False,
                        },
                    ]
                },
                "restart_on_reconfig": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "chain": {
            "type": "object",
            "required": ["stages"],
            "properties": {
                "stages": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["id"],
                        "properties": {
                            "id": {"type": "string"},
                            "replicas": {"type": "integer", "minimum": 1},
                            "k": {"type": "integer", "minimum": 1},
                            "hidden": {
                                "type": "array",
                                "items": {
                                    "type": "object",
                                    "required": ["load", "dist"],
                                    "properties": {
                                        "load": _num,
                                        "dist": {
                                            "type": "object",
                                            "required": ["type"],
                                            "properties": {
                                                "type": {"enum": ["deterministic", "lognormal", "mixture"]},
                                                "value_ms": _num,
                                                "median_ms": _num,
                                                "sigma": _num,
                                                "model": _mixture_model,
                                            },
                                            "additionalProperties": False,
                                        },
                                    },
                                    "additionalProperties": False,
                                },
                            },
                        },
                        "additionalProperties": False,
                    },
                },
                "em": {
                    "type": "object",
                    "properties": {
                        "max_iter": {"type": "integer", "minimum": 1},
                        "tol": {"type": "number", "exclusiveMinimum": 0},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "profile": {
            "type": "object",
            "required": ["loads"],
            "properties": {
                "arrival": {"enum": ["poisson", "uniform"]},
                "loads": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["load", "duration_s"],
                        "properties": {"load": {"type": "number", "exclusiveMinimum": 0}, "duration_s": _num},
                        "additionalProperties": False,
                    },
                },
                "fit_loads": {"type": "array", "items": _num},
            },
            "additionalProperties": False,
        },
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
    },
    "additionalProperties": False,
}

_validator = jsonschema.Draft202012Validator(SCHEMA)


def check(doc: Any) -> dict[str, Any]:
    errors = sorted(_validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ScenarioError(f"schema: {where}: {e.message}")
    return doc


def load(path: str | Path) -> dict[str, Any]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON: {exc}") from exc
    return check(doc)


def require(doc: dict[str, Any], *sections: str) -> None:
    missing = [s for s in sections if s not in doc]
    if missing:
        raise ScenarioError(f"scenario lacks section(s): {', '.join(missing)}")


def default_seed(doc: dict[str, Any]) -> int:
    return doc.get("seeds", [0])[0]
