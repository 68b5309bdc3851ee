"""Engine configuration: a flat JSON object, checked strictly.

Unknown keys and wrong types are rejected up front so a typo never
silently turns a feature off.  The PROBEKERNEL_CONFIG environment
variable names a default config file for the CLI and service.
"""

from __future__ import annotations

import json
import os

ENV_VAR = "PROBEKERNEL_CONFIG"

# key -> (expected types, default)
CONFIG_KEYS = {
    "data_dir": ((str,), None),
    "memory_log": ((str,), None),
    "trace_path": ((str,), None),
    "enable_memory": ((bool,), True),
    "enable_feedback": ((bool,), True),
    "enable_sharing": ((bool,), True),
    "feedback_budget_ms": ((int, float, type(None)), 50.0),
    "cost_threshold": ((int, float), 100_000.0),
    "admission_row_budget": ((int, float), 5_000_000.0),
    "checkpoint_rows": ((int,), 1024),
    "base_seed": ((int,), 0),
    "manifest": ((dict, list), None),
    "host": ((str,), "127.0.0.1"),
    "port": ((int,), 8723),
    "tcp_port": ((int,), 8724),
}


class ConfigError(ValueError):
    pass


def validate_config(doc: dict) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    out = {}
    for key, value in doc.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        types, _ = CONFIG_KEYS[key]
        if isinstance(value, bool) and bool not in types:
            raise ConfigError(f"config key {key!r} has wrong type")
        if value is not None and not isinstance(value, types):
            raise ConfigError(f"config key {key!r} has wrong type")
        out[key] = value
    for key, (_, default) in CONFIG_KEYS.items():
        out.setdefault(key, default)
    return out


def load_config(path: str = None) -> dict:
    """Read and validate a config file; falls back to $PROBEKERNEL_CONFIG,
    then to all defaults."""
    if path is None:
        path = os.environ.get(ENV_VAR)
    if path is None:
        return validate_config({})
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
    return validate_config(doc)


def build_engine(db, config: dict):
    """Construct a ProbeEngine from a validated config and a Database."""
    from .engine import ProbeEngine

    cfg = validate_config(config)
    return ProbeEngine(
        db,
        memory_log=cfg["memory_log"],
        trace_path=cfg["trace_path"],
        enable_memory=cfg["enable_memory"],
        enable_feedback=cfg["enable_feedback"],
        enable_sharing=cfg["enable_sharing"],
        feedback_budget_ms=cfg["feedback_budget_ms"],
        cost_threshold=float(cfg["cost_threshold"]),
        admission_row_budget=float(cfg["admission_row_budget"]),
        checkpoint_rows=cfg["checkpoint_rows"],
        base_seed=cfg["base_seed"],
        manifest=cfg["manifest"],
    )
