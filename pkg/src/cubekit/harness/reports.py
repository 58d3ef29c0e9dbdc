"""Machine-readable run reports and the train-config schema."""
from __future__ import annotations

import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import jsonschema

from .. import __version__

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "cubekit run report",
    "type": "object",
    "required": ["command", "argv", "config_hash", "seed", "library_version", "precision",
                 "threads", "timings", "metrics", "passed"],
    "properties": {
        "command": {"type": "string"},
        "argv": {"type": "array", "items": {"type": "string"}},
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "seed": {"type": ["integer", "null"]},
        "library_version": {"type": "string"},
        "precision": {"enum": ["f32", "f64"]},
        "threads": {"type": "integer", "minimum": 1},
        "python": {"type": "string"},
        "timings": {"type": "object", "additionalProperties": {"type": ["number", "object"]}},
        "metrics": {"type": "object"},
        "flags": {"type": "object", "additionalProperties": {"type": "boolean"}},
        "passed": {"type": "boolean"},
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "cubekit train config",
    "type": "object",
    "required": ["group", "layers", "channels", "kernel", "epochs", "lr", "lr_step", "noise_std",
                 "seed", "precision"],
    "additionalProperties": False,
    "properties": {
        "group": {"enum": ["C1", "V", "T4", "S4"]},
        "layers": {"type": "array", "minItems": 1, "items": {"enum": [
            "gconv_lift", "gconv_hidden", "relu", "batch_norm", "avg_pool2",
            "global_spatial_pool", "group_pool", "dense"]}},
        "channels": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "kernel": {"type": "integer", "minimum": 1},
        "epochs": {"type": "integer", "minimum": 0},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "lr_step": {"type": "integer", "minimum": 1},
        "lr_factor": {"type": "number", "exclusiveMinimum": 0},
        "noise_std": {"type": "number", "minimum": 0},
        "seed": {"type": "integer"},
        "precision": {"enum": ["f32", "f64"]},
        "batch_size": {"type": "integer", "minimum": 1},
        "padding": {"enum": ["same", "valid"]},
        "beta1": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "beta2": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "dataset": {"type": "object"},
    },
}

DEFAULT_CONFIG = {
    "group": "S4",
    "layers": ["gconv_lift", "batch_norm", "relu", "gconv_hidden", "batch_norm", "relu",
               "global_spatial_pool", "group_pool", "dense", "relu", "dense"],
    "channels": [2, 2, 16],
    "kernel": 3,
    "epochs": 5,
    "lr": 1e-2,
    "lr_step": 5,
    "noise_std": 0.1,
    "seed": 7,
    "precision": "f64",
}


class ConfigError(ValueError):
    pass


def validate_config(cfg: dict) -> dict:
    """Check ``cfg`` against :data:`CONFIG_SCHEMA`; errors name the offending field."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            where = "config" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in e.absolute_path)
            msgs.append(f"{where}: {e.message}")
        raise ConfigError("; ".join(msgs))
    return cfg


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class RunReport:
    """Collects timings and metrics for one command invocation."""

    def __init__(self, command: str, argv, config, seed=None, precision="f64", threads=1):
        self.data = {
            "command": command,
            "argv": [str(a) for a in argv],
            "config_hash": config_hash(config),
            "seed": seed,
            "library_version": __version__,
            "precision": precision,
            "threads": int(threads),
            "python": f"{platform.python_implementation()} {sys.version.split()[0]}",
            "timings": {},
            "metrics": {},
            "flags": {},
            "passed": True,
        }

    def timer(self, name: str):
        report = self

        class _T:
            def __enter__(self):
                self.t0 = time.perf_counter()
                return self

            def __exit__(self, *exc):
                report.data["timings"][name] = time.perf_counter() - self.t0

        return _T()

    def metric(self, name: str, value) -> None:
        self.data["metrics"][name] = value

    def flag(self, name: str, ok: bool) -> None:
        self.data["flags"][name] = bool(ok)

    @property
    def passed(self) -> bool:
        return self.data["passed"]

    @passed.setter
    def passed(self, value: bool) -> None:
        self.data["passed"] = bool(value)

    def validate(self) -> None:
        jsonschema.validate(self.data, REPORT_SCHEMA)

    def write(self, path) -> None:
        self.validate()
        path = Path(path)
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")
