"""INI configuration, override precedence and run manifests.

Each section maps onto one dataclass: ``[experiment]``, ``[vmd]``,
``[carbs]``, ``[insulin]``, ``[low]``, ``[teacher]``, ``[student]``,
``[baseline]``, ``[kd]`` and ``[synth]``. Values are parsed as Python
literals where possible (``lstm_vec = ((64, 32),)``), otherwise kept as
strings. Precedence is command-line flags > file > built-in defaults.
"""
from __future__ import annotations

import ast
import configparser
import hashlib
import json
import platform
from dataclasses import asdict, fields, is_dataclass, replace
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import SynthConfig
from .pipeline import ExperimentConfig

_SUBCONFIGS = {
    "vmd": "vmd",
    "carbs": "carbs",
    "low": "low",
    "teacher": "teacher",
    "student": "student",
    "baseline": "baseline",
    "kd": "kd",
}


class ConfigError(ValueError):
    pass


def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, (list, tuple)) else v


def _apply(obj, values: dict, section: str):
    known = {f.name: f for f in fields(obj)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(sorted(unknown))}")
    parsed = {}
    for k, v in values.items():
        v = _tuplify(_literal(v) if isinstance(v, str) else v)
        if isinstance(getattr(obj, k), datetime) and isinstance(v, str):
            try:
                v = datetime.fromisoformat(v)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {k}: {exc}") from exc
        parsed[k] = v
    try:
        return replace(obj, **parsed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def read_ini(path) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return {s: dict(cp[s]) for s in cp.sections()}


def build_experiment_config(sections: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then file ``sections``, then flat ``overrides`` on
    ``[experiment]`` keys."""
    sections = dict(sections or {})
    known = {"experiment", "insulin", "synth", *_SUBCONFIGS}
    unknown = set(sections) - known
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    cfg = ExperimentConfig()
    sub = {}
    for sec, attr in _SUBCONFIGS.items():
        if sec in sections:
            sub[attr] = _apply(getattr(cfg, attr), sections[sec], sec)
    top = dict(sections.get("experiment", {}))
    ins = sections.get("insulin", {})
    for k, v in ins.items():
        if k not in ("peak", "duration"):
            raise ConfigError(f"[insulin] unknown key {k}")
        top[f"insulin_{k}"] = v
    top.update(overrides or {})
    cfg = _apply(replace(cfg, **sub) if sub else cfg, top, "experiment")
    return cfg


def build_synth_config(sections: dict | None = None, overrides: dict | None = None) -> SynthConfig:
    values = dict((sections or {}).get("synth", {}))
    values.update(overrides or {})
    return _apply(SynthConfig(), values, "synth")


def _jsonable(obj):
    if is_dataclass(obj):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, datetime):
        return obj.isoformat()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def config_dict(cfg) -> dict:
    return _jsonable(cfg)


def config_hash(cfg) -> str:
    blob = json.dumps(config_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def write_manifest(out_dir, command: str, argv: list[str], config, seed, extra: dict | None = None) -> Path:
    """Everything needed to rerun a command: arguments, effective config,
    its hash, the seed and library versions. No wall-clock data, so reruns
    produce identical manifests."""
    manifest = {
        "command": command,
        "argv": list(argv),
        "seed": seed,
        "config_hash": config_hash(config),
        "config": config_dict(config),
        "versions": {
            "gluconet": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    if extra:
        manifest.update(_jsonable(extra))
    path = Path(out_dir) / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
