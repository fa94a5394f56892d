"""Run configuration: defaults, YAML files and dotted-key overrides."""
from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Iterable, Optional

import yaml

from .errors import ConfigError

DEFAULTS: dict = {
    "seed": 0,
    "workers": 1,
    "domain": {"L": 15.0, "H": 10.0, "h": 0.0},
    "dfn": {"p30": 0.0025, "kf_km": None},
    "srf": {"dataset": "A", "corr_len": 10.0},
    "upscale": {"block_resolution": 16, "backend": "numerical", "weights": None},
    "benchmark": {"samples": 3, "coarse_resolution": 8, "large_fractures": True},
    "solver": {"tol": 1e-10},
    "dataset": {"n_samples": 200, "resolution": 16, "dataset": "A", "domain_side": 15.0,
                "corr_lens": [0.0, 10.0, 25.0], "p30s": [0.001, 0.0025]},
    "network": {"preset": "desk", "input_resolution": None, "conv_channels": None, "fc_widths": None},
    "train": {"lr0": 0.0025, "batch": 64, "epochs": 125, "plateau_factor": 0.5, "plateau_patience": 10,
              "init_seed": 0, "keep": "best"},
}

_NUMERIC = (int, float)


def _check(value: Any, default: Any, key: str) -> Any:
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, _NUMERIC):
        if isinstance(value, str):
            # YAML 1.1 reads exponent forms without a dot (1e-8) as strings
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, _NUMERIC):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        if isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
            if not value.is_integer():
                raise ConfigError(f"{key}: expected an integer, got {value!r}")
            return int(value)
        return value
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{key}: expected a list, got {value!r}")
    return value


def _merge(base: dict, update: dict, prefix: str = "") -> None:
    for k, v in update.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{key}: expected a section, got {v!r}")
            _merge(base[k], v, key + ".")
        else:
            base[k] = _check(v, DEFAULTS_FLAT.get(key), key)


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


DEFAULTS_FLAT = _flatten(DEFAULTS)


def parse_override(text: str) -> dict:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {key}: {exc}") from exc
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def load_config(path: Optional[str] = None, overrides: Iterable[str] = (), **cli) -> dict:
    """Defaults <- YAML file <- ``--set`` overrides <- explicit CLI flags (seed, workers)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
            raise ConfigError(f"{path}: invalid YAML{where}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(cfg, data)
    for ov in overrides:
        _merge(cfg, parse_override(ov))
    for k, v in cli.items():
        if v is not None:
            _merge(cfg, {k: v})
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    d = cfg["domain"]
    if d["L"] <= 0 or d["H"] <= 0:
        raise ConfigError("domain.L and domain.H must be positive")
    spacing = 0.75 * d["H"]
    ratio = d["L"] / spacing
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
        raise ConfigError(f"domain.L={d['L']} is not a multiple of the block spacing l/2={spacing}")
    if not 0 <= d["h"] < d["H"]:
        raise ConfigError("domain.h must satisfy 0 <= h < H")
    if cfg["upscale"]["backend"] not in ("numerical", "surrogate"):
        raise ConfigError("upscale.backend must be 'numerical' or 'surrogate'")
    n = cfg["upscale"]["block_resolution"]
    if n < 2 or n % 2:
        raise ConfigError("upscale.block_resolution must be an even integer >= 2")
    if cfg["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    if cfg["dfn"]["p30"] < 0:
        raise ConfigError("dfn.p30 must be >= 0")
    if cfg["srf"]["dataset"] not in ("A", "B", "C"):
        raise ConfigError("srf.dataset must be A, B or C")
    if cfg["train"]["keep"] not in ("best", "last"):
        raise ConfigError("train.keep must be 'best' or 'last'")
    if cfg["network"]["preset"] not in ("desk", "full"):
        raise ConfigError("network.preset must be 'desk' or 'full'")


def echo_config(cfg: dict, out_dir) -> Path:
    path = Path(out_dir) / "config.json"
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return path
