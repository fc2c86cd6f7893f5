"""Run configuration: JSON schema validation, defaults and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigurationError

DEFAULTS = {
    "model": {
        "a": 0.5,
        "N": 12,
        "T": 1.0,
        "dt": 1.0 / 512.0,
        "seed": 42,
        "a_floor": 1e-6,
        "grid": [0.0, 0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0],
        "k_cap_decay": 0.3,
        "tune_for": ["+inf", 0.0],
    },
    "claim": {"utility": "log", "y": 1.0, "gamma": -1.0, "n": 12},
    "scenario": {
        "theorem_part": "C",
        "C": "-inf",
        "n_levels": None,
        "thresholds": None,
        "crossing": None,
        "sample_points": 16,
    },
    "paths": 10_000,
    "hedge_paths": 4,
    "export_paths": 20,
    "output": "out",
}


def schema() -> dict:
    text = resources.files("genhedge").joinpath("config_schema.json").read_text()
    return json.loads(text)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass(frozen=True)
class RunConfig:
    """A validated configuration with every default filled in."""

    data: dict

    @property
    def model(self) -> dict:
        return self.data["model"]

    @property
    def claim(self) -> dict:
        return self.data["claim"]

    @property
    def scenario(self) -> dict:
        return self.data["scenario"]

    @property
    def paths(self) -> int:
        return int(self.data["paths"])

    @property
    def time_steps(self) -> int:
        m = self.model
        steps = m["T"] / m["dt"]
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigurationError("T must be an integer multiple of dt")
        return int(round(steps))

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_overrides(self, seed: int | None = None, paths: int | None = None) -> "RunConfig":
        data = copy.deepcopy(self.data)
        if seed is not None:
            data["model"]["seed"] = int(seed)
        if paths is not None:
            data["paths"] = int(paths)
        return validate(data, fill=False)


def validate(raw: dict, fill: bool = True) -> RunConfig:
    """Validate ``raw`` against the schema, then merge defaults."""
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config error at {where}: {exc.message}") from exc
    data = _merge(DEFAULTS, raw) if fill else raw
    cfg = RunConfig(data)
    cfg.time_steps  # noqa: B018 - raises on a non-integral step count
    if data["scenario"]["theorem_part"] == "B" and data["claim"]["utility"] == "power":
        if not data["claim"]["gamma"] < 1 or data["claim"]["gamma"] == 0:
            raise ConfigurationError("power utility needs gamma < 1, gamma != 0")
    if data["claim"]["n"] > data["model"]["N"]:
        raise ConfigurationError("claim truncation n exceeds N")
    return cfg


def load(path: str | Path | None) -> RunConfig:
    """Read a JSON file (or use defaults when ``path`` is None)."""
    if path is None:
        return validate({})
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    return validate(raw)


def parse_limit(value) -> float:
    if value == "+inf":
        return math.inf
    if value == "-inf":
        return -math.inf
    return float(value)
