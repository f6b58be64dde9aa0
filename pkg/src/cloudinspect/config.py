"""Run configuration: a YAML document with four sections.

Example::

    input:
      reference: scans/reference.ply
      current: scans/current.ply
      truth: null            # optional truth.json
      synth: null            # or {preset: shiba-tail, seed: 3, points: 15000}
    registration:
      enabled: true
      max_iterations: 50
      tolerance: 1.0e-6
      with_scale: false
      max_correspondence_distance: null   # null = unbounded
      trim_fraction: 0.0
      subsample_size: null
      seed: 0
      rigid_warmup: true     # with_scale only: rigid fit first, then scale
    diff:
      threshold: auto        # or a number in scene units
      threshold_factor: 3.0  # used by "auto": factor x median spacing
      cluster_radius: auto   # "auto" = the threshold
      min_region_points: 10
    output:
      directory: out
      reference_ply: true
      current_ply: true
      overlay_ply: true
      report: true
      regions_csv: true
      figures: true
      ply_format: binary     # or ascii

Relative input paths are resolved against the config file's directory.
Every key can be overridden from the command line with ``--set
section.key=value``; the value is parsed as YAML.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Optional

import yaml

DEFAULTS = {
    "input": {"reference": None, "current": None, "truth": None, "synth": None},
    "registration": {
        "enabled": True,
        "max_iterations": 50,
        "tolerance": 1e-6,
        "with_scale": False,
        "max_correspondence_distance": None,
        "trim_fraction": 0.0,
        "subsample_size": None,
        "seed": 0,
        "rigid_warmup": True,
    },
    "diff": {
        "threshold": "auto",
        "threshold_factor": 3.0,
        "cluster_radius": "auto",
        "min_region_points": 10,
    },
    "output": {
        "directory": "out",
        "reference_ply": True,
        "current_ply": True,
        "overlay_ply": True,
        "report": True,
        "regions_csv": True,
        "figures": True,
        "ply_format": "binary",
    },
}

# YAML 1.1 reads "1e-6" (no dot) as a string; these keys are coerced back
NUMERIC_KEYS = {
    "registration": ("tolerance", "max_correspondence_distance", "trim_fraction"),
    "diff": ("threshold", "threshold_factor", "cluster_radius"),
}

SYNTH_KEYS = {"preset", "seed", "points", "defects", "noise_sigma", "shared_sampling"}


class ConfigError(ValueError):
    pass


def _merge(base: dict, update: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where + key!r} must be a section")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, raw = text.split("=", 1)
    return key.strip().split("."), yaml.safe_load(raw) if raw.strip() else None


def apply_override(data: dict, path: list[str], value) -> dict:
    out = copy.deepcopy(data)
    node = out
    for part in path[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key {'.'.join(path)!r}")
        node = node[part]
    leaf = path[-1]
    # synth is a free-form sub-section
    if leaf not in node and not (len(path) == 3 and path[:2] == ["input", "synth"]):
        raise ConfigError(f"unknown config key {'.'.join(path)!r}")
    if len(path) == 3 and path[:2] == ["input", "synth"] and node is None:
        raise ConfigError("input.synth must be set before overriding its keys")
    node[leaf] = value
    return out


class RunConfig:
    """Validated configuration with a dictionary form that round-trips."""

    def __init__(self, data: Optional[dict] = None, base_dir=None):
        merged = _merge(DEFAULTS, data or {})
        self.base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
        self.data = merged
        self._validate()

    @classmethod
    def load(cls, path, overrides=()) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
            if path.suffix.lower() == ".json":
                data = json.loads(text)
            else:
                data = yaml.safe_load(text) or {}
        except ValueError as exc:
            raise ConfigError(f"config {str(path)!r} is not valid JSON: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {str(path)!r} is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {str(path)!r} must be a mapping")
        # a run report can be fed back in; its "config" entry is the echo
        if "schema_version" in data and "config" in data:
            data = data["config"]
        for text in overrides:
            keys, value = parse_override(text)
            data = apply_override(_merge(DEFAULTS, data), keys, value)
        return cls(data, base_dir=path.parent)

    def _validate(self) -> None:
        for section, keys in NUMERIC_KEYS.items():
            for key in keys:
                v = self.data[section][key]
                if isinstance(v, str) and v != "auto":
                    try:
                        self.data[section][key] = float(v)
                    except ValueError:
                        raise ConfigError(f"{section}.{key} must be a number") from None
        inp = self.data["input"]
        synth = inp["synth"]
        files = [inp["reference"], inp["current"]]
        if synth is not None:
            if any(files):
                raise ConfigError("give either input.synth or input.reference/current, not both")
            if not isinstance(synth, dict) or "preset" not in synth:
                raise ConfigError("input.synth needs a 'preset'")
            unknown = set(synth) - SYNTH_KEYS
            if unknown:
                raise ConfigError(f"unknown input.synth keys {sorted(unknown)}")
        elif not all(files):
            raise ConfigError("input.reference and input.current are both required")

        d = self.data["diff"]
        for key in ("threshold", "cluster_radius"):
            v = d[key]
            if v != "auto" and not (isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0):
                raise ConfigError(f"diff.{key} must be 'auto' or a positive number")
        if self.data["output"]["ply_format"] not in ("binary", "ascii"):
            raise ConfigError("output.ply_format must be 'binary' or 'ascii'")

    def resolve(self, p) -> Optional[Path]:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.data["output"]["directory"])

    def echo(self) -> dict:
        """Config with input paths made absolute, suitable for re-running."""
        out = copy.deepcopy(self.data)
        for key in ("reference", "current", "truth"):
            if out["input"][key] is not None:
                out["input"][key] = str(self.resolve(out["input"][key]).resolve())
        out["output"]["directory"] = str(self.output_dir.resolve())
        return out
