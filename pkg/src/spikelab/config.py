"""Experiment configuration files and built-in presets.

Configurations are TOML documents with the tables ``domain``, ``weight``,
``spikes``, ``run``, ``mesh`` and ``output``.  Every field has a default, so
a preset or a partial file is completed by :func:`resolve`.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
import sys

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .fem.weights import weight_from_spec
from .geometry import DomainGeometry


class ConfigError(ValueError):
    """Validation failure naming the offending field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


DEFAULTS = {
    "domain": {"kind": "disk", "center": [0.0, 0.0], "radius": 1.0},
    "weight": {"kind": "constant", "value": 1.0},
    "spikes": {"m": 1, "l": 0, "positions": "auto"},
    "run": {"p": 30.0, "regime": "separated", "seed": 0, "multistart": 16},
    "mesh": {"h": 0.05, "grading": 0.25, "resolution": 8.0, "mirror": False},
    "output": {"dir": "out"},
}

PRESETS = {
    "disk-boundary-spike": {
        "spikes": {"m": 1, "l": 0, "positions": [[1.0, 0.0]]},
        "run": {"p_schedule": [20, 30, 45, 67, 100]},
        "mesh": {"mirror": True},
    },
    "disk-interior-spike": {
        "spikes": {"m": 1, "l": 1, "positions": [[0.0, 0.0]]},
        "run": {"p_schedule": [20, 30, 45, 67, 100]},
        "mesh": {"mirror": True},
    },
    "translated-disk-x1": {
        "domain": {"kind": "disk", "center": [2.0, 0.0], "radius": 1.0},
        "weight": {"kind": "monomial", "k1": 1, "k2": 0},
        "spikes": {"m": 2, "l": 1, "positions": "auto"},
        "run": {"p": 50},
        "mesh": {"mirror": True},
    },
    "bump-cluster": {
        "weight": {"kind": "boundary_bump", "center": [1.0, 0.0], "amplitude": 1.0,
                   "width": 0.5, "base": 1.0},
        "spikes": {"m": 2, "l": 1, "positions": "auto", "xi_star": [1.0, 0.0]},
        "run": {"regime": "clustered", "p_schedule": [30, 60, 120]},
    },
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        old = out.get(k)
        # a table naming a different kind replaces the old one wholesale
        if isinstance(v, dict) and isinstance(old, dict) and v.get("kind", old.get("kind")) == old.get("kind"):
            out[k] = _merge(old, v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load(path=None, preset=None, overrides=None) -> dict:
    """Merge defaults, a preset, a TOML file and overrides (in that order)."""
    raw = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}; choose from "
                              + ", ".join(sorted(PRESETS)))
        raw = _merge(raw, PRESETS[preset])
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("config", f"malformed TOML: {exc}") from exc
        raw = _merge(raw, data)
    if overrides:
        raw = _merge(raw, overrides)
    return raw


def domain_from_spec(spec: dict) -> DomainGeometry:
    kind = spec.get("kind", "disk")
    if kind == "disk":
        dom = DomainGeometry.disk(spec.get("center", (0, 0)), spec.get("radius", 1.0))
    elif kind == "ellipse":
        dom = DomainGeometry.ellipse(spec.get("center", (0, 0)), spec.get("a", 2.0), spec.get("b", 1.0))
    elif kind == "smoothed_rect":
        dom = DomainGeometry.smoothed_rect(spec.get("center", (0, 0)), spec.get("width", 2.0),
                                           spec.get("height", 1.0), spec.get("corner", 0.2))
    elif kind == "spline":
        dom = DomainGeometry.spline(np.asarray(spec["points"], dtype=float))
    else:
        raise ConfigError("domain.kind", f"unknown domain kind {kind!r}")
    if "shift" in spec:
        dom = dom.translated(spec["shift"])
    return dom


@dataclass
class ExperimentConfig:
    """Validated experiment description."""

    raw: dict
    domain: DomainGeometry
    weight: object
    m: int
    l: int
    positions: object
    p_values: list
    regime: str
    seed: int
    out_dir: Path

    @property
    def kinds(self):
        return ["interior"] * self.l + ["boundary"] * (self.m - self.l)


def resolve(raw: dict) -> ExperimentConfig:
    """Validate ``raw`` and build the geometry and weight objects.

    Raises
    ------
    ConfigError
        With the dotted name of the first invalid field.
    """
    sp = raw["spikes"]
    m, l = sp.get("m"), sp.get("l")
    if not isinstance(m, int) or m < 1:
        raise ConfigError("spikes.m", "must be a positive integer")
    if not isinstance(l, int) or l < 0:
        raise ConfigError("spikes.l", "must be a nonnegative integer")
    if l > m:
        raise ConfigError("spikes.l", f"l = {l} exceeds m = {m} (need l <= m)")
    run = raw["run"]
    if "p_schedule" in run:
        ps = [float(x) for x in run["p_schedule"]]
        if not ps or any(b <= a for a, b in zip(ps, ps[1:])):
            raise ConfigError("run.p_schedule", "must be a nonempty increasing list")
    else:
        ps = [float(run.get("p", 30.0))]
    if any(p <= 1 for p in ps):
        raise ConfigError("run.p", "exponent must exceed 1")
    if any(p > 200 for p in ps):
        raise ConfigError("run.p", "exponent above 200 is outside the supported range")
    regime = run.get("regime", "separated")
    if regime not in ("separated", "clustered"):
        raise ConfigError("run.regime", "must be 'separated' or 'clustered'")
    seed = run.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("run.seed", "must be a nonnegative integer")
    try:
        dom = domain_from_spec(raw["domain"])
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("domain", str(exc)) from exc
    try:
        weight = weight_from_spec(raw["weight"])
    except (KeyError, ValueError) as exc:
        raise ConfigError("weight", str(exc)) from exc
    if raw["weight"].get("kind") == "monomial" and not weight.positive_on(dom.bbox[0]):
        raise ConfigError("weight.kind", "monomial weights need the closed domain inside "
                          "the open positive quadrant (in every coordinate with a "
                          "nonzero exponent)")
    pos = sp.get("positions", "auto")
    if pos != "auto":
        pos = np.asarray(pos, dtype=float)
        if pos.shape != (m, 2):
            raise ConfigError("spikes.positions", f"expected {m} points, got shape {pos.shape}")
    mesh = raw["mesh"]
    if not mesh.get("h", 0) > 0:
        raise ConfigError("mesh.h", "must be positive")
    if not 0 < mesh.get("grading", 0.25) <= 0.5:
        raise ConfigError("mesh.grading", "must lie in (0, 0.5]")
    return ExperimentConfig(raw, dom, weight, m, l, pos, ps, regime, seed,
                            Path(raw["output"].get("dir", "out")))
