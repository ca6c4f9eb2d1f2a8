"""Run configuration.

A config file is a JSON document with one top-level ``defaults`` object whose
sections override the built-in values below; command-line flags override the
file. Unknown keys are rejected so typos surface immediately.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
from typing import Any, Mapping

from .datapipe import DEFAULT_CELL_SIZE, DEFAULT_DEDUP_THRESHOLD, MirrorFrames
from .rewards import GRPO_BETA, GRPO_EPS_HIGH, GRPO_EPS_LOW, GRPO_GROUP_SIZE, RewardWeights, compile_template
from .scaling import GRID_BETA, GRID_R_STAR, GRID_SIZE
from .waypoints import WaypointThresholds

CONFIG_ENV = "TRAJTOK_CONFIG"

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "threads": 1,
    "waypoints": {"pos_eps": 0.01, "rot_eps": 0.05, "grip_eps": 0.1},
    "library": {"k_trans": 150, "k_rot": 150},
    "encode": {"mode": "greedy", "horizon": 40, "bins_per_dim": 256, "dt": 1 / 30},
    "dedup": {"cell_size": DEFAULT_CELL_SIZE, "threshold": DEFAULT_DEDUP_THRESHOLD},
    "mirror": {"frames": None, "lexicon": None},
    "rewards": {
        "weights": RewardWeights().to_dict(),
        "templates": {},
        "judge": "none",
        "grpo": {"beta": GRPO_BETA, "eps_low": GRPO_EPS_LOW, "eps_high": GRPO_EPS_HIGH, "group_size": GRPO_GROUP_SIZE},
    },
    "scaling": {"beta_range": list(GRID_BETA), "r_star_range": list(GRID_R_STAR), "grid_size": GRID_SIZE},
    "synth": {"n_groups": 12, "per_group": 4, "n_frames": 120},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: Mapping, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where + k!r}")
        # free-form sections take the value wholesale
        if isinstance(base[k], dict) and isinstance(v, Mapping) and k not in ("templates", "weights"):
            out[k] = _merge(base[k], v, f"{where}{k}.")
        elif k == "weights":
            unknown = set(v) - set(base[k])
            if unknown:
                raise ConfigError(f"unknown config keys {sorted(where + k + '.' + u for u in unknown)}")
            out[k] = {**base[k], **v}
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(cfg: Mapping) -> None:
    """Run each module's own precondition checks on the resolved values."""
    try:
        WaypointThresholds(**cfg["waypoints"])
        RewardWeights.from_dict(cfg["rewards"]["weights"])
        for mode, t in cfg["rewards"]["templates"].items():
            if mode not in ("full", "partial"):
                raise ConfigError(f"templates: unknown mode {mode!r}")
            compile_template(t)
        if cfg["mirror"]["frames"] is not None:
            MirrorFrames.from_dict(cfg["mirror"]["frames"])
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"invalid config: {e}") from None
    lib = cfg["library"]
    if int(lib["k_trans"]) < 1 or int(lib["k_rot"]) < 1:
        raise ConfigError("library k_trans and k_rot must be >= 1")
    enc = cfg["encode"]
    if enc["mode"] not in ("greedy", "top3"):
        raise ConfigError(f"encode.mode must be 'greedy' or 'top3', got {enc['mode']!r}")
    if not 2 <= int(enc["horizon"]) <= 40:
        raise ConfigError(f"encode.horizon must be in [2, 40], got {enc['horizon']}")
    if not enc["dt"] > 0:
        raise ConfigError("encode.dt must be > 0")
    dd = cfg["dedup"]
    if not dd["cell_size"] > 0 or not 0 <= dd["threshold"] <= 1:
        raise ConfigError("dedup.cell_size must be > 0 and dedup.threshold in [0, 1]")
    if cfg["rewards"]["judge"] not in ("none", "mock"):
        raise ConfigError(f"rewards.judge must be 'none' or 'mock', got {cfg['rewards']['judge']!r}")
    g = cfg["rewards"]["grpo"]
    if g["beta"] < 0 or g["eps_low"] < 0 or g["eps_high"] < 0 or int(g["group_size"]) < 2:
        raise ConfigError("rewards.grpo needs beta, eps_low, eps_high >= 0 and group_size >= 2")
    sc = cfg["scaling"]
    for key in ("beta_range", "r_star_range"):
        lo, hi = sc[key]
        if not 0 < lo < hi:
            raise ConfigError(f"scaling.{key} must satisfy 0 < low < high")
    if int(sc["grid_size"]) < 2:
        raise ConfigError("scaling.grid_size must be >= 2")
    if int(cfg["threads"]) < 1:
        raise ConfigError("threads must be >= 1")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")


def load(path: str | os.PathLike | None = None, overrides: Mapping | None = None) -> dict:
    """Built-in defaults < config file ``defaults`` < ``overrides``.

    ``path=None`` falls back to $TRAJTOK_CONFIG when it is set.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: not valid JSON: {e}") from None
        if not isinstance(doc, dict) or set(doc) - {"defaults"}:
            raise ConfigError(f"{path}: config must be an object with a single 'defaults' section")
        cfg = _merge(cfg, doc.get("defaults", {}))
    if overrides:
        cfg = _merge(cfg, overrides)
    validate(cfg)
    return cfg


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: Mapping) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()
