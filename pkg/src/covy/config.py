"""Layered run configuration: built-in defaults, YAML files, then ``--set`` overrides."""
from __future__ import annotations

import copy
import dataclasses
from pathlib import Path
from typing import Iterable, Optional

import yaml

from .drl.ddpg import DdpgConfig
from .drl.env import RewardParams
from .drl.sac import SacConfig
from .drl.training import TrainingConfig
from .errors import InputDomainError
from .hybrid import HybridConfig
from .localization import AmclParams
from .perception import DetectorProfile, TrackerParams

# Empty sections mean "dataclass defaults".  Only harness-level knobs that
# have no dataclass of their own are spelled out here.
DEFAULTS = {
    "seed": 0,
    "scenario": "empty_room",
    "detector": {"rgbd": {}, "rgb": {}},
    "tracker": {},
    "breach_threshold": 1.5,
    "reward": {},
    "hybrid": {},
    "amcl": {},
    "agent": {"algorithm": "sac", "sac": {}, "ddpg": {}},
    "training": {"curve_window": 25},
    "sweep": {"repeats": 50, "step": 1.0, "ci_level": 0.95, "modes": ["RGBD", "RGB"]},
    "breach": {"scenes": 200, "frames": 25, "modes": ["RGBD", "RGB", "compound"]},
    "nav": {"episodes": 100, "modes": ["pure_odom", "hybrid"], "fault_magnitude": 1.0,
            "trigger_min": 10, "trigger_max": 30, "clearance": 0.4,
            "min_goal_dist": 1.0, "max_goal_dist": 3.0, "lidar_noise": 0.01,
            "configurations": None},
}


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str):
    """``a.b.c=value`` -> (["a", "b", "c"], parsed value); values are YAML scalars."""
    if "=" not in text:
        raise InputDomainError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise InputDomainError(f"override {text!r} has an empty key")
    return path, yaml.safe_load(raw)


def apply_override(cfg: dict, path, value) -> dict:
    node = cfg
    for p in path[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise InputDomainError(f"cannot set {'.'.join(path)}: {p} is not a section")
    node[path[-1]] = value
    return cfg


def load_config(paths: Iterable = (), overrides: Iterable[str] = ()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    for p in paths:
        text = Path(p).read_text()
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise InputDomainError(f"{p}: {exc}") from None
        if not isinstance(doc, dict):
            raise InputDomainError(f"{p}: top level must be a mapping")
        cfg = deep_merge(cfg, doc)
    for text in overrides:
        path, value = parse_override(text)
        apply_override(cfg, path, value)
    return cfg


def build(cls, section: Optional[dict], **extra):
    """Instantiate a dataclass from a config section, rejecting unknown keys."""
    section = dict(section or {})
    section.update(extra)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - names)
    if unknown:
        raise InputDomainError(f"unknown {cls.__name__} keys: {unknown}")
    for k, v in section.items():
        if isinstance(v, list):
            section[k] = tuple(v)
    try:
        return cls(**section)
    except TypeError as exc:
        raise InputDomainError(f"{cls.__name__}: {exc}") from None


def detector_profiles(cfg: dict):
    det = cfg["detector"]
    try:
        return DetectorProfile.rgbd(**det.get("rgbd", {})), DetectorProfile.rgb(**det.get("rgb", {}))
    except TypeError as exc:
        raise InputDomainError(f"detector: {exc}") from None


def tracker_params(cfg: dict) -> TrackerParams:
    return build(TrackerParams, cfg["tracker"])


def reward_params(cfg: dict) -> RewardParams:
    return build(RewardParams, cfg["reward"])


def hybrid_config(cfg: dict, mode: Optional[str] = None) -> HybridConfig:
    extra = {"mode": mode} if mode else {}
    return build(HybridConfig, cfg["hybrid"], **extra)


def amcl_params(cfg: dict) -> AmclParams:
    return build(AmclParams, cfg["amcl"])


def agent_config(cfg: dict):
    algo = cfg["agent"].get("algorithm", "sac")
    if algo == "sac":
        return algo, build(SacConfig, cfg["agent"].get("sac"))
    if algo == "ddpg":
        return algo, build(DdpgConfig, cfg["agent"].get("ddpg"))
    raise InputDomainError(f"unknown algorithm {algo!r}")


def training_config(cfg: dict) -> TrainingConfig:
    section = {k: v for k, v in cfg["training"].items() if k != "curve_window"}
    section.setdefault("seed", cfg["seed"])
    try:
        return build(TrainingConfig, section)
    except ValueError as exc:
        raise InputDomainError(str(exc)) from None
