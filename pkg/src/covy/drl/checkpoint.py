"""Versioned weight checkpoints stored as ``.npz`` archives."""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .ddpg import DdpgAgent, DdpgConfig
from .sac import SacAgent, SacConfig

FORMAT_VERSION = 1


def _arrays(agent) -> dict:
    out = {}
    for name, net in agent.networks().items():
        for i, p in enumerate(net.params):
            out[f"{name}/{i}"] = p
    if isinstance(agent, SacAgent):
        out["log_alpha"] = np.asarray(agent.log_alpha)
    return out


def _header(agent) -> dict:
    kind = "sac" if isinstance(agent, SacAgent) else "ddpg"
    cfg = asdict(agent.config)
    cfg["hidden"] = list(cfg["hidden"])
    shapes = {k: list(v.shape) for k, v in _arrays(agent).items()}
    return {"format_version": FORMAT_VERSION, "algorithm": kind, "config": cfg, "shapes": shapes}


def save_checkpoint(agent, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(_header(agent), sort_keys=True)
    arrays = _arrays(agent)
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(header), **arrays)
    return path


def read_header(path) -> dict:
    try:
        with np.load(path, allow_pickle=False) as data:
            return json.loads(str(data["__header__"]))
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from exc


def load_into(agent, path):
    """Copy weights from ``path`` into an existing agent, checking every shape."""
    header = read_header(path)
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    expected = _arrays(agent)
    with np.load(path, allow_pickle=False) as data:
        missing = sorted(set(expected) - set(data.files))
        if missing:
            raise CheckpointError(f"{path}: missing arrays {missing}")
        for key, dst in expected.items():
            src = data[key]
            if src.shape != dst.shape:
                raise CheckpointError(f"{path}: {key} has shape {src.shape}, expected {dst.shape}")
            dst[...] = src
    return agent


def load_checkpoint(path):
    """Rebuild an agent of the stored kind and configuration."""
    header = read_header(path)
    cfg = dict(header["config"])
    cfg["hidden"] = tuple(cfg["hidden"])
    if header["algorithm"] == "sac":
        agent = SacAgent(SacConfig(**cfg))
    elif header["algorithm"] == "ddpg":
        agent = DdpgAgent(DdpgConfig(**cfg))
    else:
        raise CheckpointError(f"{path}: unknown algorithm {header['algorithm']!r}")
    return load_into(agent, path)
