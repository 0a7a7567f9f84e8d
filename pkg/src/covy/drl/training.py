"""Episode loop shared by both agents."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import TrainingDivergedError
from .buffer import ReplayBuffer
from .ddpg import DdpgAgent, ddpg_act, train_step_ddpg
from .env import ACTION_DIM, ACTION_HIGH, ACTION_LOW, STATE_DIM, NavEnv, Terminal
from .sac import SacAgent, sac_act, train_step_sac


@dataclass
class TrainingConfig:
    episodes: int = 300
    seed: int = 0
    warmup: int = 1000
    batch_size: int = 128
    buffer_capacity: int = 100_000
    update_every: int = 1

    def __post_init__(self):
        if self.episodes < 0 or self.warmup < 0 or self.batch_size < 1 or self.update_every < 1:
            raise ValueError(f"invalid training config {self}")


@dataclass
class EpisodeRecord:
    episode: int
    ret: float
    outcome: str
    steps: int
    wall_time: float = 0.0


@dataclass
class TrainingLog:
    algorithm: str
    seed: int
    records: list = field(default_factory=list)
    losses: list = field(default_factory=list)   # mean losses per episode

    @property
    def returns(self) -> np.ndarray:
        return np.array([r.ret for r in self.records])

    def outcomes(self):
        return [r.outcome for r in self.records]

    def data_rows(self):
        """Deterministic columns only; wall time is kept out of data outputs."""
        return [{"episode": r.episode, "return": r.ret, "outcome": r.outcome, "steps": r.steps}
                for r in self.records]

    def __len__(self):
        return len(self.records)


def algorithm_name(agent) -> str:
    if isinstance(agent, SacAgent):
        return "sac"
    if isinstance(agent, DdpgAgent):
        return "ddpg"
    raise TypeError(f"unsupported agent {type(agent).__name__}")


def policy_action(agent, state, rng, explore: bool):
    if isinstance(agent, SacAgent):
        return sac_act(agent, state, deterministic=not explore, rng=rng)[0]
    return ddpg_act(agent, state, explore=explore, rng=rng)


def _learn(agent, batch, rng):
    if isinstance(agent, SacAgent):
        return train_step_sac(agent, batch, rng)
    return train_step_ddpg(agent, batch)


def run_training(env: NavEnv, agent, config: TrainingConfig,
                 callback: Optional[Callable[[EpisodeRecord], None]] = None) -> TrainingLog:
    """Train ``agent`` in ``env``; reproducible from ``config.seed``.

    Uniform random actions are used for the first ``warmup`` environment
    steps, and one gradient step is taken every ``update_every`` steps after
    that.  Timeouts are stored as non-terminal transitions so the critic
    still bootstraps through them.
    """
    env_seq, act_seq, learn_seq = np.random.SeedSequence(config.seed).spawn(3)
    env_rng = np.random.default_rng(env_seq)
    act_rng = np.random.default_rng(act_seq)
    learn_rng = np.random.default_rng(learn_seq)
    buf = ReplayBuffer(config.buffer_capacity, STATE_DIM, ACTION_DIM)
    log = TrainingLog(algorithm_name(agent), config.seed)
    total_steps = 0
    for ep in range(config.episodes):
        t0 = time.perf_counter()
        state = env.reset(env_rng)
        ret, losses = 0.0, []
        while True:
            if total_steps < config.warmup:
                action = act_rng.uniform(ACTION_LOW, ACTION_HIGH)
            else:
                action = policy_action(agent, state, act_rng, explore=True)
            next_state, reward, term = env.step(action)
            total_steps += 1
            ret += reward
            done = term in (Terminal.GOAL, Terminal.COLLISION)
            buf.add(state, action, reward, next_state, done)
            state = next_state
            if (total_steps > config.warmup and len(buf) >= config.batch_size
                    and total_steps % config.update_every == 0):
                out = _learn(agent, buf.sample(config.batch_size, learn_rng), learn_rng)
                if not all(math.isfinite(v) for v in out):
                    raise TrainingDivergedError({
                        "episode": ep, "step": env.steps, "total_steps": total_steps,
                        "losses": [float(v) for v in out], "algorithm": log.algorithm,
                    })
                losses.append(out)
            if term is not Terminal.NONE:
                break
        rec = EpisodeRecord(ep, float(ret), term.value, env.steps, time.perf_counter() - t0)
        log.records.append(rec)
        log.losses.append(tuple(np.mean(losses, axis=0)) if losses else ())
        if callback is not None:
            callback(rec)
    return log


def evaluate_policy(env: NavEnv, agent, episodes: int, seed: int):
    """Frozen-policy rollouts (no exploration); returns the episode records."""
    rng = np.random.default_rng(seed)
    out = []
    for ep in range(episodes):
        state = env.reset(rng)
        ret = 0.0
        while True:
            action = policy_action(agent, state, rng, explore=False)
            state, reward, term = env.step(action)
            ret += reward
            if term is not Terminal.NONE:
                break
        out.append(EpisodeRecord(ep, float(ret), term.value, env.steps))
    return out


def smooth_returns(returns, window: int = 25):
    """Mean return over consecutive non-overlapping windows of ``window`` episodes."""
    r = np.asarray(returns, dtype=float)
    n = len(r) // window
    return r[: n * window].reshape(n, window).mean(axis=1)
