"""Deterministic policy gradient agent with squashed velocity heads."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .buffer import Batch
from .env import ACTION_DIM, ACTION_HIGH, ACTION_LOW, STATE_DIM
from .nn import Adam, Mlp
from .sac import box_to_unit

HALF_RANGE = 0.5 * (ACTION_HIGH - ACTION_LOW)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class DdpgConfig:
    hidden: tuple = (512, 512, 512)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    gamma: float = 0.99
    tau: float = 0.005
    noise_sigma: float = 0.1       # fraction of the action half-range
    noise_sigma_final: float = 0.1
    noise_decay_steps: int = 1
    dtype: str = "float64"

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")


def actor_heads(z):
    """Pre-activations (B, 2) -> box actions: 0.2*sigmoid and 2*tanh."""
    z = np.asarray(z)
    v = ACTION_HIGH[0] * _sigmoid(z[:, 0])
    w = ACTION_HIGH[1] * np.tanh(z[:, 1])
    return np.stack([v, w], axis=1)


def actor_heads_grad(z, d_action):
    z = np.asarray(z)
    s = _sigmoid(z[:, 0])
    t = np.tanh(z[:, 1])
    return np.stack([d_action[:, 0] * ACTION_HIGH[0] * s * (1.0 - s),
                     d_action[:, 1] * ACTION_HIGH[1] * (1.0 - t * t)], axis=1)


class DdpgAgent:
    def __init__(self, config: Optional[DdpgConfig] = None, rng: Optional[np.random.Generator] = None,
                 state_dim: int = STATE_DIM):
        self.config = cfg = config or DdpgConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        dt = np.dtype(cfg.dtype)
        h = tuple(cfg.hidden)
        self.actor = Mlp((state_dim, *h, ACTION_DIM), rng, dtype=dt)
        self.critic = Mlp((state_dim + ACTION_DIM, *h, 1), rng, dtype=dt)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = Adam(self.actor.params, cfg.actor_lr)
        self.critic_opt = Adam(self.critic.params, cfg.critic_lr)
        self.updates = 0
        self.act_steps = 0

    def networks(self) -> dict:
        return {"actor": self.actor, "critic": self.critic,
                "actor_target": self.actor_target, "critic_target": self.critic_target}

    def noise_sigma(self) -> float:
        cfg = self.config
        frac = min(1.0, self.act_steps / max(cfg.noise_decay_steps, 1))
        return cfg.noise_sigma + frac * (cfg.noise_sigma_final - cfg.noise_sigma)

    def policy(self, states, target=False):
        net = self.actor_target if target else self.actor
        return actor_heads(net(states))

    def critic_target_values(self, batch: Batch) -> np.ndarray:
        a2 = self.policy(batch.next_states, target=True)
        x2 = np.concatenate([batch.next_states, box_to_unit(a2)], axis=1)
        q2 = self.critic_target(x2)[:, 0]
        return batch.rewards + self.config.gamma * (1.0 - batch.dones) * q2

    def critic_loss_and_grads(self, batch: Batch, y):
        x = np.concatenate([batch.states, box_to_unit(batch.actions)], axis=1)
        pred, cache = self.critic.forward(x)
        err = pred[:, 0] - y
        loss = float(np.mean(err ** 2))
        grads, _ = self.critic.backward(cache, (2.0 / len(y)) * err[:, None])
        return loss, grads

    def actor_loss_and_grads(self, batch: Batch):
        z, a_cache = self.actor.forward(batch.states)
        a = actor_heads(z)
        x = np.concatenate([batch.states, box_to_unit(a)], axis=1)
        q, c_cache = self.critic.forward(x)
        n = len(q)
        loss = float(-np.mean(q))
        _, dx = self.critic.backward(c_cache, -np.ones((n, 1)) / n, need_params=False)
        # box_to_unit has slope 1/HALF_RANGE
        d_action = dx[:, -ACTION_DIM:] / HALF_RANGE
        grads, _ = self.actor.backward(a_cache, actor_heads_grad(z, d_action))
        return loss, grads


def ddpg_act(agent: DdpgAgent, state, explore: bool = False,
             rng: Optional[np.random.Generator] = None, noise=None) -> np.ndarray:
    """Actor action; with ``explore`` add Gaussian noise and clamp to the box."""
    a = agent.policy(np.asarray(state, dtype=float)[None, :])[0]
    if explore:
        if noise is None:
            if rng is None:
                raise ValueError("exploration needs an rng")
            noise = rng.normal(0.0, agent.noise_sigma() * HALF_RANGE)
        a = a + np.asarray(noise, dtype=float)
        agent.act_steps += 1
    return np.clip(a, ACTION_LOW, ACTION_HIGH)


def train_step_ddpg(agent: DdpgAgent, batch: Batch):
    """One critic and one actor step followed by soft target updates."""
    cfg = agent.config
    y = agent.critic_target_values(batch)
    critic_loss, gc = agent.critic_loss_and_grads(batch, y)
    agent.critic_opt.step(gc)
    actor_loss, ga = agent.actor_loss_and_grads(batch)
    agent.actor_opt.step(ga)
    agent.actor_target.soft_update_from(agent.actor, cfg.tau)
    agent.critic_target.soft_update_from(agent.critic, cfg.tau)
    agent.updates += 1
    return critic_loss, actor_loss
