"""Soft actor-critic without a separate value network.

Critics see the action rescaled to [-1, 1]^2 (the tanh space of the policy);
the environment sees the box action.  Log-probabilities are densities of the
tanh-space action.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .buffer import Batch
from .env import ACTION_DIM, ACTION_HIGH, ACTION_LOW, STATE_DIM
from .nn import Adam, Mlp

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def box_to_unit(a):
    return 2.0 * (np.asarray(a) - ACTION_LOW) / (ACTION_HIGH - ACTION_LOW) - 1.0


def unit_to_box(u):
    return ACTION_LOW + (np.asarray(u) + 1.0) * 0.5 * (ACTION_HIGH - ACTION_LOW)


def log1m_tanh_sq(u):
    """log(1 - tanh(u)^2), stable for large |u|."""
    u = np.asarray(u)
    return 2.0 * (math.log(2.0) - np.abs(u) - np.logaddexp(0.0, -2.0 * np.abs(u)))


@dataclass
class SacConfig:
    hidden: tuple = (256, 256)
    lr: float = 3e-4
    gamma: float = 0.99
    tau: float = 0.005
    init_alpha: float = 1.0
    target_entropy: float = -float(ACTION_DIM)
    auto_alpha: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")


class SacAgent:
    def __init__(self, config: Optional[SacConfig] = None, rng: Optional[np.random.Generator] = None,
                 state_dim: int = STATE_DIM):
        self.config = cfg = config or SacConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        dt = np.dtype(cfg.dtype)
        h = tuple(cfg.hidden)
        self.policy = Mlp((state_dim, *h, 2 * ACTION_DIM), rng, dtype=dt)
        self.q1 = Mlp((state_dim + ACTION_DIM, *h, 1), rng, dtype=dt)
        self.q2 = Mlp((state_dim + ACTION_DIM, *h, 1), rng, dtype=dt)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.log_alpha = np.array(math.log(cfg.init_alpha))
        self.policy_opt = Adam(self.policy.params, cfg.lr)
        self.q1_opt = Adam(self.q1.params, cfg.lr)
        self.q2_opt = Adam(self.q2.params, cfg.lr)
        self.alpha_opt = Adam([self.log_alpha], cfg.lr)
        self.updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))

    def networks(self) -> dict:
        return {"policy": self.policy, "q1": self.q1, "q2": self.q2,
                "q1_target": self.q1_target, "q2_target": self.q2_target}

    # -- policy ---------------------------------------------------------
    def policy_forward(self, states, eps):
        """Reparameterised sample.  Returns (u_tanh, log_prob, aux)."""
        out, cache = self.policy.forward(states)
        mean = out[:, :ACTION_DIM]
        raw_ls = out[:, ACTION_DIM:]
        log_std = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
        std = np.exp(log_std)
        pre = mean + std * eps
        a = np.tanh(pre)
        logp = np.sum(-0.5 * eps ** 2 - log_std - _HALF_LOG_2PI - log1m_tanh_sq(pre), axis=1)
        aux = dict(cache=cache, raw_ls=raw_ls, std=std, eps=eps, a=a)
        return a, logp, aux

    def policy_backward(self, aux, d_a, d_logp):
        """Parameter gradients given dL/d(tanh action) and dL/d(log_prob)."""
        a, std, eps = aux["a"], aux["std"], aux["eps"]
        # d logp / d pre = 2 tanh(pre); d a / d pre = 1 - a^2
        d_pre = d_a * (1.0 - a * a) + d_logp[:, None] * 2.0 * a
        d_mean = d_pre
        d_ls = d_pre * std * eps - d_logp[:, None]
        inside = (aux["raw_ls"] > LOG_STD_MIN) & (aux["raw_ls"] < LOG_STD_MAX)
        d_ls = d_ls * inside
        grads, _ = self.policy.backward(aux["cache"], np.concatenate([d_mean, d_ls], axis=1))
        return grads

    # -- losses ---------------------------------------------------------
    def q_target(self, batch: Batch, next_eps) -> np.ndarray:
        g = self.config.gamma
        a2, logp2, _ = self.policy_forward(batch.next_states, next_eps)
        x2 = np.concatenate([batch.next_states, a2], axis=1)
        qmin = np.minimum(self.q1_target(x2)[:, 0], self.q2_target(x2)[:, 0])
        soft = qmin - self.alpha * logp2
        return batch.rewards + g * (1.0 - batch.dones) * soft

    def q_loss_and_grads(self, q: Mlp, batch: Batch, y):
        x = np.concatenate([batch.states, box_to_unit(batch.actions)], axis=1)
        pred, cache = q.forward(x)
        err = pred[:, 0] - y
        loss = float(np.mean(err ** 2))
        dout = (2.0 / len(y)) * err[:, None]
        grads, _ = q.backward(cache, dout)
        return loss, grads

    def policy_loss_and_grads(self, batch: Batch, eps):
        a, logp, aux = self.policy_forward(batch.states, eps)
        x = np.concatenate([batch.states, a], axis=1)
        q1o, c1 = self.q1.forward(x)
        q2o, c2 = self.q2.forward(x)
        use1 = q1o[:, 0] <= q2o[:, 0]
        qmin = np.where(use1, q1o[:, 0], q2o[:, 0])
        n = len(logp)
        alpha = self.alpha
        loss = float(np.mean(alpha * logp - qmin))
        dq = -np.ones((n, 1)) / n
        _, dx1 = self.q1.backward(c1, dq * use1[:, None], need_params=False)
        _, dx2 = self.q2.backward(c2, dq * (~use1)[:, None], need_params=False)
        d_a = (dx1 + dx2)[:, -ACTION_DIM:]
        d_logp = np.full(n, alpha / n)
        grads = self.policy_backward(aux, d_a, d_logp)
        return loss, grads, logp

    def alpha_loss_and_grad(self, logp):
        target = logp + self.config.target_entropy
        loss = float(-np.mean(self.log_alpha * target))
        return loss, np.array(-np.mean(target))


def sac_act(agent: SacAgent, state, deterministic: bool = False,
            rng: Optional[np.random.Generator] = None, eps=None):
    """Box action and tanh-space log-probability for one state."""
    s = np.asarray(state, dtype=float)[None, :]
    if deterministic:
        out = agent.policy(s)
        a = np.tanh(out[0, :ACTION_DIM])
        return unit_to_box(a), float("nan")
    if eps is None:
        if rng is None:
            raise ValueError("a stochastic action needs an rng")
        eps = rng.standard_normal((1, ACTION_DIM))
    a, logp, _ = agent.policy_forward(s, np.asarray(eps, dtype=float).reshape(1, ACTION_DIM))
    return np.clip(unit_to_box(a[0]), ACTION_LOW, ACTION_HIGH), float(logp[0])


def compute_q_target(agent: SacAgent, batch: Batch, rng: np.random.Generator, next_eps=None):
    if next_eps is None:
        next_eps = rng.standard_normal((len(batch), ACTION_DIM))
    return agent.q_target(batch, next_eps)


def train_step_sac(agent: SacAgent, batch: Batch, rng: np.random.Generator):
    """One gradient step on both critics, the policy and the temperature."""
    cfg = agent.config
    y = compute_q_target(agent, batch, rng)
    q1_loss, g1 = agent.q_loss_and_grads(agent.q1, batch, y)
    q2_loss, g2 = agent.q_loss_and_grads(agent.q2, batch, y)
    agent.q1_opt.step(g1)
    agent.q2_opt.step(g2)
    eps = rng.standard_normal((len(batch), ACTION_DIM))
    pi_loss, gp, logp = agent.policy_loss_and_grads(batch, eps)
    agent.policy_opt.step(gp)
    alpha_loss = 0.0
    if cfg.auto_alpha:
        alpha_loss, ga = agent.alpha_loss_and_grad(logp)
        agent.alpha_opt.step([ga])
    agent.q1_target.soft_update_from(agent.q1, cfg.tau)
    agent.q2_target.soft_update_from(agent.q2, cfg.tau)
    agent.updates += 1
    return q1_loss, q2_loss, pi_loss, alpha_loss
