"""Small fully connected networks with hand-written backpropagation."""
from __future__ import annotations

import numpy as np

_ACTIVATIONS = ("relu", "tanh", "identity")


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a, dout):
    if name == "relu":
        return dout * (z > 0)
    if name == "tanh":
        return dout * (1.0 - a * a)
    return dout


class Mlp:
    """Dense network ``sizes[0] -> ... -> sizes[-1]``.

    Hidden layers use ``hidden``; the last layer uses ``output``.  Parameters
    live in ``self.params`` as ``[W0, b0, W1, b1, ...]`` with ``W`` shaped
    (fan_in, fan_out), so every optimizer and checkpoint sees one flat list.
    """

    def __init__(self, sizes, rng: np.random.Generator, hidden="relu", output="identity",
                 dtype=np.float64, final_scale=1.0):
        if len(sizes) < 2:
            raise ValueError("an Mlp needs at least an input and an output size")
        if hidden not in _ACTIVATIONS or output not in _ACTIVATIONS:
            raise ValueError(f"activations must be in {_ACTIVATIONS}")
        self.sizes = tuple(int(s) for s in sizes)
        self.hidden = hidden
        self.output = output
        self.dtype = np.dtype(dtype)
        self.params = []
        n_layers = len(self.sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            if i == n_layers - 1:
                bound *= final_scale
            self.params.append(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(self.dtype))
            self.params.append(rng.uniform(-bound, bound, fan_out).astype(self.dtype))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def activation(self, layer: int) -> str:
        return self.output if layer == self.n_layers - 1 else self.hidden

    def forward(self, x):
        """Return (output, cache) for a batch ``x`` of shape (B, sizes[0])."""
        a = np.asarray(x, dtype=self.dtype)
        cache = []
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            z = a @ W + b
            out = _act(self.activation(i), z)
            cache.append((a, z, out))
            a = out
        return a, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dout, need_params=True):
        """Gradients of a scalar loss given dL/d(output).

        Returns (param_grads, dL/d(input)); ``param_grads`` is None when
        ``need_params`` is false.
        """
        grads = [None] * len(self.params) if need_params else None
        g = np.asarray(dout, dtype=self.dtype)
        for i in reversed(range(self.n_layers)):
            a_in, z, a_out = cache[i]
            g = _act_grad(self.activation(i), z, a_out, g)
            if need_params:
                grads[2 * i] = a_in.T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, g

    def copy(self) -> "Mlp":
        other = object.__new__(Mlp)
        other.__dict__.update(self.__dict__)
        other.params = [p.copy() for p in self.params]
        return other

    def load_from(self, other: "Mlp"):
        for dst, src in zip(self.params, other.params):
            dst[...] = src

    def soft_update_from(self, other: "Mlp", tau: float):
        """In place: self <- tau * other + (1 - tau) * self."""
        for dst, src in zip(self.params, other.params):
            dst *= 1.0 - tau
            dst += tau * src

    def shapes(self):
        return [p.shape for p in self.params]


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= lr_t * m / (np.sqrt(v) + self.eps)

    def state(self):
        return {"t": self.t, "m": self.m, "v": self.v}
