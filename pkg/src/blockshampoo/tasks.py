"""Small deterministic training tasks for exercising the optimizer.

Each task exposes ``init_params() -> list of layers``, ``loss(params)``
and ``grads(params)`` (full batch, closed form or manual backprop), all
deterministic given the construction seed.
"""

from __future__ import annotations

import numpy as np

from .linalg import frobenius_norm
from .shampoo import ShampooConfig, init_state, step


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))[None, :]


def random_spd(n: int, cond: float, seed: int, scale: float = 1.0) -> np.ndarray:
    """SPD matrix with prescribed condition number and largest eigenvalue ``scale``."""
    rng = np.random.default_rng(seed)
    q = random_orthogonal(n, rng)
    lam = np.geomspace(1.0 / cond, 1.0, n) * scale
    return (q * lam[None, :]) @ q.T


class QuadraticTask:
    """Convex quadratic 0.5 * tr(theta^T H theta) on a single matrix layer."""

    name = "quadratic"

    def __init__(self, n: int = 32, cond: float = 100.0, seed: int = 0):
        self.n = n
        self.h = random_spd(n, cond, seed)
        self._rng_init = np.random.default_rng(seed + 1)

    def init_params(self) -> list[np.ndarray]:
        return [self._rng_init.standard_normal((self.n, self.n))]

    def loss(self, params: list[np.ndarray]) -> float:
        theta = params[0]
        return 0.5 * float(np.sum(theta * (self.h @ theta)))

    def grads(self, params: list[np.ndarray]) -> list[np.ndarray]:
        return [self.h @ params[0]]


class LogisticRegressionTask:
    """Two-class softmax regression on a separable synthetic cloud.

    Layers: a (dims, 2) weight matrix and a (2,) bias, so both the 2-D
    and the 1-D preconditioner paths get exercised.
    """

    name = "logreg"

    def __init__(self, dims: int = 16, samples: int = 200, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.x = rng.standard_normal((samples, dims))
        w_true = rng.standard_normal(dims)
        margin = self.x @ w_true + 0.3 * rng.standard_normal(samples)
        self.labels = (margin > 0).astype(int)
        self.onehot = np.eye(2)[self.labels]
        self.dims = dims
        self._rng_init = np.random.default_rng(seed + 1)

    def init_params(self) -> list[np.ndarray]:
        return [0.01 * self._rng_init.standard_normal((self.dims, 2)), np.zeros(2)]

    def _probs(self, params):
        logits = self.x @ params[0] + params[1][None, :]
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def loss(self, params: list[np.ndarray]) -> float:
        probs = self._probs(params)
        picked = probs[np.arange(len(self.labels)), self.labels]
        return float(-np.mean(np.log(picked + 1e-300)))

    def grads(self, params: list[np.ndarray]) -> list[np.ndarray]:
        delta = (self._probs(params) - self.onehot) / len(self.labels)
        return [self.x.T @ delta, delta.sum(axis=0)]


class TinyMlpTask:
    """One-hidden-layer tanh MLP on a synthetic regression target."""

    name = "mlp"

    def __init__(self, widths: tuple[int, int, int] = (8, 16, 2), samples: int = 128, seed: int = 0):
        d_in, d_hidden, d_out = widths
        rng = np.random.default_rng(seed)
        self.x = rng.standard_normal((samples, d_in))
        teacher = rng.standard_normal((d_in, d_out))
        self.y = np.sin(self.x @ teacher)
        self.widths = widths
        self._rng_init = np.random.default_rng(seed + 1)

    def init_params(self) -> list[np.ndarray]:
        d_in, d_hidden, d_out = self.widths
        rng = self._rng_init
        return [
            rng.standard_normal((d_in, d_hidden)) / np.sqrt(d_in),
            np.zeros(d_hidden),
            rng.standard_normal((d_hidden, d_out)) / np.sqrt(d_hidden),
            np.zeros(d_out),
        ]

    def _forward(self, params):
        w1, b1, w2, b2 = params
        hidden = np.tanh(self.x @ w1 + b1[None, :])
        return hidden, hidden @ w2 + b2[None, :]

    def loss(self, params: list[np.ndarray]) -> float:
        _, out = self._forward(params)
        return float(np.mean((out - self.y) ** 2))

    def grads(self, params: list[np.ndarray]) -> list[np.ndarray]:
        w1, b1, w2, b2 = params
        hidden, out = self._forward(params)
        n = len(self.x)
        d_out = 2.0 * (out - self.y) / (n * self.y.shape[1])
        d_w2 = hidden.T @ d_out
        d_b2 = d_out.sum(axis=0)
        d_hidden = (d_out @ w2.T) * (1.0 - hidden**2)
        d_w1 = self.x.T @ d_hidden
        d_b1 = d_hidden.sum(axis=0)
        return [d_w1, d_b1, d_w2, d_b2]


TASKS = {
    "quadratic": QuadraticTask,
    "logreg": LogisticRegressionTask,
    "mlp": TinyMlpTask,
}


def run_training(task, cfg: ShampooConfig, steps: int, seed: int = 0):
    """Full-batch training loop; yields one metrics row per step.

    Rows are (step, loss_before_update, grad_norm, update_norm,
    refresh_flag) with step counted from 1.
    """
    params = task.init_params()
    state = init_state(params, cfg)
    rows = []
    for t in range(steps):
        loss = task.loss(params)
        grads = task.grads(params)
        grad_norm = np.sqrt(sum(frobenius_norm(g) ** 2 for g in grads))
        refreshed = state.step % cfg.update_freq == 0
        new_params, state = step(state, params, grads, cfg, seed=seed)
        update_norm = np.sqrt(
            sum(frobenius_norm(p_new - p_old) ** 2 for p_new, p_old in zip(new_params, params))
        )
        rows.append((t + 1, loss, float(grad_norm), float(update_norm), int(refreshed)))
        params = new_params
    return rows, params
