"""Matmul-only iterations for inverse matrix roots.

Two methods, both from the Newton family:

* Coupled-Newton tracks a pair (X_k, M_k) with X_k -> A^(-1/p) and
  M_k -> I.  Requires the spectrum of A inside (0, (p+1)*c^p); with the
  default c = (1+p)^(-1/p) that region is (0, 1).
* Newton-Denman-Beavers tracks (Y_k, Z_k) with Y_k -> A^(1/2) and
  Z_k -> A^(-1/2).  Requires ||I - A||_2 < 1.  The first iteration is
  special-cased: E_1 = 1.5*I - 0.5*A and Z_1 = E_1 are closed forms, so
  only Y_1 = A @ E_1 costs a matmul.

Both stop when the auxiliary iterate is within ``tolerance`` of the
identity in max-norm (the convergence metric each method tracks anyway).
Chaining two Denman-Beavers runs gives the inverse fourth root.

The batched variants run one shared loop over a block stack: a converged
block has its update factor replaced by the identity, which freezes its
value bit-for-bit while the remaining blocks continue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, NumericalError
from .linalg import PrecisionMode, bmm, identity_like, matmul, quantize


@dataclass
class IterationReport:
    iterations: int
    residual: float
    converged: bool


@dataclass(frozen=True)
class CnConfig:
    p: int = 2
    c: float | None = None  # None -> (1+p)^(-1/p), so (p+1)c^p = 1
    tolerance: float = 1e-10
    max_iters: int = 100

    def __post_init__(self) -> None:
        if self.p not in (2, 4):
            raise ValueError(f"p must be 2 or 4, got {self.p}")
        if self.c is not None and self.c <= 0:
            raise ValueError("c must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    @property
    def resolved_c(self) -> float:
        return self.c if self.c is not None else (1.0 + self.p) ** (-1.0 / self.p)


@dataclass(frozen=True)
class NdbConfig:
    tolerance: float = 1e-10
    max_iters: int = 100

    def __post_init__(self) -> None:
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


class _DivergenceWatch:
    """Flags residual growth of more than 10x over 3 consecutive rises."""

    def __init__(self) -> None:
        self.history: list[float] = []

    def update(self, residual: float) -> bool:
        h = self.history
        h.append(residual)
        if len(h) > 4:
            del h[0]
        return (
            len(h) == 4
            and h[3] > h[2] > h[1] > h[0]
            and h[3] > 10.0 * h[0]
        )


def _max_identity_distance(m: np.ndarray) -> float:
    return float(np.abs(m - identity_like(m)).max())


def coupled_newton(
    a: np.ndarray, cfg: CnConfig, mode: PrecisionMode = PrecisionMode.FULL64
) -> tuple[np.ndarray, IterationReport]:
    """Inverse p-th root of a via the coupled Newton iteration.

    Costs 3 matmuls per iteration for p=2 and 4 for p=4 (the p-th power
    of the correction factor is squared, then squared again).
    """
    c = cfg.resolved_c
    p = cfg.p
    n = a.shape[0]
    x = quantize(np.eye(n) / c, mode)
    m = quantize(a / c**p, mode)
    watch = _DivergenceWatch()
    residual = np.inf
    for k in range(1, cfg.max_iters + 1):
        corr = quantize((1.0 + 1.0 / p) * np.eye(n) - m / p, mode)
        x = matmul(x, corr, mode)
        cp = matmul(corr, corr, mode)
        if p == 4:
            cp = matmul(cp, cp, mode)
        m = matmul(cp, m, mode)
        residual = _max_identity_distance(m)
        if not np.isfinite(residual):
            raise NumericalError(f"coupled Newton produced non-finite values at iteration {k}")
        if residual <= cfg.tolerance:
            return x, IterationReport(iterations=k, residual=residual, converged=True)
        if watch.update(residual):
            raise ConvergenceError(f"coupled Newton diverging at iteration {k} (residual {residual:.3e})")
    return x, IterationReport(iterations=cfg.max_iters, residual=residual, converged=False)


def newton_db(a: np.ndarray, cfg: NdbConfig) -> tuple[np.ndarray, np.ndarray, IterationReport]:
    """Square root and inverse square root of a, computed jointly.

    Costs 1 matmul on the first (closed-form) iteration, 3 afterwards.
    Full64 only: reduced precision destabilizes this iteration.
    """
    n = a.shape[0]
    e = 1.5 * np.eye(n) - 0.5 * a
    y = matmul(a, e)
    z = e
    residual = _max_identity_distance(e)
    if residual <= cfg.tolerance:
        return y, z, IterationReport(iterations=1, residual=residual, converged=True)
    watch = _DivergenceWatch()
    watch.update(residual)
    for k in range(2, cfg.max_iters + 1):
        e = 0.5 * (3.0 * np.eye(n) - matmul(z, y))
        y = matmul(y, e)
        z = matmul(e, z)
        residual = _max_identity_distance(e)
        if not np.isfinite(residual):
            raise NumericalError(f"Denman-Beavers produced non-finite values at iteration {k}")
        if residual <= cfg.tolerance:
            return y, z, IterationReport(iterations=k, residual=residual, converged=True)
        if watch.update(residual):
            raise ConvergenceError(f"Denman-Beavers diverging at iteration {k} (residual {residual:.3e})")
    return y, z, IterationReport(iterations=cfg.max_iters, residual=residual, converged=False)


def ndb_inverse_fourth_root(a: np.ndarray, cfg: NdbConfig) -> tuple[np.ndarray, IterationReport]:
    """A^(-1/4) as the inverse square root of A^(1/2)."""
    sqrt_a, _, first = newton_db(a, cfg)
    _, inv_root, second = newton_db(sqrt_a, cfg)
    report = IterationReport(
        iterations=first.iterations + second.iterations,
        residual=max(first.residual, second.residual),
        converged=first.converged and second.converged,
    )
    return inv_root, report


def scalar_iteration_count(
    x: float, method: str, p: int = 2, tolerance: float = 1e-10, max_iters: int = 100
) -> IterationReport:
    """Iterations the 1x1 instance needs to reach the exact scalar root.

    Convergence is measured as relative error of the running estimate
    against x^(-1/p); the residual reported is that relative error.
    """
    if not 0.0 < x < 1.0:
        raise ValueError(f"x must lie in (0, 1), got {x}")
    if method == "cn":
        if p not in (2, 4):
            raise ValueError(f"p must be 2 or 4, got {p}")
        target = x ** (-1.0 / p)
        c = (1.0 + p) ** (-1.0 / p)
        est = 1.0 / c
        m = x / c**p
        for k in range(1, max_iters + 1):
            corr = (1.0 + 1.0 / p) - m / p
            est = est * corr
            m = corr**p * m
            rel = abs(est - target) / target
            if rel <= tolerance:
                return IterationReport(iterations=k, residual=rel, converged=True)
        return IterationReport(iterations=max_iters, residual=rel, converged=False)
    if method == "ndb":
        if p != 2:
            raise ValueError("the Denman-Beavers scalar study computes inverse square roots (p=2)")
        target = x**-0.5
        e = 1.5 - 0.5 * x
        y = x * e
        z = e
        rel = abs(z - target) / target
        if rel <= tolerance:
            return IterationReport(iterations=1, residual=rel, converged=True)
        for k in range(2, max_iters + 1):
            e = 0.5 * (3.0 - z * y)
            y = y * e
            z = e * z
            rel = abs(z - target) / target
            if rel <= tolerance:
                return IterationReport(iterations=k, residual=rel, converged=True)
        return IterationReport(iterations=max_iters, residual=rel, converged=False)
    raise ValueError(f"unknown method {method!r}")


def _per_block_identity_distance(m: np.ndarray) -> np.ndarray:
    return np.abs(m - identity_like(m)).max(axis=(1, 2))


def batched_coupled_newton(
    a: np.ndarray, cfg: CnConfig, mode: PrecisionMode = PrecisionMode.FULL64
) -> tuple[np.ndarray, list[IterationReport]]:
    """Coupled Newton over a block stack with per-block freezing.

    Diverging or non-finite blocks are frozen and reported with
    ``converged=False``; they do not abort their siblings.
    """
    n_blocks, dim = a.shape[0], a.shape[1]
    c = cfg.resolved_c
    p = cfg.p
    eye = np.eye(dim)
    x = quantize(np.broadcast_to(eye / c, a.shape).copy(), mode)
    m = quantize(a / c**p, mode)
    active = np.ones(n_blocks, dtype=bool)
    reports: list[IterationReport | None] = [None] * n_blocks
    watches = [_DivergenceWatch() for _ in range(n_blocks)]
    residuals = np.full(n_blocks, np.inf)
    for k in range(1, cfg.max_iters + 1):
        corr = quantize((1.0 + 1.0 / p) * identity_like(m) - m / p, mode)
        corr[~active] = eye
        x = bmm(x, corr, mode)
        cp = bmm(corr, corr, mode)
        if p == 4:
            cp = bmm(cp, cp, mode)
        m = bmm(cp, m, mode)
        block_res = _per_block_identity_distance(m)
        for i in np.nonzero(active)[0]:
            residuals[i] = block_res[i]
            if not np.isfinite(block_res[i]):
                reports[i] = IterationReport(iterations=k, residual=float(block_res[i]), converged=False)
                active[i] = False
            elif block_res[i] <= cfg.tolerance:
                reports[i] = IterationReport(iterations=k, residual=float(block_res[i]), converged=True)
                active[i] = False
            elif watches[i].update(float(block_res[i])):
                reports[i] = IterationReport(iterations=k, residual=float(block_res[i]), converged=False)
                active[i] = False
        if not active.any():
            break
    for i in range(n_blocks):
        if reports[i] is None:
            reports[i] = IterationReport(iterations=cfg.max_iters, residual=float(residuals[i]), converged=False)
    return x, reports  # type: ignore[return-value]


def batched_newton_db(
    a: np.ndarray, cfg: NdbConfig
) -> tuple[np.ndarray, np.ndarray, list[IterationReport]]:
    """Denman-Beavers over a block stack with per-block freezing."""
    n_blocks = a.shape[0]
    eye3 = identity_like(a)
    e = 1.5 * eye3 - 0.5 * a
    y = bmm(a, e)
    z = e.copy()
    block_res = _per_block_identity_distance(e)
    active = np.ones(n_blocks, dtype=bool)
    reports: list[IterationReport | None] = [None] * n_blocks
    watches = [_DivergenceWatch() for _ in range(n_blocks)]
    residuals = block_res.copy()
    for i in range(n_blocks):
        if block_res[i] <= cfg.tolerance:
            reports[i] = IterationReport(iterations=1, residual=float(block_res[i]), converged=True)
            active[i] = False
        else:
            watches[i].update(float(block_res[i]))
    eye = np.eye(a.shape[1])
    k = 1
    while active.any() and k < cfg.max_iters:
        k += 1
        e = 0.5 * (3.0 * eye3 - bmm(z, y))
        e[~active] = eye
        y = bmm(y, e)
        z = bmm(e, z)
        block_res = _per_block_identity_distance(e)
        for i in np.nonzero(active)[0]:
            residuals[i] = block_res[i]
            if not np.isfinite(block_res[i]):
                reports[i] = IterationReport(iterations=k, residual=float(block_res[i]), converged=False)
                active[i] = False
            elif block_res[i] <= cfg.tolerance:
                reports[i] = IterationReport(iterations=k, residual=float(block_res[i]), converged=True)
                active[i] = False
            elif watches[i].update(float(block_res[i])):
                reports[i] = IterationReport(iterations=k, residual=float(block_res[i]), converged=False)
                active[i] = False
    for i in range(n_blocks):
        if reports[i] is None:
            reports[i] = IterationReport(iterations=cfg.max_iters, residual=float(residuals[i]), converged=False)
    return y, z, reports  # type: ignore[return-value]
