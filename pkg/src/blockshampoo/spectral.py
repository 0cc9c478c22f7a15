"""Largest-eigenvalue estimation and solver input scaling.

Iterative inverse-root methods need the input spectrum inside their
convergence region.  Dividing by the Frobenius norm always works but can
overshoot the largest eigenvalue by orders of magnitude, pushing the
spectrum toward zero where the iterations are slow.  The alternative runs
power iteration on a pool of random starting vectors and keeps the best
Rayleigh quotient; dividing by twice that estimate parks the top of the
spectrum near one half.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSpectrumError
from .linalg import check_symmetric, frobenius_norm, matmul


@dataclass(frozen=True)
class Frobenius:
    """Scale solver inputs by the Frobenius norm."""


@dataclass(frozen=True)
class PowerIterationScaling:
    """Scale solver inputs by twice the pooled power-iteration estimate."""

    pool: int = 16
    iters: int = 30

    def __post_init__(self) -> None:
        if self.pool < 1:
            raise ValueError("pool must be >= 1")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")


ScalingMode = Frobenius | PowerIterationScaling


@dataclass(frozen=True)
class SpectralEstimate:
    lam: float
    vector: np.ndarray


_RETRY_SALT = 0x5EED


def block_seed(seed: int, index: int) -> int:
    """Deterministic per-block child seed."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def rayleigh_quotient(a: np.ndarray, x: np.ndarray) -> float:
    check_symmetric(a)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    denom = float(x @ x)
    if denom == 0.0:
        raise ValueError("rayleigh quotient of the zero vector is undefined")
    return float(x @ (a @ x)) / denom


def _start_vectors(n: int, pool: int, seed: int) -> np.ndarray:
    # Drawn row-per-vector so the first vector is identical across pool
    # sizes for a given seed (max-selection is then monotone in pool).
    rng = np.random.default_rng(seed)
    v = rng.uniform(-1.0, 1.0, size=(pool, n)).T
    norms = np.linalg.norm(v, axis=0)
    norms[norms == 0.0] = 1.0
    return v / norms


def _run_pool(a: np.ndarray, v: np.ndarray, iters: int) -> tuple[np.ndarray, np.ndarray]:
    for _ in range(iters):
        w = matmul(a, v)
        norms = np.linalg.norm(w, axis=0)
        live = norms > 0.0
        v = np.where(live[None, :], w / np.where(live, norms, 1.0)[None, :], 0.0)
    quotients = np.einsum("ij,ij->j", v, matmul(a, v))
    return v, quotients


def multi_power_iteration(a: np.ndarray, pool: int, iters: int, seed: int) -> SpectralEstimate:
    """Pooled power iteration; returns the best Rayleigh quotient found.

    Deterministic given (a, pool, iters, seed).  A zero matrix yields a
    zero estimate; a nonzero matrix whose pool collapsed entirely (start
    vectors in the null space) is retried once with a reseeded pool.
    """
    check_symmetric(a)
    if pool < 1 or iters < 1:
        raise ValueError("pool and iters must be >= 1")
    n = a.shape[0]
    v0 = _start_vectors(n, pool, seed)
    v, quotients = _run_pool(a, v0, iters)
    alive = np.linalg.norm(v, axis=0) > 0.0
    if not alive.any() or quotients[alive].max() == 0.0:
        if frobenius_norm(a) == 0.0:
            return SpectralEstimate(lam=0.0, vector=v0[:, 0])
        v, quotients = _run_pool(a, _start_vectors(n, pool, block_seed(seed, _RETRY_SALT)), iters)
        alive = np.linalg.norm(v, axis=0) > 0.0
        if not alive.any() or quotients[alive].max() == 0.0:
            raise DegenerateSpectrumError("power iteration pool collapsed twice on a nonzero matrix")
    quotients = np.where(alive, quotients, -np.inf)
    best = int(np.argmax(quotients))
    vec = v[:, best]
    vec = vec / np.linalg.norm(vec)
    return SpectralEstimate(lam=rayleigh_quotient(a, vec), vector=vec)


def batched_multi_power_iteration(a: np.ndarray, pool: int, iters: int, seed: int) -> list[SpectralEstimate]:
    """Per-block estimates; block i uses the derived seed block_seed(seed, i)."""
    return [multi_power_iteration(a[i], pool, iters, block_seed(seed, i)) for i in range(a.shape[0])]


def scale_factor(a: np.ndarray, mode: ScalingMode, seed: int = 0) -> float:
    """Divisor that brings the spectrum into the solvers' convergence region."""
    if isinstance(mode, Frobenius):
        norm = frobenius_norm(a)
        if norm == 0.0:
            raise ValueError("cannot scale the zero matrix")
        return norm
    est = multi_power_iteration(a, mode.pool, mode.iters, seed)
    if est.lam <= 0.0:
        raise ValueError("cannot scale a matrix with a zero spectral estimate")
    return 2.0 * est.lam
