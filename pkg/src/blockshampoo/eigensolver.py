"""Symmetric eigendecomposition and EVD-based inverse roots.

The decomposition uses cyclic Jacobi rotations: each sweep visits every
off-diagonal pair exactly once, organized into round-robin rounds of
disjoint pairs so a whole round can be applied with vectorized rotations.
Rotations on disjoint index pairs commute, so the result is the same as
applying them one at a time.

The dampening heuristics regularize the spectrum before inversion:

* ``LEGACY`` reproduces the widely deployed behavior of decomposing
  A + eps*I and then clamping with an extra +eps (so a PSD matrix
  effectively gains 2*eps on its smallest eigenvalue).
* ``SHIFTED_RELU`` works on the corrected spectrum (eps subtracted back)
  and zeroes everything below eps, yielding a low-rank inverse.
* ``ABS`` takes absolute values of the corrected spectrum, plus eps as a
  strict lower bound.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DegenerateSpectrumError
from .linalg import check_symmetric, matmul


class HeuristicKind(enum.Enum):
    LEGACY = "legacy"
    SHIFTED_RELU = "relu"
    ABS = "abs"


@dataclass(frozen=True)
class DampeningHeuristic:
    kind: HeuristicKind
    epsilon: float = 1e-10

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class EigenDecomposition:
    eigenvalues: np.ndarray   # ascending
    eigenvectors: np.ndarray  # column i pairs with eigenvalues[i]


def _round_robin_rounds(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # Circle-method schedule: every unordered pair appears in exactly one
    # round per sweep, and pairs within a round are disjoint.
    m = n if n % 2 == 0 else n + 1
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            p, q = players[i], players[m - 1 - i]
            if p < n and q < n:
                ps.append(min(p, q))
                qs.append(max(p, q))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _off_diagonal_norm(a: np.ndarray) -> float:
    b = a.copy()
    np.fill_diagonal(b, 0.0)
    return float(np.linalg.norm(b))


def _jacobi(a: np.ndarray, tol: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray, int]:
    a = a.copy()
    n = a.shape[0]
    vecs = np.eye(n)
    if n == 1:
        return np.diag(a).copy(), vecs, 0
    thresh = tol * np.linalg.norm(a)
    # Pairs below this magnitude cannot move the off-norm above thresh.
    skip = 0.1 * thresh / n
    rounds = _round_robin_rounds(n)
    sweeps = 0
    converged = _off_diagonal_norm(a) <= thresh
    while not converged and sweeps < max_sweeps:
        sweeps += 1
        for p, q in rounds:
            apq = a[p, q]
            live = np.abs(apq) > skip
            if not live.any():
                continue
            p_, q_ = p[live], q[live]
            apq = a[p_, q_]
            tau = (a[q_, q_] - a[p_, p_]) / (2.0 * apq)
            t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t = np.where(tau == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            rp, rq = a[p_, :], a[q_, :]
            a[p_, :] = c[:, None] * rp - s[:, None] * rq
            a[q_, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p_], a[:, q_]
            a[:, p_] = c[None, :] * cp - s[None, :] * cq
            a[:, q_] = s[None, :] * cp + c[None, :] * cq
            vp, vq = vecs[:, p_], vecs[:, q_]
            vecs[:, p_] = c[None, :] * vp - s[None, :] * vq
            vecs[:, q_] = s[None, :] * vp + c[None, :] * vq
        converged = _off_diagonal_norm(a) <= thresh
    if not converged:
        raise ConvergenceError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
    lam = np.diag(a).copy()
    order = np.argsort(lam, kind="stable")
    return lam[order], vecs[:, order], sweeps


def eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> EigenDecomposition:
    """Full symmetric eigendecomposition, eigenvalues ascending."""
    check_symmetric(a)
    lam, vecs, _ = _jacobi(a, tol, max_sweeps)
    return EigenDecomposition(eigenvalues=lam, eigenvectors=vecs)


def eigh_with_sweeps(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[EigenDecomposition, int]:
    check_symmetric(a)
    lam, vecs, sweeps = _jacobi(a, tol, max_sweeps)
    return EigenDecomposition(eigenvalues=lam, eigenvectors=vecs), sweeps


def dampen_spectrum(lam: np.ndarray, heuristic: DampeningHeuristic) -> np.ndarray:
    """Process the spectrum of (A + eps*I) according to the heuristic.

    ``lam`` must be the eigenvalues returned for A + eps*I.  LEGACY keeps
    the historical clamp (raw + 2*eps for PSD input); the other two first
    subtract eps back out ("corrected spectrum") and then filter.
    """
    eps = heuristic.epsilon
    if heuristic.kind is HeuristicKind.LEGACY:
        return lam - min(float(lam.min()), 0.0) + eps
    corrected = lam - eps
    return dampen_corrected(corrected, heuristic)


def dampen_corrected(corrected: np.ndarray, heuristic: DampeningHeuristic) -> np.ndarray:
    """Apply the SHIFTED_RELU / ABS filters to an eps-corrected spectrum."""
    eps = heuristic.epsilon
    if heuristic.kind is HeuristicKind.SHIFTED_RELU:
        return np.maximum(corrected - eps, 0.0)
    if heuristic.kind is HeuristicKind.ABS:
        return np.abs(corrected) + eps
    raise ValueError(f"heuristic {heuristic.kind} does not operate on corrected spectra")


def evd_inverse_root(a: np.ndarray, p: int, heuristic: DampeningHeuristic) -> np.ndarray:
    """Inverse p-th root via eigendecomposition with dampened spectrum.

    Eigenvalues zeroed by SHIFTED_RELU contribute nothing, so the result
    is a rank-deficient pseudo-inverse root in that case.
    """
    if p not in (2, 4):
        raise ValueError(f"p must be 2 or 4, got {p}")
    eps = heuristic.epsilon
    dec = eigh(a + eps * np.eye(a.shape[0]))
    processed = dampen_spectrum(dec.eigenvalues, heuristic)
    if not (processed > 0).any():
        raise DegenerateSpectrumError("all eigenvalues removed by dampening heuristic")
    inv = np.where(processed > 0, np.power(processed, -1.0 / p, where=processed > 0), 0.0)
    q = dec.eigenvectors
    return matmul(q * inv[None, :], q.T)


def batched_evd_inverse_root(a: np.ndarray, p: int, heuristic: DampeningHeuristic) -> np.ndarray:
    out = np.empty_like(a)
    for i in range(a.shape[0]):
        out[i] = evd_inverse_root(a[i], p, heuristic)
    return out
