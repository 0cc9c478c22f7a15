"""Dense matrix and batched-tensor primitives.

Matrices are C-contiguous float64 ndarrays of shape (rows, cols); batched
tensors are float64 ndarrays of shape (batch, dim, dim) holding square
blocks.  The ``matrix`` / ``batched`` constructors validate shape and
finiteness; everything downstream assumes validated input.

All matrix products in the library go through :func:`matmul` / :func:`bmm`
so that :func:`count_matmuls` can account for them.  ``PrecisionMode``
selects between native float64 arithmetic and an emulated 32-bit mode
that stores every multiply-accumulate result at float32 precision.
"""

from __future__ import annotations

import contextlib
import enum
from typing import Iterator

import numpy as np


class PrecisionMode(enum.Enum):
    FULL64 = "f64"
    EMULATED32 = "f32"


def matrix(data) -> np.ndarray:
    """Validate and return a 2-D float64 C-contiguous matrix."""
    a = np.array(data, dtype=np.float64, order="C")
    if a.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("matrix entries must be finite")
    return a


def batched(data) -> np.ndarray:
    """Validate and return an (N, B, B) float64 stack of square blocks."""
    a = np.array(data, dtype=np.float64, order="C")
    if a.ndim != 3:
        raise ValueError(f"batched tensor must be 3-D, got shape {a.shape}")
    if a.shape[1] != a.shape[2]:
        raise ValueError(f"blocks must be square, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("batched tensor entries must be finite")
    return a


class MatmulCounter:
    """Counts matmul/bmm invocations while installed via count_matmuls()."""

    def __init__(self) -> None:
        self.count = 0


_ACTIVE_COUNTERS: list[MatmulCounter] = []


@contextlib.contextmanager
def count_matmuls() -> Iterator[MatmulCounter]:
    counter = MatmulCounter()
    _ACTIVE_COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _ACTIVE_COUNTERS.remove(counter)


def _tally() -> None:
    for counter in _ACTIVE_COUNTERS:
        counter.count += 1


def quantize(a: np.ndarray, mode: PrecisionMode) -> np.ndarray:
    """Round values through float32 storage in EMULATED32 mode."""
    if mode is PrecisionMode.EMULATED32:
        return a.astype(np.float32).astype(np.float64)
    return a


def _matmul_emulated32(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # One rank-1 update per inner index, accumulated in float32, so every
    # multiply-accumulate result is store-rounded at 32 bits.
    a32 = a.astype(np.float32)
    b32 = b.astype(np.float32)
    out = np.zeros(a.shape[:-1] + (b.shape[-1],), dtype=np.float32)
    for k in range(a.shape[-1]):
        out += a32[..., :, k, None] * b32[..., None, k, :]
    return out.astype(np.float64)


def matmul(a: np.ndarray, b: np.ndarray, mode: PrecisionMode = PrecisionMode.FULL64) -> np.ndarray:
    """Matrix product a @ b under the requested precision mode."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    _tally()
    if mode is PrecisionMode.EMULATED32:
        return _matmul_emulated32(a, b)
    return a @ b


def bmm(a: np.ndarray, b: np.ndarray, mode: PrecisionMode = PrecisionMode.FULL64) -> np.ndarray:
    """Blockwise product: block i of the result is a[i] @ b[i]."""
    if a.ndim != 3 or b.ndim != 3:
        raise ValueError("bmm expects 3-D operands")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ValueError(f"shape mismatch: {a.shape} x {b.shape}")
    _tally()
    if mode is PrecisionMode.EMULATED32:
        return _matmul_emulated32(a, b)
    return np.matmul(a, b)


def frobenius_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a))


def symmetrize(a: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"symmetrize expects a square matrix, got {a.shape}")
    return (a + a.T) / 2.0


def check_symmetric(a: np.ndarray, rtol: float = 1e-8) -> None:
    """Raise if ``a`` is not square and symmetric within a relative tolerance."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    asym = np.linalg.norm(a - a.T)
    if asym > rtol * max(np.linalg.norm(a), 1.0):
        raise ValueError(f"matrix is not symmetric (asymmetry norm {asym:.3e})")


def identity_like(a: np.ndarray) -> np.ndarray:
    """Identity matrix (2-D input) or stacked identities (3-D input)."""
    eye = np.eye(a.shape[-1])
    if a.ndim == 3:
        return np.broadcast_to(eye, a.shape).copy()
    return eye


def save_matrix(a: np.ndarray, path) -> None:
    """Write the text format: 'rows cols' header then one row per line."""
    with open(path, "w") as fh:
        fh.write(format_matrix(a))


def format_matrix(a: np.ndarray) -> str:
    lines = [f"{a.shape[0]} {a.shape[1]}"]
    for row in a:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty matrix text")
    header = lines[0].split()
    if len(header) != 2:
        raise ValueError(f"bad matrix header: {lines[0]!r}")
    rows, cols = int(header[0]), int(header[1])
    if len(lines) - 1 != rows:
        raise ValueError(f"expected {rows} data rows, got {len(lines) - 1}")
    data = []
    for ln in lines[1:]:
        vals = [float(t) for t in ln.split()]
        if len(vals) != cols:
            raise ValueError(f"expected {cols} values per row, got {len(vals)}")
        data.append(vals)
    return matrix(data)


def load_matrix(path) -> np.ndarray:
    with open(path) as fh:
        return parse_matrix(fh.read())
