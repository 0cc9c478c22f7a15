"""Chebyshev-series approximation of inverse roots, evaluated by Clenshaw.

Coefficients are fitted by the discrete cosine projection at N Chebyshev
sample points of the target interval [a, b]; the interval is stored with
the coefficients because it fixes the affine map onto [-1, 1].

For matrices, the input is scaled so its spectrum lands in [0, 1] and
then mapped to [-1, 1] via S = 2*A/scale - I.  With the default fit
interval [eps, 1+eps] that mapping corresponds to evaluating the fitted
function at (lambda/scale + eps), mirroring the +eps regularization of
the eigendecomposition path.  Accuracy is only guaranteed for eigenvalues
whose mapped values lie inside the fit interval; values below the left
endpoint degrade without warning.

The optimized matrix evaluation folds the two leading (zero-operand)
recurrence steps and the trailing combination into closed forms, so a
degree-d series costs d-1 matrix products instead of d+2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linalg import PrecisionMode, bmm, matmul


@dataclass(frozen=True)
class ChebCoefficients:
    degree: int
    interval: tuple[float, float]
    coeffs: np.ndarray            # length degree + 1
    power: int | None = None      # inverse-root exponent p, None for generic fits
    num_points: int = 0           # fit sample count, recorded for caching

    def __post_init__(self) -> None:
        if len(self.coeffs) != self.degree + 1:
            raise ValueError("coefficient vector must have degree + 1 entries")
        a, b = self.interval
        if not a < b:
            raise ValueError(f"invalid interval [{a}, {b}]")


def cheb_fit(
    f: Callable[[np.ndarray], np.ndarray],
    degree: int,
    num_points: int,
    interval: tuple[float, float],
    power: int | None = None,
) -> ChebCoefficients:
    """Project f onto Chebyshev polynomials of the first kind on [a, b]."""
    a, b = interval
    if not a < b:
        raise ValueError(f"invalid interval [{a}, {b}]")
    if num_points < degree + 1:
        raise ValueError(f"need at least degree+1 = {degree + 1} points, got {num_points}")
    v = np.arange(num_points)
    theta = (2 * v + 1) * np.pi / (2 * num_points)
    t = np.cos(theta)
    x = 0.5 * (b - a) * t + 0.5 * (b + a)
    fx = f(x)
    k = np.arange(degree + 1)
    coeffs = (2.0 / num_points) * (np.cos(k[:, None] * theta[None, :]) @ fx)
    coeffs[0] *= 0.5
    return ChebCoefficients(degree=degree, interval=(a, b), coeffs=coeffs, power=power, num_points=num_points)


def fit_inverse_root(
    p: int,
    degree: int = 60,
    num_points: int = 1000,
    interval: tuple[float, float] | None = None,
    epsilon: float = 1e-10,
) -> ChebCoefficients:
    """Coefficients for x^(-1/p); default interval is [eps, 1+eps]."""
    if p not in (2, 4):
        raise ValueError(f"p must be 2 or 4, got {p}")
    if interval is None:
        interval = (epsilon, 1.0 + epsilon)
    if interval[0] <= 0:
        raise ValueError("inverse-root fits need a strictly positive interval")
    return cheb_fit(lambda x: np.power(x, -1.0 / p), degree, num_points, interval, power=p)


def _map_to_unit(x, interval: tuple[float, float]):
    a, b = interval
    return (2.0 * x - (b + a)) / (b - a)


def clenshaw_scalar(x: float, c: ChebCoefficients) -> float:
    """Evaluate the series at x (mapped from the fit interval to [-1, 1])."""
    t = _map_to_unit(float(x), c.interval)
    b1 = 0.0
    b2 = 0.0
    for k in range(c.degree, -1, -1):
        b1, b2 = 2.0 * t * b1 - b2 + c.coeffs[k], b1
    return b1 - t * b2


def direct_series(x: float, c: ChebCoefficients) -> float:
    """Reference evaluation via the explicit T_k recurrence."""
    t = _map_to_unit(float(x), c.interval)
    tk_prev, tk = 1.0, t
    total = c.coeffs[0] * tk_prev
    if c.degree >= 1:
        total += c.coeffs[1] * tk
    for k in range(2, c.degree + 1):
        tk_prev, tk = tk, 2.0 * t * tk - tk_prev
        total += c.coeffs[k] * tk
    return total


def clenshaw_matrix(
    a: np.ndarray,
    c: ChebCoefficients,
    scale: float,
    mode: PrecisionMode = PrecisionMode.FULL64,
    optimized: bool = True,
) -> np.ndarray:
    """Approximate a^(-1/p) (or the raw series value for generic fits).

    ``scale`` must bound the largest eigenvalue so the spectrum of
    S = 2*a/scale - I sits in [-1, 1].  When the coefficients carry an
    inverse-root power, the result is multiplied by scale^(-1/p) so it
    approximates the root of ``a`` itself.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    out = _clenshaw_core(a, c, np.asarray(scale, dtype=np.float64), mode, optimized, batched_input=False)
    if not np.isfinite(out).all():
        raise ValueError("non-finite Clenshaw result; spectrum likely outside the fit interval")
    return out


def batched_clenshaw_matrix(
    a: np.ndarray,
    c: ChebCoefficients,
    scales: np.ndarray,
    mode: PrecisionMode = PrecisionMode.FULL64,
    optimized: bool = True,
) -> np.ndarray:
    """Per-block Clenshaw evaluation with a per-block scale."""
    scales = np.asarray(scales, dtype=np.float64)
    if scales.shape != (a.shape[0],):
        raise ValueError(f"expected {a.shape[0]} scales, got shape {scales.shape}")
    if (scales <= 0).any():
        raise ValueError("scales must be positive")
    out = _clenshaw_core(a, c, scales, mode, optimized, batched_input=True)
    if not np.isfinite(out).all():
        raise ValueError("non-finite Clenshaw result; spectrum likely outside the fit interval")
    return out


def _clenshaw_core(a, c, scales, mode, optimized, batched_input):
    coeffs = c.coeffs
    d = c.degree
    if batched_input:
        eye = np.broadcast_to(np.eye(a.shape[1]), a.shape).copy()
        scale_shaped = scales[:, None, None]
        product = lambda s, b: bmm(s, b, mode)
    else:
        eye = np.eye(a.shape[0])
        scale_shaped = scales
        product = lambda s, b: matmul(s, b, mode)
    s = 2.0 * (a / scale_shaped) - eye
    if optimized:
        if d < 2:
            raise ValueError("optimized evaluation needs degree >= 2")
        b1 = 2.0 * coeffs[d] * s + coeffs[d - 1] * eye   # B_{d-1}
        b2 = coeffs[d] * eye                             # B_d
        for k in range(d - 2, 0, -1):
            b1, b2 = 2.0 * product(s, b1) - b2 + coeffs[k] * eye, b1
        out = product(s, b1) - b2 + coeffs[0] * eye
    else:
        b1 = np.zeros_like(a)
        b2 = np.zeros_like(a)
        for k in range(d, -1, -1):
            b1, b2 = 2.0 * product(s, b1) - b2 + coeffs[k] * eye, b1
        out = b1 - product(s, b2)
    if c.power is not None:
        out = out * np.power(scale_shaped, -1.0 / c.power)
    return out


def save_coefficients(c: ChebCoefficients, path) -> None:
    """Cache format: header 'd N a b p', then d+1 coefficient lines."""
    if c.power is None:
        raise ValueError("only inverse-root coefficient sets can be cached")
    with open(path, "w") as fh:
        a, b = c.interval
        fh.write(f"{c.degree} {c.num_points} {a:.17g} {b:.17g} {c.power}\n")
        for value in c.coeffs:
            fh.write(f"{value:.17g}\n")


def load_coefficients(path) -> ChebCoefficients:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError("empty coefficient cache")
    header = lines[0].split()
    if len(header) != 5:
        raise ValueError(f"bad cache header: {lines[0]!r}")
    degree, num_points = int(header[0]), int(header[1])
    a, b = float(header[2]), float(header[3])
    power = int(header[4])
    coeffs = np.array([float(v) for v in lines[1:]])
    if len(coeffs) != degree + 1:
        raise ValueError(f"expected {degree + 1} coefficients, got {len(coeffs)}")
    return ChebCoefficients(degree=degree, interval=(a, b), coeffs=coeffs, power=power, num_points=num_points)
