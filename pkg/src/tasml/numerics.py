"""Dense float64 linear algebra and differentiation utilities.

Everything here is pure and operates on immutable inputs, so concurrent
callers are safe. All arrays are float64; float32 paths are deliberately
absent because the finite-difference gradient checks downstream need the
extra precision.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NonFiniteValue, NotPositiveDefinite

SYMMETRY_TOL = 1e-10
JITTER_FLOOR = 1e-10
JITTER_CAP = 1e-3


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with A + jitter*I = L @ L.T.

    `jitter` records the diagonal shift that was actually applied; it stays
    at the caller's base value unless factorization had to escalate.
    """

    lower: np.ndarray
    jitter: float

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve (A + jitter*I) x = rhs via two triangular solves."""
        rhs = np.asarray(rhs, dtype=np.float64)
        if rhs.shape[0] != self.n:
            raise DimensionMismatch(
                f"rhs has {rhs.shape[0]} rows, factor is {self.n}x{self.n}"
            )
        y = scipy.linalg.solve_triangular(self.lower, rhs, lower=True)
        return scipy.linalg.solve_triangular(self.lower.T, y, lower=False)


def _as_square_symmetric(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise NonFiniteValue("matrix contains NaN or Inf")
    asym = np.abs(a - a.T).max() if a.size else 0.0
    if asym > SYMMETRY_TOL:
        raise DimensionMismatch(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    return a


def cholesky_factor(a: np.ndarray, base_jitter: float = 0.0) -> CholeskyFactor:
    """Factor a symmetric positive-definite matrix, escalating jitter on failure.

    The shift starts at `base_jitter` and multiplies by 10 on each failed
    attempt (from JITTER_FLOOR when the base is zero), capped at JITTER_CAP.
    """
    a = _as_square_symmetric(a)
    if base_jitter < 0:
        raise ValueError("base_jitter must be non-negative")

    jitter = float(base_jitter)
    while True:
        shifted = a if jitter == 0.0 else a + jitter * np.eye(a.shape[0])
        try:
            lower = np.linalg.cholesky(shifted)
            return CholeskyFactor(lower=lower, jitter=jitter)
        except np.linalg.LinAlgError:
            nxt = JITTER_FLOOR if jitter == 0.0 else jitter * 10.0
            if nxt > JITTER_CAP * (1 + 1e-12):
                raise NotPositiveDefinite(
                    f"factorization failed with jitter up to {jitter:.1e} "
                    f"(cap {JITTER_CAP:.0e})"
                ) from None
            jitter = nxt


def cholesky_solve(
    a: np.ndarray, b: np.ndarray, base_jitter: float = 0.0
) -> tuple[np.ndarray, CholeskyFactor]:
    """Solve (A + jitter*I) X = B for symmetric positive-definite A.

    Returns the solution and the factor so callers can reuse it for
    further right-hand sides.
    """
    b = np.asarray(b, dtype=np.float64)
    if not np.isfinite(b).all():
        raise NonFiniteValue("right-hand side contains NaN or Inf")
    factor = cholesky_factor(a, base_jitter)
    if b.shape[0] != factor.n:
        raise DimensionMismatch(
            f"B has {b.shape[0]} rows, A is {factor.n}x{factor.n}"
        )
    return factor.solve(b), factor


def grad_check(
    f: Callable[[np.ndarray], float],
    point: np.ndarray,
    analytic_grad: np.ndarray,
    step: float = 1e-5,
) -> float:
    """Max relative error between `analytic_grad` and central differences of f.

    The error for coordinate i is |analytic_i - numeric_i| / max(1, |numeric_i|).
    """
    point = np.asarray(point, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if point.shape != analytic.shape or point.ndim != 1:
        raise DimensionMismatch(
            f"point {point.shape} and gradient {analytic.shape} must be equal-length vectors"
        )
    numeric = np.empty_like(point)
    probe = point.copy()
    for i in range(point.size):
        orig = probe[i]
        probe[i] = orig + step
        f_plus = float(f(probe))
        probe[i] = orig - step
        f_minus = float(f(probe))
        probe[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteValue(f"objective returned NaN/Inf near coordinate {i}")
        numeric[i] = (f_plus - f_minus) / (2.0 * step)
    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
