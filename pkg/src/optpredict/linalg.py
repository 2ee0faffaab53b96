"""Dense real linear algebra used by the prediction formulas.

Matrices are plain ``numpy`` arrays. Symmetric positive definite inputs are
symmetrized on entry (``(a + a.T) / 2``) so that downstream factorizations
see exactly symmetric storage.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotPositiveDefinite, ToleranceNotMet

# Defaults; every function accepts an override keyword.
EIG_RTOL = 1e-12
QUAD_ORDER = 10
QUAD_MAX_PANELS = 2**16

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise DimensionMismatch(f"{name} must be a nonempty 2-d array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def symmetrize(a) -> np.ndarray:
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {a.shape}")
    return 0.5 * (a + a.T)


def skew_part(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return 0.5 * (a - a.T)


def spd_factor(a):
    """Cholesky factor of a symmetric positive definite matrix (scipy format)."""
    a = symmetrize(a)
    try:
        return scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def spd_solve(a, b, factor=None) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive definite ``a``.

    ``b`` may be a vector or a matrix. A precomputed ``spd_factor(a)`` can be
    passed to skip the factorization.
    """
    b = np.asarray(b, dtype=float)
    if factor is None:
        factor = spd_factor(a)
    dim = factor[0].shape[0]
    if b.shape[0] != dim:
        raise DimensionMismatch(f"rhs has {b.shape[0]} rows, matrix has order {dim}")
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def spd_sqrt(a, rtol: float = EIG_RTOL) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(R, Rinv)`` with ``R @ R == a`` and ``R @ Rinv == I``.

    Both factors are symmetric and come from one symmetric eigendecomposition.
    Raises ``NotPositiveDefinite`` if an eigenvalue is at or below
    ``rtol * ||a||_2``.
    """
    a = symmetrize(a)
    w, v = np.linalg.eigh(a)
    scale = np.max(np.abs(w))
    if w[0] <= rtol * scale:
        raise NotPositiveDefinite(f"smallest eigenvalue {w[0]:.3e} vs norm {scale:.3e}")
    s = np.sqrt(w)
    r = (v * s) @ v.T
    rinv = (v / s) @ v.T
    return symmetrize(r), symmetrize(rinv)


def expm(l, t: float = 1.0) -> np.ndarray:
    """Fundamental matrix ``exp(t * l)``.

    Scaling and squaring with a Pade core (scipy's Al-Mohy/Higham routine).
    """
    l = as_matrix(l, "generator")
    if l.shape[0] != l.shape[1]:
        raise DimensionMismatch(f"expm needs a square matrix, got {l.shape}")
    if t == 0.0:
        return np.eye(l.shape[0])
    return scipy.linalg.expm(t * l)


def spectral_norm(b) -> float:
    """Operator 2-norm (largest singular value)."""
    b = as_matrix(b)
    return float(np.linalg.svd(b, compute_uv=False)[0])


def _gauss_legendre(order: int):
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


def _panel(f, lo, hi, nodes, weights):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    vals = np.array([np.atleast_1d(np.asarray(f(mid + half * x), dtype=float)) for x in nodes])
    return half * (weights @ vals)


def integrate_matrix_curve(
    f: Callable[[float], np.ndarray],
    a: float,
    b: float,
    tol: float = 1e-11,
    order: int = QUAD_ORDER,
    max_panels: int = QUAD_MAX_PANELS,
) -> np.ndarray:
    """Integrate a vector-valued ``f`` over ``[a, b]``.

    Composite Gauss-Legendre of fixed ``order`` with adaptive bisection. A
    panel is accepted when the one-panel and two-half-panel estimates differ
    by at most its share ``tol * width / (b - a)`` in every component, so the
    summed error estimate stays below ``tol``.
    """
    if b < a:
        raise ValueError("need a <= b")
    if order < 8:
        raise ValueError("quadrature order must be at least 8")
    nodes, weights = _gauss_legendre(order)
    probe = np.atleast_1d(np.asarray(f(a), dtype=float))
    if b == a:
        return np.zeros_like(probe)

    length = b - a
    accepted: list[tuple[float, np.ndarray]] = []
    # (lo, hi, estimate on [lo, hi])
    stack = [(a, b, _panel(f, a, b, nodes, weights))]
    n_panels = 1
    while stack:
        lo, hi, whole = stack.pop()
        mid = 0.5 * (lo + hi)
        left = _panel(f, lo, mid, nodes, weights)
        right = _panel(f, mid, hi, nodes, weights)
        if np.max(np.abs(left + right - whole)) <= tol * (hi - lo) / length:
            accepted.append((lo, left + right))
            continue
        n_panels += 1
        if n_panels > max_panels:
            raise ToleranceNotMet(f"no convergence within {max_panels} panels (tol={tol:g})")
        # right pushed first so panels are accepted roughly left to right
        stack.append((mid, hi, right))
        stack.append((lo, mid, left))
    accepted.sort(key=lambda item: item[0])
    return np.sum([v for _, v in accepted], axis=0)
