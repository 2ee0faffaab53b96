"""Optimal prediction for linear systems ``du/dt = L u``.

The initial state is distributed according to the Gaussian measure with
density proportional to ``exp(-u^T A u / 2)``, which is invariant under the
flow when ``L^T A + A L = 0``. Given linear constraints ``G^T u(0) = v0``:

* the *exact* prediction propagates the conditional mean
  ``A^-1 G M^-1 v0`` (``M = G^T A^-1 G``) with the full flow ``exp(tL)``;
* the *approximate* prediction evolves ``v`` by the reduced generator
  ``G^T K G M^-1`` (``K = L A^-1``) and lifts ``v(t)`` the same way.

The difference ``e(t) = approx - exact`` is bounded in the energy norm by
``t |A^-1/2 E M^-1/2| |M^-1/2 v0|`` with ``E = L^T G + G M^-1 G^T K G``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from . import linalg
from .errors import (
    DimensionMismatch,
    InvariantViolation,
    NotPositiveDefinite,
    RankDeficient,
    SingularM,
)

INVARIANCE_TOL = 1e-10
RANK_TOL = 1e-10
QUAD_TOL = 1e-11


class LinearSystem:
    """The pair ``(L, A)`` with ``L^T A + A L = 0`` checked on construction.

    ``propagator`` optionally replaces the generic ``expm(t L)`` by a closed
    form; it must map ``t`` to the ``m x m`` fundamental matrix.
    """

    def __init__(
        self,
        l,
        a,
        invariance_tol: float = INVARIANCE_TOL,
        propagator: Optional[Callable[[float], np.ndarray]] = None,
    ):
        self.l = linalg.as_matrix(l, "L")
        self.a = linalg.symmetrize(a)
        m = self.a.shape[0]
        if self.l.shape != (m, m):
            raise DimensionMismatch(f"L has shape {self.l.shape}, A has order {m}")
        self._factor = linalg.spd_factor(self.a)
        resid = self.invariance_residual()
        scale = linalg.spectral_norm(self.a) * max(linalg.spectral_norm(self.l), 1e-300)
        if resid > invariance_tol * scale:
            raise InvariantViolation(
                f"||L^T A + A L|| = {resid:.3e} exceeds {invariance_tol:g} * ||A|| ||L||"
            )
        self._propagator = propagator

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def invariance_residual(self) -> float:
        return linalg.spectral_norm(self.l.T @ self.a + self.a @ self.l)

    def a_inv(self, x) -> np.ndarray:
        return linalg.spd_solve(self.a, x, factor=self._factor)

    @cached_property
    def k(self) -> np.ndarray:
        """``K = L A^-1``; skew-symmetric up to roundoff."""
        # L A^-1 = (A^-1 L^T)^T
        return self.a_inv(self.l.T).T

    @cached_property
    def sqrt_pair(self) -> tuple[np.ndarray, np.ndarray]:
        """``(A^1/2, A^-1/2)``."""
        return linalg.spd_sqrt(self.a)

    def flow(self, t: float) -> np.ndarray:
        """Fundamental matrix ``S(t)``."""
        if self._propagator is not None:
            return np.asarray(self._propagator(t), dtype=float)
        return linalg.expm(self.l, t)

    def energy(self, u) -> float:
        """Hamiltonian ``u^T A u / 2``."""
        u = np.asarray(u, dtype=float)
        return 0.5 * float(u @ self.a @ u)

    def a_norm(self, u) -> float:
        """``|A^1/2 u| = sqrt(2 h)``."""
        return float(np.sqrt(max(2.0 * self.energy(u), 0.0)))


class ConstraintSet:
    """Constraint matrix ``G`` (``m x n``) bound to a ``LinearSystem``."""

    def __init__(self, system: LinearSystem, g, rank_tol: float = RANK_TOL):
        g = linalg.as_matrix(g, "G")
        m, n = g.shape
        if m != system.dim:
            raise DimensionMismatch(f"G has {m} rows, system has dimension {system.dim}")
        if n > m:
            raise RankDeficient(f"G has more columns ({n}) than rows ({m})")
        sv = np.linalg.svd(g, compute_uv=False)
        if sv[-1] <= rank_tol * sv[0]:
            raise RankDeficient(f"G is rank deficient: singular values {sv[0]:.3e} .. {sv[-1]:.3e}")
        self.system = system
        self.g = g
        self._a_inv_g = system.a_inv(g)
        self.m_matrix = linalg.symmetrize(g.T @ self._a_inv_g)
        try:
            self._m_factor = linalg.spd_factor(self.m_matrix)
        except NotPositiveDefinite as exc:
            raise SingularM(str(exc)) from None
        gkg = g.T @ system.k @ g
        # G^T K G is skew in exact arithmetic; keep the skew part so the
        # reduced flow conserves v^T M^-1 v to roundoff.
        self.gkg = linalg.skew_part(gkg)
        scale = linalg.spectral_norm(g) ** 2 * linalg.spectral_norm(system.k)
        if linalg.spectral_norm(gkg + gkg.T) > 2 * INVARIANCE_TOL * scale:
            raise InvariantViolation("G^T K G is not skew-symmetric")

    @property
    def n(self) -> int:
        return self.g.shape[1]

    def m_inv(self, x) -> np.ndarray:
        try:
            return linalg.spd_solve(self.m_matrix, x, factor=self._m_factor)
        except NotPositiveDefinite as exc:  # pragma: no cover - factor already exists
            raise SingularM(str(exc)) from None

    @cached_property
    def m_sqrt_pair(self) -> tuple[np.ndarray, np.ndarray]:
        """``(M^1/2, M^-1/2)``."""
        return linalg.spd_sqrt(self.m_matrix)

    @cached_property
    def lift(self) -> np.ndarray:
        """``A^-1 G M^-1`` (``m x n``), mapping constraint values to means."""
        return self.m_inv(self._a_inv_g.T).T

    @cached_property
    def reduced_generator(self) -> np.ndarray:
        """``G^T K G M^-1``."""
        return self.m_inv(self.gkg.T).T


@dataclass(frozen=True)
class PredictionResult:
    t: float
    exact_mean: np.ndarray
    approx_mean: np.ndarray
    error_a_norm: float
    lemma1_bound: float
    error: np.ndarray = field(repr=False, default=None)


def _check_v0(c: ConstraintSet, v0) -> np.ndarray:
    v0 = np.asarray(v0, dtype=float)
    if v0.shape != (c.n,):
        raise DimensionMismatch(f"v0 must have length {c.n}, got shape {v0.shape}")
    return v0


def conditional_mean(sys: LinearSystem, c: ConstraintSet, v0) -> np.ndarray:
    """Mean of the measure restricted to ``G^T u = v0``: ``A^-1 G M^-1 v0``."""
    v0 = _check_v0(c, v0)
    if not v0.any():
        return np.zeros(sys.dim)
    return c.lift @ v0


def exact_mean(sys: LinearSystem, c: ConstraintSet, v0, t: float) -> np.ndarray:
    u0 = conditional_mean(sys, c, v0)
    if not u0.any():
        return u0
    return sys.flow(t) @ u0


def reduced_rhs(c: ConstraintSet) -> np.ndarray:
    return c.reduced_generator.copy()


def reduced_trajectory(c: ConstraintSet, v0, t: float) -> np.ndarray:
    """``v(t)`` from the exact reduced propagator ``exp(t G^T K G M^-1)``."""
    v0 = _check_v0(c, v0)
    if not v0.any():
        return np.zeros(c.n)
    return linalg.expm(c.reduced_generator, t) @ v0


def approx_mean(sys: LinearSystem, c: ConstraintSet, v0, t: float) -> np.ndarray:
    return conditional_mean(sys, c, reduced_trajectory(c, v0, t))


def defect_matrix(sys: LinearSystem, c: ConstraintSet) -> np.ndarray:
    """``E = L^T G + G M^-1 G^T K G``; zero iff range(G) is invariant under L^T."""
    return sys.l.T @ c.g + c.g @ c.m_inv(c.gkg)


def scaled_defect(sys: LinearSystem, c: ConstraintSet) -> np.ndarray:
    """``A^-1/2 E M^-1/2``."""
    _, a_isqrt = sys.sqrt_pair
    _, m_isqrt = c.m_sqrt_pair
    return a_isqrt @ defect_matrix(sys, c) @ m_isqrt


def lemma1_bound(sys: LinearSystem, c: ConstraintSet, v0, t: float) -> float:
    """``t |A^-1/2 E M^-1/2| |M^-1/2 v0|``."""
    if t < 0:
        raise ValueError("bound is stated for t >= 0")
    v0 = _check_v0(c, v0)
    if t == 0 or not v0.any():
        return 0.0
    _, m_isqrt = c.m_sqrt_pair
    return t * linalg.spectral_norm(scaled_defect(sys, c)) * float(np.linalg.norm(m_isqrt @ v0))


def error_integral(sys: LinearSystem, c: ConstraintSet, v0, t: float, tol: float = QUAD_TOL) -> np.ndarray:
    """``e(t) = int_0^t S(t-s) A^-1 E M^-1 v(s) ds`` by adaptive quadrature."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    v0 = _check_v0(c, v0)
    if t == 0 or not v0.any():
        return np.zeros(sys.dim)
    kernel = sys.a_inv(defect_matrix(sys, c))  # A^-1 E

    def integrand(s):
        # fresh exponentials per node; n is small
        v = reduced_trajectory(c, v0, s)
        return sys.flow(t - s) @ (kernel @ c.m_inv(v))

    return linalg.integrate_matrix_curve(integrand, 0.0, t, tol)


def predict(sys: LinearSystem, c: ConstraintSet, v0, t: float) -> PredictionResult:
    ex = exact_mean(sys, c, v0, t)
    ap = approx_mean(sys, c, v0, t)
    err = ap - ex
    return PredictionResult(
        t=t,
        exact_mean=ex,
        approx_mean=ap,
        error_a_norm=sys.a_norm(err),
        lemma1_bound=lemma1_bound(sys, c, v0, t),
        error=err,
    )


def random_invariant_system(m: int, seed: int) -> LinearSystem:
    """Random ``(L, A)`` with ``A = R^T R + I`` and ``L = W_skew A``.

    ``L^T A + A L = -A W A + A W A = 0`` holds by construction.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    rng = np.random.default_rng(seed)
    r = rng.standard_normal((m, m))
    a = linalg.symmetrize(r.T @ r + np.eye(m))
    w = rng.standard_normal((m, m))
    k = 0.5 * (w - w.T)
    return LinearSystem(k @ a, a)
