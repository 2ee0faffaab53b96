"""Spectral Klein-Gordon instance ``u_tt = u_xx - u`` on ``[0, 2 pi)``.

Coefficient ordering
--------------------
A field with modes ``|k| <= m`` is stored in the real basis

    a_0 / sqrt(2 pi) + sum_k (a_k cos kx + b_k sin kx) / sqrt(pi)

as the vector ``q = (a_m, ..., a_1, a_0, b_1, ..., b_m)`` of length
``2m + 1``; ``p`` holds the coefficients of ``u_t`` in the same order.
Index ``i`` therefore carries the wavenumber ``|i - m|`` and the frequency
``omega = sqrt(k^2 + 1)``. Lower resolutions sit as a centered slice of
higher ones, which makes embedding a symmetric zero padding.

Constraints are Gaussian-kernel averages of ``u`` and ``u_t`` around the
``2n + 1`` equispaced points ``x_a = 2 pi a / (2n + 1)``, with kernel
Fourier weights ``exp(-k^2 sigma^2 / 4)`` truncated at ``|k| <= m`` and
``m = n + r (2n + 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch, HypothesisViolated, InvalidParams, ShrinkNotAllowed
from .hamiltonian import HamiltonianBlocks, assemble
from .op_core import LinearSystem

# relative slack for hypothesis checks evaluated exactly at the boundary
HYPOTHESIS_RTOL = 1e-12


def theorem_sigma2(n: int, nu: float) -> float:
    """Smallest ``sigma^2`` with ``(2n+1) sigma^2 >= 6 (nu+1) log(2n+1)``."""
    return 6.0 * (nu + 1.0) * math.log(2 * n + 1) / (2 * n + 1)


@dataclass(frozen=True)
class KgParams:
    n: int
    r: int
    sigma: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise InvalidParams(f"n must be an integer >= 1, got {self.n}")
        if int(self.r) != self.r or self.r < 0:
            raise InvalidParams(f"r must be an integer >= 0, got {self.r}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise InvalidParams(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "r", int(self.r))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def m(self) -> int:
        return self.n + self.r * (2 * self.n + 1)

    @property
    def n_points(self) -> int:
        return 2 * self.n + 1

    @property
    def scaled_sigma2(self) -> float:
        """``(2n+1) sigma^2``."""
        return self.n_points * self.sigma**2

    @property
    def lemma2_hypothesis(self) -> bool:
        return self.scaled_sigma2 >= 2.0 * (1 - HYPOTHESIS_RTOL)

    def theorem_hypothesis(self, nu: float) -> bool:
        need = 6.0 * (nu + 1.0) * math.log(self.n_points)
        return self.scaled_sigma2 >= need * (1 - HYPOTHESIS_RTOL)

    def with_r(self, r: int) -> "KgParams":
        return KgParams(self.n, r, self.sigma)


@dataclass(frozen=True)
class KgState:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if q.ndim != 1 or q.shape != p.shape or q.size % 2 == 0:
            raise DimensionMismatch(f"q and p must be equal odd-length vectors, got {q.shape}, {p.shape}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def m(self) -> int:
        return (self.q.size - 1) // 2

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_vector(cls, u) -> "KgState":
        u = np.asarray(u, dtype=float)
        half = u.size // 2
        return cls(u[:half], u[half:])

    def __add__(self, other: "KgState") -> "KgState":
        return KgState(self.q + other.q, self.p + other.p)

    def __sub__(self, other: "KgState") -> "KgState":
        return KgState(self.q - other.q, self.p - other.p)


def wavenumbers(m: int) -> np.ndarray:
    """``|k|`` for each slot of a length ``2m+1`` coefficient vector."""
    return np.abs(np.arange(2 * m + 1) - m)


def frequencies(m: int) -> np.ndarray:
    k = wavenumbers(m)
    return np.sqrt(k.astype(float) ** 2 + 1.0)


def _aliased_wavenumbers(n: int, r: int) -> np.ndarray:
    """``l = k + j(2n+1)`` as an array indexed ``[k + n, j + r]``."""
    k = np.arange(-n, n + 1)[:, None]
    j = np.arange(-r, r + 1)[None, :]
    return k + j * (2 * n + 1)


class KgSpectralSystem:
    """Everything the predictions need for one ``(n, r, sigma)``.

    Attributes
    ----------
    omega : frequencies ``sqrt(k^2+1)`` in coefficient order (the diagonal of Lambda)
    gt : ``(2n+1) x (2m+1)`` real constraint matrix, ``v_q = gt @ q``
    q_matrix : orthonormal real DFT matrix diagonalizing ``gt gt^T``
    gamma_scale : diagonal of Gamma in coefficient order
    d1, d2, d3 : aliased sums, so that ``gt gt^T = Q diag(d1) Q^T``,
        ``gt Lambda^2 gt^T = Q diag(d2) Q^T`` and
        ``gt Lambda^-2 gt^T = Q diag(d3) Q^T``
    """

    def __init__(self, params: KgParams):
        self.params = params
        n, r, m, sigma = params.n, params.r, params.m, params.sigma
        npts = 2 * n + 1
        self.x = 2.0 * np.pi * np.arange(npts) / npts
        self.omega = frequencies(m)

        k = wavenumbers(m)
        weight = np.exp(-(k.astype(float) ** 2) * sigma**2 / 4.0)
        self.gamma_scale = math.sqrt(npts / (2.0 * np.pi)) * weight

        signed = np.arange(2 * m + 1) - m  # <0: cosine slots, >0: sine slots
        phase = np.outer(self.x, k)
        basis = np.where(signed < 0, np.cos(phase), np.sin(phase))
        gt = weight * basis / math.sqrt(np.pi)
        gt[:, m] = 1.0 / math.sqrt(2.0 * np.pi)
        self.gt = gt

        kq = wavenumbers(n)
        signed_q = np.arange(npts) - n
        phase_q = np.outer(self.x, kq)
        qm = np.where(signed_q < 0, np.cos(phase_q), np.sin(phase_q))
        qm[:, n] = 1.0 / math.sqrt(2.0)
        self.q_matrix = math.sqrt(2.0 / npts) * qm

        ell = _aliased_wavenumbers(n, r).astype(float)
        dj = np.exp(-(ell**2) * sigma**2 / 2.0)
        lam = ell**2 + 1.0
        scale = npts / (2.0 * np.pi)
        # rows run over k = -n..n, which matches the column order of Q
        self.d1 = scale * dj.sum(axis=1)
        self.d2 = scale * (dj * lam).sum(axis=1)
        self.d3 = scale * (dj / lam).sum(axis=1)

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def m(self) -> int:
        return self.params.m

    @property
    def size(self) -> int:
        """Length of ``q`` (``2m + 1``)."""
        return 2 * self.params.m + 1

    @property
    def n_constraints(self) -> int:
        """Length of ``v0`` (``2(2n + 1)``)."""
        return 2 * self.params.n_points

    def blocks(self) -> HamiltonianBlocks:
        g = self.gt.T
        return HamiltonianBlocks(np.diag(self.omega**2), g, g)

    @cached_property
    def generic(self):
        """``(LinearSystem, ConstraintSet)`` assembled from dense blocks (expm flow)."""
        return assemble(self.blocks())

    def linear_system(self, closed_form: bool = True) -> LinearSystem:
        hb = self.blocks()
        prop = (lambda t: flow_matrix(self, t)) if closed_form else None
        return LinearSystem(hb.generator(), hb.energy_matrix(), propagator=prop)

    def a_norm(self, state: KgState) -> float:
        """``|state|_A = sqrt(|Lambda q|^2 + |p|^2)``."""
        self._check_state(state)
        return float(np.sqrt(np.sum((self.omega * state.q) ** 2) + np.sum(state.p**2)))

    def _check_state(self, state: KgState):
        if state.q.size != self.size:
            raise DimensionMismatch(f"state has {state.q.size} modes, system has {self.size}")

    def _split(self, v0):
        v0 = np.asarray(v0, dtype=float)
        npts = self.params.n_points
        if v0.shape[0] != 2 * npts:
            raise DimensionMismatch(f"v0 must have length {2 * npts}, got {v0.shape[0]}")
        return v0[:npts], v0[npts:]

    def m_inv_quadratic(self, v0) -> float:
        """``v0^T M^-1 v0`` using the diagonalization of M in the Q basis."""
        vq, vp = self._split(v0)
        zq = self.q_matrix.T @ vq
        zp = self.q_matrix.T @ vp
        return float(np.sum(zq**2 / self.d3) + np.sum(zp**2 / self.d1))

    def lift(self, v) -> KgState:
        """Conditional mean ``A^-1 G M^-1 v`` for constraint values ``v``."""
        vq, vp = self._split(v)
        return self._lift_q_basis(self.q_matrix.T @ vq, self.q_matrix.T @ vp)

    @cached_property
    def lift_basis(self) -> np.ndarray:
        """``gt^T Q`` with its structural zeros enforced.

        Column k only touches coefficient slots of the same parity whose wavenumber
        aliases to ``+-k`` on the grid. Dropping the roundoff elsewhere keeps the lift
        commuting with the mode rotations, which matters once ``1/d3`` is large.
        """
        npts = self.params.n_points
        m, n = self.m, self.n
        slot = np.arange(2 * self.m + 1) - m
        col = np.arange(npts) - n
        slot_mod = np.abs(slot) % npts
        col_k = np.abs(col)
        alias = (slot_mod[:, None] == col_k[None, :]) | (slot_mod[:, None] == (npts - col_k)[None, :])
        parity = (slot[:, None] > 0) == (col[None, :] > 0)
        return np.where(alias & parity, self.gt.T @ self.q_matrix, 0.0)

    def _lift_q_basis(self, zq, zp) -> KgState:
        # staying in Q coordinates avoids a round trip whose roundoff 1/d3 would amplify
        q = (self.lift_basis @ (zq / self.d3)) / self.omega**2
        p = self.lift_basis @ (zp / self.d1)
        return KgState(q, p)

    @property
    def reduced_frequencies(self) -> np.ndarray:
        """Frequencies of the reduced system, ``sqrt(d1 / d3)`` in the Q basis."""
        return np.sqrt(self.d1 / self.d3)

    def defect_diagonal(self) -> np.ndarray:
        """``d2/d1 - d1/d3`` per aliasing class, free of cancellation.

        Uses ``(sum d l)(sum d/l) - (sum d)^2 = sum_{i<j} d_i d_j (l_i - l_j)^2 / (l_i l_j)``
        with weights taken relative to the unaliased term.
        """
        n, r, sigma = self.params.n, self.params.r, self.params.sigma
        ell = _aliased_wavenumbers(n, r).astype(float)
        k = np.arange(-n, n + 1, dtype=float)[:, None]
        w = np.exp(-(ell**2 - k**2) * sigma**2 / 2.0)
        lam = ell**2 + 1.0
        num = np.zeros(2 * n + 1)
        for i in range(2 * r + 1):
            for j in range(i + 1, 2 * r + 1):
                num += w[:, i] * w[:, j] * (lam[:, i] - lam[:, j]) ** 2 / (lam[:, i] * lam[:, j])
        den = w.sum(axis=1) * (w / lam).sum(axis=1)
        return num / den


def build(params: KgParams) -> KgSpectralSystem:
    return KgSpectralSystem(params)


def exact_defect_norm(sys: KgSpectralSystem) -> float:
    """``|F| = |A^-1/2 E M^-1/2|`` from the diagonal form of ``F^T F``."""
    return float(math.sqrt(max(float(np.max(sys.defect_diagonal())), 0.0)))


def lemma2_bound(params: KgParams, force: bool = False) -> float:
    """``1.6 (2n+1) exp(-(2n+1) sigma^2 / 4)``.

    Valid for ``(2n+1) sigma^2 >= 2``; ``force=True`` evaluates the formula
    outside that range and leaves the flagging to the caller.
    """
    if not params.lemma2_hypothesis and not force:
        raise HypothesisViolated(
            f"(2n+1) sigma^2 = {params.scaled_sigma2:.6g} < 2 for n={params.n}"
        )
    return 1.6 * params.n_points * math.exp(-params.scaled_sigma2 / 4.0)


def flow_matrix(sys: KgSpectralSystem, t: float) -> np.ndarray:
    """Closed-form ``exp(t L)`` for ``L = [[0, I], [-Lambda^2, 0]]``."""
    w = sys.omega
    c, s = np.cos(w * t), np.sin(w * t)
    return np.block([[np.diag(c), np.diag(s / w)], [np.diag(-w * s), np.diag(c)]])


def propagate(sys: KgSpectralSystem, state: KgState, t: float) -> KgState:
    sys._check_state(state)
    w = sys.omega
    c, s = np.cos(w * t), np.sin(w * t)
    return KgState(c * state.q + s / w * state.p, -w * s * state.q + c * state.p)


def kg_exact_mean(sys: KgSpectralSystem, v0, t: float) -> KgState:
    return propagate(sys, sys.lift(v0), t)


def _reduced_rotation(sys: KgSpectralSystem, v0, t: float):
    vq, vp = sys._split(v0)
    qm = sys.q_matrix
    zq, zp = qm.T @ vq, qm.T @ vp
    w = sys.reduced_frequencies
    c, s = np.cos(w * t), np.sin(w * t)
    return c * zq + s / w * zp, -w * s * zq + c * zp


def reduced_propagate(sys: KgSpectralSystem, v0, t: float) -> np.ndarray:
    """``v(t)`` of the reduced system, rotated mode by mode in the Q basis."""
    if t == 0:
        vq, vp = sys._split(v0)
        return np.concatenate([vq, vp])
    zq, zp = _reduced_rotation(sys, v0, t)
    return np.concatenate([sys.q_matrix @ zq, sys.q_matrix @ zp])


def kg_approx_mean(sys: KgSpectralSystem, v0, t: float) -> KgState:
    return sys._lift_q_basis(*_reduced_rotation(sys, v0, t))


def kg_lemma1_bound(sys: KgSpectralSystem, v0, t: float) -> float:
    return t * exact_defect_norm(sys) * math.sqrt(sys.m_inv_quadratic(v0))


def _infer_n(m: int, r: int) -> int:
    n, rem = divmod(m - r, 2 * r + 1)
    if rem or n < 1:
        raise DimensionMismatch(f"no n >= 1 gives m={m} at r={r}")
    return n


def embed(state: KgState, from_r: int, to_r: int) -> KgState:
    """Zero-pad the coefficients of resolution ``from_r`` into ``to_r``."""
    if to_r < from_r:
        raise ShrinkNotAllowed(f"cannot embed r={from_r} into smaller r={to_r}")
    n = _infer_n(state.m, from_r)
    pad = (to_r - from_r) * (2 * n + 1)
    return KgState(np.pad(state.q, pad), np.pad(state.p, pad))


def restrict(state: KgState, from_r: int, to_r: int) -> KgState:
    """Drop the modes above resolution ``to_r`` (inverse of ``embed``)."""
    if to_r > from_r:
        raise ValueError("restrict needs to_r <= from_r")
    n = _infer_n(state.m, from_r)
    cut = (from_r - to_r) * (2 * n + 1)
    sl = slice(cut, state.q.size - cut)
    return KgState(state.q[sl], state.p[sl])


def theorem2_epsilon(n: int, nu: float, r: int) -> float:
    """``4 (2n+1)^(-(nu+1)(1 + r + r^2 (2n+1)))``."""
    if n < 1 or nu < 0 or r < 0:
        raise InvalidParams("need n >= 1, nu >= 0, r >= 0")
    npts = 2 * n + 1
    return 4.0 * float(npts) ** (-(nu + 1.0) * (1 + r + r * r * npts))
