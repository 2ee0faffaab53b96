"""Second-order systems ``q'' = -A0^2 q`` written in block form.

With ``u = (q, p)`` the generator is ``L = [[0, I], [-A0^2, 0]]``, the energy
matrix ``A = diag(A0^2, I)`` and the constraints act on ``q`` and ``p``
separately through ``G = diag(G_q, G_p)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import BlocksDiffer, DimensionMismatch
from .op_core import ConstraintSet, LinearSystem


@dataclass(frozen=True)
class HamiltonianBlocks:
    a0sq: np.ndarray
    gq: np.ndarray
    gp: np.ndarray

    def __post_init__(self):
        a0sq = linalg.symmetrize(self.a0sq)
        gq = linalg.as_matrix(self.gq, "G_q")
        gp = linalg.as_matrix(self.gp, "G_p")
        s = a0sq.shape[0]
        if gq.shape[0] != s or gp.shape[0] != s:
            raise DimensionMismatch(f"constraint blocks must have {s} rows")
        object.__setattr__(self, "a0sq", a0sq)
        object.__setattr__(self, "gq", gq)
        object.__setattr__(self, "gp", gp)

    @property
    def order(self) -> int:
        return self.a0sq.shape[0]

    @property
    def same_blocks(self) -> bool:
        return self.gq.shape == self.gp.shape and np.array_equal(self.gq, self.gp)

    def generator(self) -> np.ndarray:
        s = self.order
        l = np.zeros((2 * s, 2 * s))
        l[:s, s:] = np.eye(s)
        l[s:, :s] = -self.a0sq
        return l

    def energy_matrix(self) -> np.ndarray:
        s = self.order
        a = np.zeros((2 * s, 2 * s))
        a[:s, :s] = self.a0sq
        a[s:, s:] = np.eye(s)
        return a

    def constraint_matrix(self) -> np.ndarray:
        s = self.order
        nq, np_ = self.gq.shape[1], self.gp.shape[1]
        g = np.zeros((2 * s, nq + np_))
        g[:s, :nq] = self.gq
        g[s:, nq:] = self.gp
        return g


def assemble(hb: HamiltonianBlocks, **system_kw) -> tuple[LinearSystem, ConstraintSet]:
    sys = LinearSystem(hb.generator(), hb.energy_matrix(), **system_kw)
    return sys, ConstraintSet(sys, hb.constraint_matrix())


def _shared_block(hb: HamiltonianBlocks) -> np.ndarray:
    if not hb.same_blocks:
        raise BlocksDiffer("this operation assumes G_q == G_p")
    return hb.gq


def reduced_system_matrix(hb: HamiltonianBlocks) -> np.ndarray:
    """``[[0, I], [-(G^T G)(G^T A0^-2 G)^-1, 0]]``."""
    g = _shared_block(hb)
    n = g.shape[1]
    gtg = g.T @ g
    m_q = linalg.symmetrize(g.T @ linalg.spd_solve(hb.a0sq, g))
    out = np.zeros((2 * n, 2 * n))
    out[:n, n:] = np.eye(n)
    # (G^T G) M_q^-1 = (M_q^-1 G^T G)^T
    out[n:, :n] = -linalg.spd_solve(m_q, gtg).T
    return out


def _ingredients(hb: HamiltonianBlocks):
    g = _shared_block(hb)
    a0, a0_inv = linalg.spd_sqrt(hb.a0sq)
    gtg_sqrt, gtg_isqrt = linalg.spd_sqrt(g.T @ g)
    m_q = linalg.symmetrize(g.T @ a0_inv @ a0_inv @ g)
    return g, a0, a0_inv, gtg_sqrt, gtg_isqrt, m_q


def f_matrix(hb: HamiltonianBlocks) -> np.ndarray:
    """``F = -A0 G (G^T G)^-1/2 + A0^-1 G (G^T A0^-2 G)^-1 (G^T G)^1/2``.

    ``|F|`` equals ``|A^-1/2 E M^-1/2|`` of the assembled system.
    """
    g, a0, a0_inv, gtg_sqrt, gtg_isqrt, m_q = _ingredients(hb)
    return -a0 @ g @ gtg_isqrt + a0_inv @ g @ linalg.spd_solve(m_q, gtg_sqrt)


def ftf_matrix(hb: HamiltonianBlocks) -> np.ndarray:
    """``F^T F`` in the closed form
    ``(G^T G)^-1/2 (G^T A0^2 G) (G^T G)^-1/2 - (G^T G)^1/2 (G^T A0^-2 G)^-1 (G^T G)^1/2``.
    """
    g, _, _, gtg_sqrt, gtg_isqrt, m_q = _ingredients(hb)
    first = gtg_isqrt @ (g.T @ hb.a0sq @ g) @ gtg_isqrt
    second = gtg_sqrt @ linalg.spd_solve(m_q, gtg_sqrt)
    return linalg.symmetrize(first - second)
