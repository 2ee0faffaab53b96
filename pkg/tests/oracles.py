"""Independent reference computations used as test oracles.

Nothing here calls into optpredict; each routine recomputes its quantity by a
different (usually slower, more literal) route.
"""
import math

import numpy as np
from scipy.optimize import minimize


def jacobi_eigvalsh(a, tol=1e-15, max_sweeps=60):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations."""
    a = np.array(a, dtype=float)
    a = 0.5 * (a + a.T)
    m = a.shape[0]
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a**2) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= tol * max(np.linalg.norm(a), 1e-300):
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(m)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))


def taylor_expm(l, t, terms=200):
    """Plain power series of ``exp(tL)``; fine while ``|tL|`` is modest."""
    l = np.asarray(l, dtype=float) * t
    out = np.eye(l.shape[0])
    term = np.eye(l.shape[0])
    for k in range(1, terms):
        term = term @ l / k
        out = out + term
    return out


def constrained_minimizer(a, g, v0):
    """Minimize ``u^T A u`` subject to ``G^T u = v0`` with a generic optimizer."""
    a = np.asarray(a, dtype=float)
    g = np.asarray(g, dtype=float)
    x0 = np.linalg.lstsq(g.T, v0, rcond=None)[0]
    res = minimize(
        lambda u: u @ a @ u,
        x0,
        jac=lambda u: 2.0 * a @ u,
        constraints=[{"type": "eq", "fun": lambda u: g.T @ u - v0, "jac": lambda u: g.T}],
        method="SLSQP",
        options={"ftol": 1e-15, "maxiter": 500},
    )
    return res.x


def kg_points(n):
    return 2.0 * np.pi * np.arange(2 * n + 1) / (2 * n + 1)


def kg_gt_factorized(n, r, sigma):
    """``G^T = U [I ... I] Y Gamma`` assembled in complex arithmetic."""
    npts = 2 * n + 1
    m = n + r * npts
    x = kg_points(n)
    k = np.arange(-n, n + 1)
    u = np.exp(1j * np.outer(x, k)) / math.sqrt(npts)
    stack = np.hstack([np.eye(npts)] * (2 * r + 1))
    ell = np.arange(-m, m + 1)
    gamma = math.sqrt(npts / (2 * np.pi)) * np.diag(np.exp(-(ell**2) * sigma**2 / 4))
    y = np.zeros((2 * m + 1, 2 * m + 1), dtype=complex)
    s = 1.0 / math.sqrt(2.0)
    for row, l in enumerate(ell):
        kk = abs(l)
        if l == 0:
            y[row, m] = 1.0
        else:
            # c_l = (a_k - i b_k)/sqrt2 for l > 0 and its conjugate for l < 0
            y[row, m - kk] = s
            y[row, m + kk] = (-1j if l > 0 else 1j) * s
    gt = u @ stack @ y @ gamma
    return gt


def kernel(x, sigma, m):
    """Truncated periodic Gaussian ``Proj_m g``."""
    k = np.arange(1, m + 1)
    return (1.0 + 2.0 * np.sum(np.exp(-(k**2) * sigma**2 / 4)[:, None] * np.cos(np.outer(k, x)), axis=0)) / (
        2.0 * np.pi
    )


def real_basis(x, m):
    """Columns in coefficient order ``a_m..a_0, b_1..b_m``."""
    cols = []
    for k in range(m, 0, -1):
        cols.append(np.cos(k * x) / math.sqrt(np.pi))
    cols.append(np.full_like(x, 1.0 / math.sqrt(2 * np.pi)))
    for k in range(1, m + 1):
        cols.append(np.sin(k * x) / math.sqrt(np.pi))
    return np.array(cols).T


def kg_gt_quadrature(n, r, sigma, points=1024):
    """Rows ``int g(x - x_alpha) basis(x) dx`` by the periodic trapezoid rule."""
    m = n + r * (2 * n + 1)
    x = 2.0 * np.pi * np.arange(points) / points
    basis = real_basis(x, m)
    w = 2.0 * np.pi / points
    return np.array([w * kernel(x - xa, sigma, m) @ basis for xa in kg_points(n)])


def kg_aliased_diag(n, r, sigma, weight):
    """``(2n+1)/(2 pi) sum_j exp(-l^2 sigma^2/2) weight(l)`` with ``l = k + j(2n+1)``."""
    npts = 2 * n + 1
    out = []
    for k in range(-n, n + 1):
        tot = 0.0
        for j in range(-r, r + 1):
            l = k + j * npts
            tot += math.exp(-(l**2) * sigma**2 / 2) * weight(l)
        out.append(npts / (2 * np.pi) * tot)
    return np.array(out)


def random_spd(rng, m, cond=None):
    r = rng.standard_normal((m, m))
    a = r.T @ r + np.eye(m)
    if cond is not None:
        q, _ = np.linalg.qr(rng.standard_normal((m, m)))
        a = q @ np.diag(np.geomspace(1.0, cond, m)) @ q.T
    return 0.5 * (a + a.T)
