"""Finite-difference curvature oracle.

Knows nothing about the tube ansatz: it takes any metric evaluator
``q (m, d) -> g (m, d, d)`` in a chart, differentiates the components with
central differences (second or fourth order), and assembles Christoffel symbols, the Riemann tensor,
Ricci and scalar curvature. One Richardson step removes the leading truncation term.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .errors import OracleError


# (offset, integer weight) pairs and a common denominator, so the weights
# of each stencil sum to exactly zero in any precision
_D1 = {2: (((1, 1), (-1, -1)), 2),
       4: (((2, -1), (1, 8), (-1, -8), (-2, 1)), 12)}
_D2 = {2: (((1, 1), (0, -2), (-1, 1)), 1),
       4: (((2, -1), (1, 16), (0, -30), (-1, 16), (-2, -1)), 12)}


def _stencil(d: int, order: int):
    """Offsets plus weight tables for all first and second partials."""
    if order not in _D1:
        raise ValueError(f"order must be 2 or 4, got {order}")
    index = {}
    offs = []

    def slot(vec):
        key = tuple(vec)
        if key not in index:
            index[key] = len(offs)
            offs.append(key)
        return index[key]

    slot((0,) * d)
    d1, den1 = _D1[order]
    d2, den2 = _D2[order]
    first, second = [], {}
    for i in range(d):
        row = []
        for o, w in d1:
            e = [0] * d
            e[i] = o
            row.append((slot(e), w))
        first.append((row, den1))
        row = []
        for o, w in d2:
            e = [0] * d
            e[i] = o
            row.append((slot(e), w))
        second[i, i] = (row, den2)
    for i, j in combinations(range(d), 2):
        row = []
        for oi, wi in d1:
            for oj, wj in d1:
                e = [0] * d
                e[i], e[j] = oi, oj
                row.append((slot(e), wi * wj))
        second[i, j] = (row, den1 * den1)
    return np.array(offs, dtype=float), first, second


def metric_derivatives(metric, points, step: float, order: int = 2):
    """Central differences of the given order: (g, dg[a], ddg[a, b]) at each point.

    Stencil points are formed and differenced in extended precision (the
    metric may evaluate in float64 or longdouble); results are float64.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    P, d = points.shape
    offs, first, second = _stencil(d, order)
    S = offs.shape[0]
    ext = np.longdouble
    q = (points.astype(ext)[:, None, :] + ext(step) * offs.astype(ext)[None, :, :]).reshape(P * S, d)
    G = np.asarray(metric(q)).astype(ext).reshape(P, S, d, d)
    g = G[:, 0]
    dg = np.empty((P, d, d, d), dtype=ext)
    ddg = np.empty((P, d, d, d, d), dtype=ext)
    h = ext(step)
    for i, (row, den) in enumerate(first):
        dg[:, i] = sum(w * G[:, k] for k, w in row) / (den * h)
    for (i, j), (row, den) in second.items():
        val = sum(w * G[:, k] for k, w in row) / (den * h * h)
        ddg[:, i, j] = val
        ddg[:, j, i] = val
    return g.astype(float), dg.astype(float), ddg.astype(float)


def curvature_from_derivatives(g, dg, ddg):
    """Riemann R_{abcd}, Ricci R_{bd} and scalar from metric jets.

    Convention: R_{abcd} = g_{ae} R^e_{bcd}, Ricci R_{bd} = g^{ac} R_{abcd};
    the round unit sphere has positive scalar curvature n(n-1).
    """
    eig = np.linalg.eigvalsh(g)
    if np.any(eig <= 0) or not np.all(np.isfinite(eig)):
        raise OracleError("degenerate or non-finite metric at an oracle sample point")
    gi = np.linalg.inv(g)
    # Christoffel symbols of the first kind: Gam1[l, i, j] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    Gam1 = 0.5 * (np.einsum("pijl->plij", dg) + np.einsum("pjil->plij", dg) - dg)
    Gam2 = np.einsum("pkl,plij->pkij", gi, Gam1)
    # second-derivative part: 1/2 (d_b d_c g_ad + d_a d_d g_bc - d_a d_c g_bd - d_b d_d g_ac)
    dd = 0.5 * (np.einsum("pbcad->pabcd", ddg) + np.einsum("padbc->pabcd", ddg)
                - np.einsum("pacbd->pabcd", ddg) - np.einsum("pbdac->pabcd", ddg))
    quad = (np.einsum("pef,pebc,pfad->pabcd", g, Gam2, Gam2)
            - np.einsum("pef,pebd,pfac->pabcd", g, Gam2, Gam2))
    riem = dd + quad
    ricci = np.einsum("pac,pabcd->pbd", gi, riem)
    scalar = np.einsum("pbd,pbd->p", gi, ricci)
    return riem, ricci, scalar


def fd_curvature(metric, points, step: float = 1e-3, richardson: bool = True, full: bool = False,
                 order: int = 2):
    """Scalar curvature at ``points`` (shape (P, d) or (d,)) from metric samples.

    With ``richardson`` the scalar is (2^p S(h/2) - S(h)) / (2^p - 1) for
    stencil order p. With ``full`` a dict with the Riemann and Ricci tensors
    at step h/2 is returned as well.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    riem, ricci, s_half = curvature_from_derivatives(*metric_derivatives(metric, pts, step / 2.0, order))
    if richardson:
        _, _, s_full = curvature_from_derivatives(*metric_derivatives(metric, pts, step, order))
        k = 2.0**order
        scalar = (k * s_half - s_full) / (k - 1.0)
    else:
        scalar = s_half
    if single:
        scalar = scalar[0]
    if full:
        return scalar, {"riemann": riem, "ricci": ricci}
    return scalar
