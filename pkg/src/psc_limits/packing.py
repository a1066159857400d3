"""Tube charts, great-circle geometry, ball packing and circle atlases.

The sphere atlas follows the greedy construction: a maximal family of
disjoint eta-balls, then for each (requested) pair of centres a great circle
passing within eta/2 of both and disjoint from every circle picked earlier.
The torus atlas uses axis-parallel closed geodesics through the centres.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .errors import PackingError, ParameterError
from .geometry import FlatTorus, Sphere

logger = logging.getLogger(__name__)

R_CAP = 0.01 * (1.0 - 1e-9)


@dataclass(frozen=True)
class GreatCircle:
    """Great circle s -> u cos s + v sin s through an orthonormal pair (u, v)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if abs(np.linalg.norm(u) - 1) > 1e-12 or abs(np.linalg.norm(v) - 1) > 1e-12 or abs(u @ v) > 1e-12:
            raise ParameterError("great circle frame must be orthonormal")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def through(cls, a, b, rng: Optional[np.random.Generator] = None) -> "GreatCircle":
        """The great circle through unit vectors a and b (random plane if b = +-a)."""
        u = np.asarray(a, dtype=float)
        u = u / np.linalg.norm(u)
        w = np.asarray(b, dtype=float) - (u @ b) * u
        if np.linalg.norm(w) < 1e-9:
            rng = rng or np.random.default_rng(0)
            w = rng.standard_normal(u.shape)
            w -= (w @ u) * u
        v = w / np.linalg.norm(w)
        v -= (v @ u) * u
        v /= np.linalg.norm(v)
        return cls(u, v)

    @property
    def frame(self) -> np.ndarray:
        return np.stack([self.u, self.v], axis=1)

    def point(self, s):
        s = np.asarray(s, dtype=float)[..., None]
        return np.cos(s) * self.u + np.sin(s) * self.v

    def tangent(self, s):
        s = np.asarray(s, dtype=float)[..., None]
        return -np.sin(s) * self.u + np.cos(s) * self.v

    def to_jsonable(self):
        return {"u": self.u.tolist(), "v": self.v.tolist()}


class TubeChart:
    """Coordinates (r, x, s) around a great circle: p = x sin r + y(s) cos r."""

    variant = "sphere"

    def __init__(self, circle: GreatCircle):
        self.circle = circle

    @property
    def length(self) -> float:
        return 2.0 * np.pi

    def core_point(self, s):
        return self.circle.point(s)

    def core_tangent(self, s):
        return self.circle.tangent(s)

    def coords(self, p):
        """(r, x, s) for ambient points p; x is NaN on the core, s NaN on the polar set."""
        p = np.asarray(p, dtype=float)
        a = p @ self.circle.u
        b = p @ self.circle.v
        orth = p - a[..., None] * self.circle.u - b[..., None] * self.circle.v
        on = np.linalg.norm(orth, axis=-1)
        pr = np.hypot(a, b)
        r = np.arctan2(on, pr)
        with np.errstate(invalid="ignore", divide="ignore"):
            x = np.where(on[..., None] > 0, orth / on[..., None], np.nan)
        s = np.where(pr > 0, np.mod(np.arctan2(b, a), 2 * np.pi), np.nan)
        return r, x, s

    def embed(self, r, x, s):
        r = np.asarray(r, dtype=float)[..., None]
        return np.asarray(x) * np.sin(r) + self.circle.point(s) * np.cos(r)

    def distance_to_core(self, p):
        return self.coords(p)[0]

    def nearest_core_point(self, p):
        p = np.asarray(p, dtype=float)
        a = p @ self.circle.u
        b = p @ self.circle.v
        return np.mod(np.arctan2(b, a), 2 * np.pi)

    def directions(self, p):
        """Unit ambient vectors (d/dr, d/ds normalized, x) at p."""
        r, x, s = self.coords(p)
        y = self.circle.point(s)
        dr = x * np.cos(r)[..., None] - y * np.sin(r)[..., None]
        ds = self.circle.tangent(s)
        return dr, ds, x

    def to_jsonable(self):
        return {"type": "great_circle", **self.circle.to_jsonable()}


class AxisGeodesicChart:
    """Closed geodesic c + s e_k in a flat torus, with coordinates (r, x, s)."""

    variant = "torus"

    def __init__(self, torus: FlatTorus, base, axis: int):
        self.torus = torus
        self.base = torus.project(np.asarray(base, dtype=float))
        self.axis = int(axis)

    @property
    def length(self) -> float:
        return self.torus.periods[self.axis]

    @property
    def injectivity_radius(self) -> float:
        others = [L for j, L in enumerate(self.torus.periods) if j != self.axis]
        return 0.5 * min(others)

    def core_point(self, s):
        s = np.asarray(s, dtype=float)
        e = np.zeros(self.torus.n)
        e[self.axis] = 1.0
        return self.torus.project(self.base + s[..., None] * e)

    def core_tangent(self, s):
        e = np.zeros(self.torus.n)
        e[self.axis] = 1.0
        return np.broadcast_to(e, np.shape(s) + (self.torus.n,)).copy()

    def coords(self, p):
        p = np.asarray(p, dtype=float)
        d = self.torus.displacement(self.base, p)
        s = np.mod(p[..., self.axis] - self.base[self.axis], self.length)
        orth = d.copy()
        orth[..., self.axis] = 0.0
        r = np.linalg.norm(orth, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            x = np.where(r[..., None] > 0, orth / r[..., None], np.nan)
        return r, x, s

    def embed(self, r, x, s):
        return self.torus.project(self.core_point(s) + np.asarray(r)[..., None] * np.asarray(x))

    def distance_to_core(self, p):
        return self.coords(p)[0]

    def nearest_core_point(self, p):
        return self.coords(p)[2]

    def directions(self, p):
        r, x, s = self.coords(p)
        return x, self.core_tangent(s), x

    def to_jsonable(self):
        return {"type": "axis_geodesic", "base": self.base.tolist(), "axis": self.axis}


def tube_coords(chart, p):
    """(r, x, s) of ambient point(s) p in the tube chart."""
    return chart.coords(p)


# ---------------------------------------------------------------------------
# circle distances


def _principal_min_angle(F, f):
    """Smallest principal angle between plane span(f) and each plane span(F[k]).

    Uses the sine form for small angles and the cosine form otherwise.
    """
    F = np.asarray(F, dtype=float)
    M = np.einsum("kai,aj->kij", F, f)
    cos = np.linalg.svd(M, compute_uv=False)[:, 0]
    B = f[None, :, :] - np.einsum("kai,kij->kaj", F, M)
    sin = np.linalg.svd(B, compute_uv=False)[:, -1]
    cos = np.clip(cos, -1.0, 1.0)
    sin = np.clip(sin, 0.0, 1.0)
    return np.where(sin < np.sqrt(0.5), np.arcsin(sin), np.arccos(cos))


def circle_distance(c1: GreatCircle, c2: GreatCircle) -> float:
    """Minimal spherical distance between two great circles (smallest principal angle)."""
    return float(_principal_min_angle(c1.frame[None], c2.frame)[0])


def circle_distance_grid(c1: GreatCircle, c2: GreatCircle, n_grid: int = 256) -> float:
    """Brute-force oracle: grid minimization of the chord, then local refinement."""
    s = np.linspace(0, 2 * np.pi, n_grid, endpoint=False)
    P1, P2 = c1.point(s), c2.point(s)
    chord2 = np.sum((P1[:, None, :] - P2[None, :, :]) ** 2, axis=-1)
    i, j = np.unravel_index(np.argmin(chord2), chord2.shape)

    def fun(x):
        d = c1.point(x[0]) - c2.point(x[1])
        return float(d @ d)

    def jac(x):
        d = c1.point(x[0]) - c2.point(x[1])
        return np.array([2 * d @ c1.tangent(x[0]), -2 * d @ c2.tangent(x[1])])

    res = minimize(fun, np.array([s[i], s[j]]), jac=jac, method="BFGS", options={"gtol": 1e-15})
    chord = np.sqrt(max(min(res.fun, chord2[i, j]), 0.0))
    return float(2.0 * np.arcsin(min(chord / 2.0, 1.0)))


def axis_geodesic_distance(c1: AxisGeodesicChart, c2: AxisGeodesicChart) -> float:
    d = c1.torus.displacement(c1.base, c2.base)
    d[c1.axis] = 0.0
    d[c2.axis] = 0.0
    return float(np.linalg.norm(d))


def chart_distance(c1, c2) -> float:
    if isinstance(c1, TubeChart):
        return circle_distance(c1.circle, c2.circle)
    return axis_geodesic_distance(c1, c2)


# ---------------------------------------------------------------------------
# packing


def pack_balls(manifold, eta: float, seed: int = 0, candidates=None, batch: int = 4096,
               coverage_samples: int = 10000, max_rounds: int = 200) -> np.ndarray:
    """Greedy packing of disjoint eta-balls (centres pairwise > 2 eta apart).

    With ``candidates`` the greedy pass runs over them in order, so every
    candidate ends within 2 eta of a centre. Otherwise random batches are
    drawn until a fresh sample of ``coverage_samples`` points is covered.
    """
    if isinstance(manifold, Sphere) and not 0.0 < eta < np.pi / 2:
        raise ParameterError(f"eta must lie in (0, pi/2) on the sphere, got {eta}")
    if eta <= 0:
        raise ParameterError("eta must be positive")
    centers = []

    def absorb(points):
        added = 0
        for p in points:
            if centers:
                d = manifold.distance(np.asarray(centers), p)
                if np.min(d) <= 2.0 * eta:
                    continue
            centers.append(np.array(p, dtype=float))
            added += 1
        return added

    if candidates is not None:
        absorb(np.asarray(candidates, dtype=float))
        return np.asarray(centers)

    rng = np.random.default_rng(seed)
    for _ in range(max_rounds):
        absorb(manifold.sample(rng, batch))
        probe = manifold.sample(rng, coverage_samples)
        if coverage_gaps(manifold, np.asarray(centers), probe, 2.0 * eta).size == 0:
            break
        absorb(probe)
    else:
        logger.warning("packing did not saturate within %d rounds", max_rounds)
    return np.asarray(centers)


def coverage_gaps(manifold, centers, points, radius):
    """Indices of points farther than ``radius`` from every centre."""
    centers = np.asarray(centers)
    out = []
    for k in range(0, len(points), 2048):
        chunk = points[k:k + 2048]
        if isinstance(manifold, Sphere):
            d = 2.0 * np.arcsin(np.clip(
                np.sqrt(np.maximum(2.0 - 2.0 * chunk @ centers.T, 0.0)) / 2.0, 0, 1))
        else:
            d = manifold.distance(chunk[:, None, :], centers[None, :, :])
        out.append(k + np.nonzero(d.min(axis=1) > radius)[0])
    return np.concatenate(out) if out else np.array([], dtype=int)


# ---------------------------------------------------------------------------
# atlases


@dataclass
class PackedAtlas:
    manifold: object
    eta: float
    centers: np.ndarray
    charts: list
    pair_map: dict = field(default_factory=dict)
    R: float = R_CAP
    min_distance: float = np.inf
    seed: int = 0

    @property
    def N(self) -> int:
        return len(self.charts)

    def distances_to_cores(self, p):
        """(m, N) array of background distances from points to each core curve."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        if isinstance(self.manifold, Sphere):
            F = np.stack([c.circle.frame for c in self.charts])  # (N, d, 2)
            ab = np.einsum("md,kdi->mki", p, F)
            proj = np.einsum("kdi,mki->mkd", F, ab)
            orth = np.linalg.norm(p[:, None, :] - proj, axis=-1)
            return np.arctan2(orth, np.linalg.norm(ab, axis=-1))
        out = np.empty((p.shape[0], self.N))
        for k, c in enumerate(self.charts):
            out[:, k] = c.distance_to_core(p)
        return out

    def pairwise_distances(self) -> np.ndarray:
        """Condensed vector of core-curve distances over all pairs (closed form)."""
        if self.N < 2:
            return np.array([])
        out = []
        if isinstance(self.manifold, Sphere):
            F = np.stack([c.circle.frame for c in self.charts])
            for k in range(self.N - 1):
                out.append(_principal_min_angle(F[k + 1:], F[k]))
            return np.concatenate(out)
        for a in range(self.N - 1):
            for b in range(a + 1, self.N):
                out.append(axis_geodesic_distance(self.charts[a], self.charts[b]))
        return np.asarray(out)

    def pair_coverage(self, x, y, radius):
        """Boolean per pair: some core curve lies within ``radius`` of both x and y."""
        dx = self.distances_to_cores(x)
        dy = self.distances_to_cores(y)
        return np.any(np.maximum(dx, dy) <= radius, axis=1)

    def to_jsonable(self):
        return {
            "manifold": self.manifold.to_jsonable(),
            "eta": self.eta,
            "R": self.R,
            "min_distance": self.min_distance,
            "seed": self.seed,
            "centers": np.asarray(self.centers).tolist(),
            "charts": [c.to_jsonable() for c in self.charts],
            "pair_map": {f"{i},{j}": k for (i, j), k in sorted(self.pair_map.items())},
        }


def _tube_radius(min_distance, factor, cap):
    return float(min(cap, factor * min_distance)) if np.isfinite(min_distance) else float(cap)


def select_circles(manifold: Sphere, centers, eta: float, seed: int = 0, pairs=None,
                   max_retries: int = 1000, candidates_per_try: int = 8,
                   min_separation: float = 1e-9, R_factor: float = 1.0 / 3.0) -> PackedAtlas:
    """Choose a great circle per centre pair, within eta/2 of both, pairwise disjoint.

    Each attempt draws ``candidates_per_try`` circles through independently
    perturbed centres (perturbation <= eta/2) and keeps the one farthest from
    the circles already chosen.
    """
    if not isinstance(manifold, Sphere):
        raise ParameterError("select_circles builds great-circle atlases on the sphere")
    if manifold.n < 4:
        raise ParameterError("disjoint great circles through arbitrary pairs need n >= 4")
    centers = np.asarray(centers, dtype=float)
    if pairs is None:
        pairs = [(i, j) for i in range(len(centers)) for j in range(i + 1, len(centers))]
    rng = np.random.default_rng(seed)
    charts, frames, pair_map = [], [], {}
    min_dist = np.inf
    for (i, j) in pairs:
        key = (min(i, j), max(i, j))
        if key in pair_map:
            continue
        chosen = None
        for _ in range(max_retries):
            cands = [GreatCircle.through(manifold.perturb(centers[i], eta / 2, rng),
                                         manifold.perturb(centers[j], eta / 2, rng), rng)
                     for _ in range(candidates_per_try)]
            if frames:
                F = np.stack(frames)
                dists = np.array([_principal_min_angle(F, c.frame).min() for c in cands])
            else:
                dists = np.full(len(cands), np.inf)
            k = int(np.argmax(dists))
            if dists[k] > min_separation:
                chosen = cands[k]
                min_dist = min(min_dist, float(dists[k]))
                break
        if chosen is None:
            raise PackingError(f"could not find a circle for centre pair {key} disjoint from the others")
        pair_map[key] = len(charts)
        charts.append(TubeChart(chosen))
        frames.append(chosen.frame)
    R = _tube_radius(min_dist, R_factor, R_CAP)
    return PackedAtlas(manifold, eta, centers, charts, pair_map, R, min_dist, seed)


def select_axis_geodesics(torus: FlatTorus, centers, eta: float, seed: int = 0,
                          R_factor: float = 1.0 / 3.0, R_cap: float = 1.0,
                          candidates_per_try: int = 8) -> PackedAtlas:
    """One axis-parallel closed geodesic per centre and direction.

    Each line passes within eta/2 of its centre; the base is the best of
    ``candidates_per_try`` perturbations, kept farthest from the lines
    already chosen (lines through one point would intersect).
    """
    centers = np.asarray(centers, dtype=float)
    rng = np.random.default_rng(seed)
    charts = []
    for c in centers:
        for k in range(torus.n):
            cands = [AxisGeodesicChart(torus, torus.perturb(c, eta / 2, rng), k)
                     for _ in range(candidates_per_try)]
            if charts:
                score = [min(axis_geodesic_distance(a, b) for b in charts) for a in cands]
                charts.append(cands[int(np.argmax(score))])
            else:
                charts.append(cands[0])
    atlas = PackedAtlas(torus, eta, centers, charts, {}, R_cap, np.inf, seed)
    d = atlas.pairwise_distances()
    min_dist = float(d.min()) if d.size else np.inf
    if d.size and min_dist <= 0:
        raise PackingError("two axis geodesics coincide or intersect")
    inj = min(c.injectivity_radius for c in charts)
    atlas.min_distance = min_dist
    atlas.R = _tube_radius(min_dist, R_factor, min(R_cap, 0.5 * inj * (1 - 1e-9)))
    return atlas


def build_atlas(manifold, eta: float, seed: int = 0, **kw) -> PackedAtlas:
    """Pack eta-balls and select the core curves for the given background."""
    centers = pack_balls(manifold, eta, seed=seed)
    if isinstance(manifold, Sphere):
        return select_circles(manifold, centers, eta, seed=seed, **kw)
    return select_axis_geodesics(manifold, centers, eta, seed=seed)
