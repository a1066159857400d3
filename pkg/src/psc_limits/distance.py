"""Distance bounds for the assembled metric and a graph oracle for d_h.

The distance of the assembled metric g_eps is never computed directly;
it is bracketed instead:

* lower: d_h / sqrt(1 + eps), valid once exp(2f) g0 <= (1+eps) g_eps is certified;
* upper: the length of an explicit path that follows an approximate
  h-minimizer chunk by chunk, hopping onto a nearby core curve, running
  along it (where g_eps restricts to exp(2f) ds^2) and hopping off.

d_h itself is exact for constant f and otherwise comes from shortest paths
on a k-nearest-neighbour graph whose edges are background geodesic arcs.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from .assembly import AssembledMetric, LemmaCertificate, _random_partner, assemble, check_assembled_properties
from .errors import OracleError, PackingError, ParameterError, PreconditionError
from .geometry import FlatTorus, Sphere
from .packing import pack_balls, select_axis_geodesics, select_circles
from .profiles import ConformalFactor

logger = logging.getLogger(__name__)

# Gauss-Legendre nodes on [0, 1] for mesh edge lengths
_GL_CACHE = {}


def _gauss01(k):
    if k not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(k)
        _GL_CACHE[k] = (0.5 * (x + 1.0), 0.5 * w)
    return _GL_CACHE[k]


# ---------------------------------------------------------------------------
# modulus of continuity


def audit_modulus(f: ConformalFactor, epsilon: float, delta: float, n_pairs: int = 100_000, seed: int = 0) -> float:
    """Max |f(x) - f(y)| over random pairs with d0(x, y) <= 2 delta e^{fbar}."""
    rng = np.random.default_rng(seed)
    M = f.manifold
    scale = min(2.0 * delta * np.exp(f.f_bar), M.diameter)
    x = M.sample(rng, n_pairs)
    y = _random_partner(M, x, scale * rng.uniform(size=n_pairs), rng)
    return float(np.max(np.abs(f(x) - f(y))))


def modulus_delta(f: ConformalFactor, epsilon: float, n_audit: int = 100_000, seed: int = 0,
                  floor: float = 1e-9) -> float:
    """A delta in (0, 1] with d0(x,y) <= 2 delta e^{fbar} => |f(x) - f(y)| < log(1+eps)/2.

    Constant f gives 1. With a Lipschitz constant K the start is
    log(1+eps) / (5 K e^{fbar}); otherwise K is estimated from close pairs.
    Delta is halved until a random audit at the critical scale passes.
    """
    if epsilon <= 0:
        raise ParameterError("epsilon must be positive")
    if f.constant is not None or f.lipschitz == 0.0:
        return 1.0
    tol = 0.5 * np.log1p(epsilon)
    K = f.lipschitz
    if K is None:
        rng = np.random.default_rng(seed + 1)
        x = f.manifold.sample(rng, 20_000)
        h = 1e-3
        y = _random_partner(f.manifold, x, np.full(len(x), h), rng)
        K = 1.5 * float(np.max(np.abs(f(x) - f(y)))) / h
    delta = min(1.0, np.log1p(epsilon) / (5.0 * max(K, 1e-300) * np.exp(f.f_bar)))
    while delta >= floor:
        if audit_modulus(f, epsilon, delta, n_audit, seed) < tol:
            return float(delta)
        delta /= 2.0
    raise ParameterError(f"modulus delta fell below the floor {floor}")


# ---------------------------------------------------------------------------
# lengths of background arcs under h


def arc_length_h(f: Optional[ConformalFactor], manifold, p, q, rel_tol: float = 1e-10) -> float:
    """h-length of the background minimizing arc from p to q (adaptive quadrature)."""
    d0 = float(manifold.distance(p, q))
    if f is None:
        return d0
    if f.constant is not None:
        return float(np.exp(f.constant) * d0)
    if d0 == 0.0:
        return 0.0

    def integrand(t):
        return float(np.exp(f(manifold.geodesic(p, q, np.array([t])))[0]))

    return d0 * quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=rel_tol, limit=200)[0]


def core_arc_length(block_chart, f: ConformalFactor, s0: float, s1: float, rel_tol: float = 1e-10) -> float:
    """Integral of e^{f} along the core curve from parameter s0 to s1 (s1 >= s0)."""
    if f.constant is not None:
        return float(np.exp(f.constant) * (s1 - s0))

    def integrand(t):
        return float(np.exp(f(block_chart.core_point(np.array([t])))[0]))

    return quad(integrand, s0, s1, epsabs=0.0, epsrel=rel_tol, limit=200)[0]


def circle_arc_vs_distance(f: ConformalFactor, x, y, delta: float, epsilon: float,
                           mesh: Optional["GeodesicMesh"] = None, ix: int = None, iy: int = None):
    """Check L_h(background arc x->y) <= (1+eps) d_h(x, y) when d_h(x, y) <= 2 delta.

    d_h is exact for constant f, otherwise the mesh value between nodes
    ``ix`` and ``iy``. Returns None (with a log notice) when the
    precondition fails.
    """
    M = f.manifold
    L = arc_length_h(f, M, x, y)
    if f.constant is not None:
        dh, tol = L, 0.0
    else:
        if mesh is None:
            raise ParameterError("nonconstant f needs a mesh oracle")
        dh, _ = mesh.distance(ix, iy)
        tol = 0.0
    if dh > 2.0 * delta:
        logger.info("skipping pair: d_h = %g exceeds 2 delta = %g", dh, 2 * delta)
        return None
    return {"arc_h": L, "d_h": dh, "ratio": L / dh if dh > 0 else 1.0,
            "passed": bool(L <= (1.0 + epsilon) * dh + tol)}


# ---------------------------------------------------------------------------
# graph oracle


@dataclass(frozen=True)
class MeshBand:
    """Error band of graph distances: true d lies in [g - absolute - relative * g, g].

    Calibrated on the background metric; ``scaled`` transfers it to a
    conformal metric by the largest length factor e^{max f}.
    """

    absolute: float
    relative: float
    n_pairs: int
    seed: int
    safety: float

    def lower(self, g):
        return np.maximum(np.asarray(g) - self.absolute - self.relative * np.asarray(g), 0.0)

    def scaled(self, factor: float) -> "MeshBand":
        return MeshBand(self.absolute * factor, self.relative, self.n_pairs, self.seed, self.safety)

    def to_jsonable(self):
        return dict(self.__dict__)


class GeodesicMesh:
    """k-NN graph on manifold samples with h-lengths of background arcs as weights.

    ``extra_points`` are placed first, so query point i has node index i.
    Graph distances are lengths of actual paths, hence upper bounds on d_h
    up to quadrature error.
    """

    def __init__(self, manifold, f: Optional[ConformalFactor] = None, n_points: int = 8000, k: int = 48,
                 seed: int = 0, extra_points=None, n_quad: int = 8):
        self.manifold = manifold
        self.f = f
        self.k = int(k)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        pts = manifold.sample(rng, n_points)
        if extra_points is not None:
            extra = np.atleast_2d(np.asarray(extra_points, dtype=float))
            pts = np.concatenate([extra, pts])
            self.n_extra = len(extra)
        else:
            self.n_extra = 0
        self.points = pts
        if isinstance(manifold, FlatTorus):
            tree = cKDTree(np.mod(pts, manifold.L), boxsize=manifold.L)
        else:
            tree = cKDTree(pts)
        _, nbr = tree.query(pts, k=self.k + 1)
        i = np.repeat(np.arange(len(pts)), self.k)
        j = nbr[:, 1:].reshape(-1)
        a, b = np.minimum(i, j), np.maximum(i, j)
        key = np.unique(a.astype(np.int64) * len(pts) + b)
        self.edges = np.stack([key // len(pts), key % len(pts)], axis=1)
        self.weights = self._edge_lengths(self.edges, n_quad)
        qerr = self._quadrature_error(n_quad)
        self.quadrature_error = qerr
        n = len(pts)
        W = coo_matrix((np.concatenate([self.weights, self.weights]),
                        (np.concatenate([self.edges[:, 0], self.edges[:, 1]]),
                         np.concatenate([self.edges[:, 1], self.edges[:, 0]]))), shape=(n, n)).tocsr()
        self.graph = W
        ncomp, _ = connected_components(W, directed=False)
        if ncomp != 1:
            raise OracleError(f"mesh graph is disconnected ({ncomp} components); raise k or n_points")
        self._rows = {}
        self.band: Optional[MeshBand] = None

    def _edge_lengths(self, edges, n_quad):
        p, q = self.points[edges[:, 0]], self.points[edges[:, 1]]
        d0 = self.manifold.distance(p, q)
        if self.f is None:
            return d0
        if self.f.constant is not None:
            return np.exp(self.f.constant) * d0
        t, w = _gauss01(n_quad)
        vals = np.stack([np.exp(self.f(self.manifold.geodesic(p, q, np.full(len(p), tk)))) for tk in t], axis=1)
        return d0 * (vals @ w)

    def _quadrature_error(self, n_quad, n_check=500):
        """Max relative change of sampled edge lengths when the node count doubles."""
        if self.f is None or self.f.constant is not None:
            return 0.0
        idx = np.linspace(0, len(self.edges) - 1, min(n_check, len(self.edges))).astype(int)
        a = self._edge_lengths(self.edges[idx], n_quad)
        b = self._edge_lengths(self.edges[idx], 2 * n_quad)
        return float(np.max(np.abs(a - b) / b))

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    def resolution(self):
        d0 = self.manifold.distance(self.points[self.edges[:, 0]], self.points[self.edges[:, 1]])
        return {"n_nodes": self.n_nodes, "n_edges": len(self.edges), "k": self.k,
                "edge_d0_mean": float(d0.mean()), "edge_d0_max": float(d0.max()),
                "quadrature_error": self.quadrature_error}

    def rows(self, sources):
        """Single-source shortest-path rows, cached per source."""
        sources = [int(s) for s in np.atleast_1d(sources)]
        todo = [s for s in sources if s not in self._rows]
        if todo:
            D = dijkstra(self.graph, directed=False, indices=todo)
            for s, row in zip(todo, np.atleast_2d(D)):
                self._rows[s] = row
        return np.stack([self._rows[s] for s in sources])

    def distance(self, i: int, j: int):
        """(graph distance, lower end of the band or None)."""
        val = float(self.rows([i])[0, j])
        if not np.isfinite(val):
            raise OracleError(f"nodes {i} and {j} are disconnected")
        return val, (None if self.band is None else float(self.band.lower(val)))

    def path(self, i: int, j: int) -> np.ndarray:
        """Node sequence of a shortest path from i to j."""
        _, pred = dijkstra(self.graph, directed=False, indices=int(i), return_predecessors=True)
        out = [int(j)]
        while out[-1] != i:
            nxt = pred[out[-1]]
            if nxt < 0:
                raise OracleError("no path")
            out.append(int(nxt))
        return np.array(out[::-1])


def calibrate_band(manifold, n_points: int = 8000, k: int = 48, seed: int = 1, n_pairs: int = 500,
                   safety: float = 1.5) -> MeshBand:
    """Error band of graph distances, measured against exact background distances.

    Runs on its own mesh and pairs (keyed by ``seed``). The relative part is
    the worst excess ratio among the longer half of the pairs, the absolute
    part covers what remains; both are multiplied by ``safety``.
    """
    rng = np.random.default_rng(seed + 7919)
    x = manifold.sample(rng, n_pairs)
    y = manifold.sample(rng, n_pairs)
    mesh = GeodesicMesh(manifold, None, n_points, k, seed, extra_points=np.concatenate([x, y]))
    D = mesh.rows(np.arange(n_pairs))
    g = D[np.arange(n_pairs), n_pairs + np.arange(n_pairs)]
    exact = manifold.distance(x, y)
    err = g - exact
    if np.min(err) < -1e-9 * np.max(exact):
        raise OracleError("graph distance fell below the exact distance; edge lengths are wrong")
    long = exact >= np.median(exact)
    rel = float(np.max(err[long] / g[long]))
    ab = float(max(0.0, np.max(err - rel * g)))
    return MeshBand(safety * ab, safety * rel, n_pairs, seed, safety)


def oracle_distance_h(mesh: GeodesicMesh, i: int, j: int):
    """d_h between mesh nodes i and j: (graph value, lower end of the band)."""
    if mesh.band is None:
        raise OracleError("mesh has no calibrated band")
    return mesh.distance(i, j)


def refine_path(mesh: GeodesicMesh, nodes: np.ndarray) -> tuple:
    """Shorten a mesh path by replacing runs of arcs with single background arcs.

    Greedy: from each vertex jump to the farthest later vertex whose direct
    arc is no longer (in h) than the path between them. The result is
    still a path, so its length stays an upper bound on d_h.
    """
    pts = mesh.points[nodes]
    f, man = mesh.f, mesh.manifold
    seg = np.array([arc_length_h(f, man, pts[i], pts[i + 1]) for i in range(len(pts) - 1)])
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    out, total, i = [pts[0]], 0.0, 0
    while i < len(pts) - 1:
        best, best_len = i + 1, seg[i]
        for j in range(len(pts) - 1, i + 1, -1):
            if man.distance(pts[i], pts[j]) >= 0.99 * man.diameter:
                continue
            direct = arc_length_h(f, man, pts[i], pts[j])
            if direct <= cum[j] - cum[i]:
                best, best_len = j, direct
                break
        out.append(pts[best])
        total += best_len
        i = best
    return float(total), np.array(out)


# ---------------------------------------------------------------------------
# paths


@dataclass
class Segment:
    kind: str  # "hop" (background arc) or "arc" (along a core curve)
    start: np.ndarray
    end: np.ndarray
    length: float
    length_g0: float
    circle: int = -1
    s0: float = 0.0
    s1: float = 0.0

    def to_jsonable(self):
        return {"kind": self.kind, "start": np.asarray(self.start).tolist(), "end": np.asarray(self.end).tolist(),
                "length": self.length, "length_g0": self.length_g0, "circle": self.circle,
                "s0": self.s0, "s1": self.s1}


@dataclass
class PathSpec:
    segments: list
    metric: str = "g_eps upper estimate"
    n_chunks: int = 0

    @property
    def length(self) -> float:
        return float(sum(s.length for s in self.segments))

    def continuity_error(self, manifold) -> float:
        if len(self.segments) < 2:
            return 0.0
        a = np.array([s.end for s in self.segments[:-1]])
        b = np.array([s.start for s in self.segments[1:]])
        return float(np.max(manifold.distance(a, b)))

    def max_hop(self) -> float:
        hops = [s.length_g0 for s in self.segments if s.kind == "hop"]
        return float(max(hops)) if hops else 0.0

    def to_jsonable(self):
        return {"metric": self.metric, "length": self.length, "n_chunks": self.n_chunks,
                "segments": [s.to_jsonable() for s in self.segments]}


def chunk_polyline(manifold, f, nodes, delta: float):
    """Points along a polyline of background arcs at h-spacing <= delta.

    Returns the chunk endpoints including both ends; ell = len - 2 interior
    points satisfies ell <= L_h / delta + 1.
    """
    nodes = np.asarray(nodes, dtype=float)
    lens = np.array([arc_length_h(f, manifold, nodes[i], nodes[i + 1]) for i in range(len(nodes) - 1)])
    total = float(lens.sum())
    n_chunks = max(1, int(np.ceil(total / delta - 1e-12)))
    targets = np.linspace(0.0, total, n_chunks + 1)[1:-1]
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    out = [nodes[0]]
    for t in targets:
        i = min(int(np.searchsorted(cum, t, side="right") - 1), len(lens) - 1)
        frac = (t - cum[i]) / lens[i] if lens[i] > 0 else 0.0
        # fraction of h-length; exact for constant f, a close proxy otherwise
        out.append(manifold.geodesic(nodes[i], nodes[i + 1], np.array(frac)))
    out.append(nodes[-1])
    return np.array(out), total


def _best_chart(atlas, centers_near, pts):
    """Chart index covering both points: prefer the pair map, else the closest curve."""
    d = atlas.distances_to_cores(pts)  # (2, N)
    worst = d.max(axis=0)
    i, j = centers_near
    key = (min(i, j), max(i, j))
    if key in atlas.pair_map:
        k = atlas.pair_map[key]
        return k, float(worst[k])
    k = int(np.argmin(worst))
    return k, float(worst[k])


def constructive_upper_bound(M: AssembledMetric, x, y, delta: float, polyline=None,
                             hop_factor: float = 2.0, on_uncovered: str = "error") -> PathSpec:
    """Circle-hopping path from x to y and its g_eps-length (normalized factor).

    ``polyline`` is an approximate h-minimizer as a node sequence; the
    background geodesic is used when omitted (exact for constant f). Hops
    are charged ``hop_factor`` times their background length, valid because
    g_eps <= (1+eps) g0 and hop_factor >= sqrt(1+eps).
    """
    if hop_factor < np.sqrt(1.0 + M.epsilon):
        raise ParameterError("hop factor must be at least sqrt(1+eps)")
    man = M.manifold
    atlas = M.atlas
    f = M.f
    eta = atlas.eta
    nodes = np.array([x, y]) if polyline is None else polyline
    pts, _ = chunk_polyline(man, f, nodes, delta)
    centers = np.asarray(atlas.centers)
    near = np.argmin(man.distance(pts[:, None, :], centers[None, :, :]), axis=1)
    segs = []
    for c in range(len(pts) - 1):
        p, q = pts[c], pts[c + 1]
        k, reach = _best_chart(atlas, (near[c], near[c + 1]), np.array([p, q]))
        if reach > 3.0 * eta * (1 + 1e-9):
            if on_uncovered == "error":
                raise PackingError(f"chunk {c}: no core curve within 3 eta of both endpoints (best {reach:.4g})")
            d0 = float(man.distance(p, q))
            segs.append(Segment("hop", p, q, hop_factor * d0, d0))
            continue
        chart = atlas.charts[k]
        sa = float(chart.nearest_core_point(p))
        sb = float(chart.nearest_core_point(q))
        period = chart.length
        forward = (sb - sa) % period
        if forward <= period / 2:
            s0, s1 = sa, sa + forward
        else:
            s0, s1 = sb, sb + (period - forward)
        a = chart.core_point(np.array(sa))
        b = chart.core_point(np.array(sb))
        da = float(man.distance(p, a))
        db = float(man.distance(b, q))
        arc_len = core_arc_length(chart, f, s0, s1)
        segs.append(Segment("hop", p, a, hop_factor * da, da))
        segs.append(Segment("arc", a, b, arc_len, float(min(forward, period - forward)), k, s0, s1))
        segs.append(Segment("hop", b, q, hop_factor * db, db))
    return PathSpec(segs, n_chunks=len(pts) - 1)


def lower_bound(epsilon: float, d_h_value: float, certificate: Optional[LemmaCertificate] = None,
                require_certificate: bool = True) -> float:
    """d_h / sqrt(1+eps); refuses without a passed lower-ordering certificate."""
    if require_certificate:
        if certificate is None or "4_lower" not in certificate.parts or not certificate["4_lower"].passed:
            raise PreconditionError("lower bound needs a passed exp(2f) g0 <= (1+eps) g certificate")
    if epsilon < 0:
        raise ParameterError("epsilon must be nonnegative")
    return float(d_h_value / np.sqrt(1.0 + epsilon))


@dataclass
class DistanceCertificate:
    x: np.ndarray
    y: np.ndarray
    lower: float
    upper: float
    d_h: float
    d_h_band: float
    path: PathSpec

    @property
    def gap(self) -> float:
        return self.upper - self.d_h

    def consistent(self, rtol: float = 1e-6) -> bool:
        return self.lower <= self.upper * (1.0 + rtol)


# ---------------------------------------------------------------------------
# convergence experiment


def demand_atlas(manifold, eta: float, chunk_points: list, seed: int = 0, max_retries: int = 1000):
    """Atlas built only where the sampled paths need it.

    Greedy eta-packing over the chunk endpoints (each endpoint ends within
    2 eta of a centre), then one circle per centre pair met by consecutive
    chunk endpoints.
    """
    allpts = np.concatenate(chunk_points)
    centers = pack_balls(manifold, eta, seed=seed, candidates=allpts)
    if isinstance(manifold, FlatTorus):
        return select_axis_geodesics(manifold, centers, eta, seed=seed)
    pairs = []
    for pts in chunk_points:
        near = np.argmin(manifold.distance(pts[:, None, :], centers[None, :, :]), axis=1)
        for a, b in zip(near[:-1], near[1:]):
            pairs.append((min(a, b), max(a, b)))
    pairs = sorted(set(pairs))
    return select_circles(manifold, centers, eta, seed=seed, pairs=pairs, max_retries=max_retries)


@dataclass
class EpsilonResult:
    epsilon: float
    delta: float
    eta: float
    R: float
    N: int
    certificate: LemmaCertificate
    rows: list
    sup_gap_upper: float
    sup_gap_lower: float
    timings: dict = field(default_factory=dict)
    atlas: object = None
    metric: object = None

    @property
    def sup_gap(self) -> float:
        return max(self.sup_gap_upper, self.sup_gap_lower)

    @property
    def C_fit(self) -> float:
        return self.sup_gap / self.epsilon

    def summary(self):
        return {"epsilon": self.epsilon, "delta": self.delta, "eta": self.eta, "R": self.R, "N": self.N,
                "sup_gap_upper": self.sup_gap_upper, "sup_gap_lower": self.sup_gap_lower,
                "sup_gap": self.sup_gap, "C_fit": self.C_fit, "certificate_passed": self.certificate.passed,
                "bracket_consistent": all(r["lower"] <= r["upper"] * (1 + 1e-6) for r in self.rows)}


@dataclass
class ConvergenceReport:
    results: list
    monotone_tol: float = 0.0

    @property
    def epsilons(self):
        return [r.epsilon for r in self.results]

    def _decreasing(self, vals):
        return all(b < a * (1.0 + self.monotone_tol) for a, b in zip(vals[:-1], vals[1:]))

    @property
    def upper_decreasing(self) -> bool:
        return self._decreasing([r.sup_gap_upper for r in self.results])

    @property
    def lower_decreasing(self) -> bool:
        return self._decreasing([r.sup_gap_lower for r in self.results])

    @property
    def C_ratio(self) -> float:
        c = [r.C_fit for r in self.results]
        return float(max(c) / min(c))

    @property
    def C_stable(self) -> bool:
        return self.C_ratio <= 2.0

    @property
    def brackets_consistent(self) -> bool:
        return all(r.summary()["bracket_consistent"] for r in self.results)

    @property
    def passed(self) -> bool:
        return self.upper_decreasing and self.lower_decreasing and self.C_stable and self.brackets_consistent

    def summary(self):
        return {"per_epsilon": [r.summary() for r in self.results], "upper_decreasing": self.upper_decreasing,
                "lower_decreasing": self.lower_decreasing, "C_ratio": self.C_ratio, "C_stable": self.C_stable,
                "brackets_consistent": self.brackets_consistent, "passed": self.passed}

    def write_csv(self, path):
        fields = ["epsilon", "pair", "lower", "upper", "d_h", "gap", "n_chunks"]
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            for r in self.results:
                for row in r.rows:
                    w.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in fields})
        return path

    def write_gap_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epsilon", "sup_gap_upper", "sup_gap_lower", "sup_gap", "C_fit"])
            for r in self.results:
                w.writerow([repr(r.epsilon), repr(r.sup_gap_upper), repr(r.sup_gap_lower), repr(r.sup_gap),
                            repr(r.C_fit)])
        return path

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True))
        return path


def sample_pairs(manifold, m: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    return manifold.sample(rng, m), manifold.sample(rng, m)


def convergence_report(f: ConformalFactor, epsilons, pairs, seed: int = 0, mesh: Optional[GeodesicMesh] = None,
                       hop_factor: float = 2.0, cert_points: int = 2000, monotone_tol: float = 0.0,
                       on_uncovered: str = "error", keep_metrics: bool = False) -> ConvergenceReport:
    """Bracket d_{g_eps} around d_h for each epsilon over the given point pairs.

    Each epsilon gets its own delta (modulus of f), eta = eps delta / 6,
    demand-driven atlas, assembled metric and certificate. Distances are
    reported for the original f (normalization undone). With nonconstant f
    a mesh built for f, whose first 2m nodes are the pair endpoints, supplies
    d_h as the refined shortest-path length (an upper estimate).
    """
    x, y = (np.asarray(a, dtype=float) for a in pairs)
    m = len(x)
    manifold = f.manifold
    eps_list = [float(e) for e in epsilons]
    if any(b >= a for a, b in zip(eps_list[:-1], eps_list[1:])):
        raise ParameterError("epsilons must be strictly decreasing")
    from .assembly import normalize_conformal_factor

    norm = normalize_conformal_factor(f)
    ft = norm.factor
    ls = norm.length_scale
    # h-distances and approximate minimizers for the normalized factor
    polylines = [None] * m
    if ft.constant is not None:
        d_h = np.exp(ft.constant) * manifold.distance(x, y)
    else:
        if mesh is None:
            raise ParameterError("nonconstant f needs a mesh oracle")
        d_h = np.empty(m)
        for i in range(m):
            length, polylines[i] = refine_path(mesh, mesh.path(i, m + i))
            d_h[i] = length / ls
    results = []
    for eps in eps_list:
        t0 = time.perf_counter()
        delta = modulus_delta(ft, eps, seed=seed)
        eta = eps * delta / 6.0
        chunks = [chunk_polyline(manifold, ft, np.array([x[i], y[i]]) if polylines[i] is None else polylines[i],
                                 delta)[0] for i in range(m)]
        atlas = demand_atlas(manifold, eta, chunks, seed=seed)
        t1 = time.perf_counter()
        M = assemble(atlas, f, eps, seed=seed)
        cert = check_assembled_properties(M, n_points=cert_points, seed=seed)
        t2 = time.perf_counter()
        rows = []
        for i in range(m):
            path = constructive_upper_bound(M, x[i], y[i], delta, polyline=polylines[i], hop_factor=hop_factor,
                                            on_uncovered=on_uncovered)
            dh = float(d_h[i])
            lo = lower_bound(eps, dh, cert)
            rows.append({"epsilon": eps, "pair": i, "lower": ls * lo, "upper": ls * path.length,
                         "d_h": ls * dh, "gap": ls * (path.length - dh), "n_chunks": path.n_chunks})
        t3 = time.perf_counter()
        up = max(r["upper"] - r["d_h"] for r in rows)
        lo = max(r["d_h"] - r["lower"] for r in rows)
        res = EpsilonResult(eps, delta, eta, M.R, atlas.N, cert, rows, up, lo,
                            {"atlas": t1 - t0, "assemble": t2 - t1, "bracket": t3 - t2})
        if keep_metrics:
            res.atlas, res.metric = atlas, M
        logger.info("eps=%g: N=%d sup gap upper %.4g lower %.4g", eps, atlas.N, up, lo)
        results.append(res)
    return ConvergenceReport(results, monotone_tol)
