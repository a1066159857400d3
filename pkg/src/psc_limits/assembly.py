"""Building-block metrics on single tubes and the assembled global metric.

A block replaces the background metric inside the R-tube of one core curve
by the warped ansatz; the assembled metric applies one block per atlas curve.
Metrics are reported as bilinear forms in a background-orthonormal frame:

    g = g0 + (1/alpha - 1) e_r e_r^T + expm1(2 (beta - beta0)) e_s e_s^T

with e_r, e_s the unit radial and core-parallel directions and beta0 the
background value (log cos r on the sphere, 0 on the torus). Outside every
tube nothing is added, so the form is the identity bit for bit.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import quad

from .curvature import AnsatzMetric, sectional_curvatures, tube_log_grid
from .errors import CertificateError, ConstructionError, ParameterError, PreconditionError
from .geometry import FlatTorus, Sphere
from .packing import AxisGeodesicChart, PackedAtlas, TubeChart
from .profiles import (SPHERE, TORUS, BetaProfile, ConformalFactor, CutoffPhi, build_warp_profile,
                       hat_alpha_sphere, hat_alpha_torus, make_eta)

logger = logging.getLogger(__name__)


def variant_of(manifold) -> str:
    return SPHERE if isinstance(manifold, Sphere) else TORUS


# ---------------------------------------------------------------------------
# conformal factor normalization and continuity scales


@dataclass(frozen=True)
class NormalizedFactor:
    """f_tilde = f - L - 1 <= -1 together with the metric rescaling e^{2(L+1)}."""

    original: ConformalFactor
    factor: ConformalFactor
    L: float

    @property
    def shift(self) -> float:
        return -(self.L + 1.0)

    @property
    def scale(self) -> float:
        """Factor multiplying metrics built for f_tilde to return to f."""
        return float(np.exp(2.0 * (self.L + 1.0)))

    @property
    def length_scale(self) -> float:
        """Factor multiplying distances: sqrt(scale)."""
        return float(np.exp(self.L + 1.0))

    def to_jsonable(self):
        return {"L": self.L, "scale": self.scale, "factor": self.factor.to_jsonable()}


def normalize_conformal_factor(f: ConformalFactor) -> NormalizedFactor:
    """Shift f so that its maximum is exactly -1."""
    L = float(f.f_max)
    if not np.isfinite(L) or not np.isfinite(f.f_min):
        raise ParameterError("conformal factor must be bounded")
    # rounding in L + c can land one ulp above -1; addition is monotone, so
    # lowering c until the maximum rounds to <= -1 bounds every shifted value
    c = -(L + 1.0)
    while L + c > -1.0:
        c = np.nextafter(c, -np.inf)
    return NormalizedFactor(f, f.shifted(c), -(c + 1.0))


def continuity_radius(f: ConformalFactor, tol: float, seed: int = 0, n_pairs: int = 100_000,
                      start: float = 1.0, floor: float = 1e-12) -> float:
    """A radius rho with |f(x) - f(y)| <= tol whenever d(x, y) <= rho.

    Uses tol / Lipschitz when the constant is known. Otherwise starts from
    ``start`` and halves until ``n_pairs`` random pairs at distance <= rho
    satisfy the bound.
    """
    if tol <= 0:
        raise ParameterError("tolerance must be positive")
    if f.constant is not None or f.lipschitz == 0.0:
        return float(start)
    if f.lipschitz is not None:
        return float(min(start, tol / f.lipschitz))
    rng = np.random.default_rng(seed)
    M = f.manifold
    rho = start
    while rho >= floor:
        x = M.sample(rng, n_pairs)
        y = _random_partner(M, x, rho * rng.uniform(size=n_pairs), rng)
        if np.max(np.abs(f(x) - f(y))) <= tol:
            return float(rho)
        rho /= 2.0
    raise ConstructionError(f"continuity radius fell below {floor}")


def _random_partner(M, x, dist, rng):
    """Points at the given background distances from x in random directions."""
    if isinstance(M, Sphere):
        v = rng.standard_normal(x.shape)
        v -= np.sum(v * x, axis=1, keepdims=True) * x
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        d = np.asarray(dist)[:, None]
        return np.cos(d) * x + np.sin(d) * v
    v = rng.standard_normal(x.shape)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return M.project(x + np.asarray(dist)[:, None] * v)


# ---------------------------------------------------------------------------
# delta certification


@dataclass(frozen=True)
class DeltaCertificate:
    delta: float
    delta0: float
    halvings: int
    min_scaled_scalar: float
    n_x: int
    n_f: int
    eta_C: float

    def to_jsonable(self):
        return dict(self.__dict__)


def delta_start(variant: str, n: int, epsilon: float, R: float, f_bar: float, C: float) -> float:
    """(n-2)(n-3)(1 - hat_alpha) / (8 C (fbar^2 + (n-2) fbar)), capped below 1."""
    ha = hat_alpha_sphere(epsilon, R) if variant == SPHERE else hat_alpha_torus(epsilon, R, n)
    d0 = (n - 2) * (n - 3) * (1.0 - ha) / (8.0 * C * (f_bar**2 + (n - 2) * f_bar))
    return float(min(d0, 0.5))


def certify_delta(variant: str, n: int, epsilon: float, R: float, f_min: float, f_max: float,
                  n_x: int = 2001, n_f: int = 9, max_halvings: int = 60) -> DeltaCertificate:
    """Pick delta so the zone-2 scalar curvature is > 0 (sphere) or >= 0 (torus).

    Starts at the closed-form estimate and halves until a scan uniform in the
    cutoff argument x in [1/2, 1] (i.e. in log r), over core values
    f0 in [f_min, f_max], passes. Only zone 2 depends on delta.
    """
    if f_max > -1.0:
        raise PreconditionError(f"f must be <= -1; max is {f_max}")
    eta = make_eta()
    f_bar = -f_min
    d0 = delta_start(variant, n, epsilon, R, f_bar, eta.C)
    delta = d0
    x = np.linspace(0.5, 1.0, n_x)
    f0 = np.linspace(f_min, f_max, n_f)
    for k in range(max_halvings + 1):
        warp = build_warp_profile(variant, epsilon, R, delta, n)
        beta = BetaProfile(CutoffPhi(delta, R, eta), lambda s: np.full(np.shape(s), f_max), variant, f_bar)
        ans = AnsatzMetric(variant, n, warp, beta)
        log_r = np.log(R / 2.0) + (x - 1.0) / delta
        LR, F0 = np.meshgrid(log_r, f0, indexing="ij")
        rep = sectional_curvatures(ans, log_r=LR, s=np.zeros_like(LR), f0=F0)
        m = float(np.min(rep.excess))
        ok = np.all(rep.scalar > 0) if variant == SPHERE else np.all(rep.excess >= 0)
        if ok:
            return DeltaCertificate(delta, d0, k, m, n_x, n_f, eta.C)
        delta /= 2.0
    raise ConstructionError("delta certification did not converge")


# ---------------------------------------------------------------------------
# bilinear forms


@dataclass
class BilinearForm:
    """Batch of symmetric forms (m, n, n) in background-orthonormal frames.

    ``frames`` holds the frame vectors as rows in ambient coordinates.
    """

    components: np.ndarray
    frames: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.components.shape[-1]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.components)

    def symmetry_error(self) -> float:
        return float(np.max(np.abs(self.components - np.swapaxes(self.components, -1, -2))))

    def is_positive_definite(self) -> bool:
        return bool(np.all(self.eigenvalues() > 0))

    def in_frame(self, Q) -> "BilinearForm":
        """Components after the orthonormal change of frame e' = Q e."""
        Q = np.asarray(Q)
        comps = Q @ self.components @ np.swapaxes(Q, -1, -2)
        frames = None if self.frames is None else Q @ self.frames
        return BilinearForm(comps, frames)


def tangent_frames(manifold, points) -> np.ndarray:
    points = np.atleast_2d(points)
    if isinstance(manifold, FlatTorus):
        return np.broadcast_to(np.eye(manifold.n), (len(points), manifold.n, manifold.n)).copy()
    return np.stack([manifold.tangent_frame(p) for p in points])


def background_form(manifold, points) -> BilinearForm:
    points = np.atleast_2d(points)
    eye = np.broadcast_to(np.eye(manifold.n), (len(points), manifold.n, manifold.n)).copy()
    return BilinearForm(eye, tangent_frames(manifold, points))


# ---------------------------------------------------------------------------
# building block


@dataclass
class BlockMetric:
    """The ansatz metric on one tube, equal to the background for r >= R."""

    manifold: object
    chart: object
    f: ConformalFactor
    variant: str
    epsilon: float
    R: float
    delta_cert: DeltaCertificate
    ansatz: AnsatzMetric

    @property
    def n(self) -> int:
        return self.ansatz.n

    @property
    def warp(self):
        return self.ansatz.warp

    @property
    def beta(self):
        return self.ansatz.beta

    @property
    def delta(self) -> float:
        return self.delta_cert.delta

    @property
    def hat_alpha(self) -> float:
        return self.warp.hat_alpha

    @property
    def log_epsilon0(self) -> float:
        return self.warp.layout.log_epsilon0

    @property
    def f_bar(self) -> float:
        return self.beta.f_bar

    def f0(self, s):
        return self.beta.f0(s)

    def coefficients(self, log_r, s, f0=None):
        """(1/alpha - 1, 2 (beta - beta0)) at tube coordinates; log_r may be -inf."""
        log_r = np.asarray(log_r, dtype=float)
        if f0 is None:
            f0 = self.f0(np.asarray(s, dtype=float))
        with np.errstate(divide="ignore", invalid="ignore"):
            alpha, _ = self.warp.eval_log(log_r)
            phi = self.beta.cutoff.eval_log(log_r)[0]
            if self.variant == SPHERE:
                r = np.exp(log_r)
                excess = (1.0 - phi) * (np.asarray(f0) - np.log(np.cos(r)))
            else:
                excess = (1.0 - phi) * np.asarray(f0)
        return 1.0 / alpha - 1.0, 2.0 * excess

    def local_eigenvalues(self, log_r, s, f0=None):
        """Eigenvalues of g relative to g0 at tube coordinates: (1/alpha, 1, e^{2(beta-beta0)})."""
        cr, cs = self.coefficients(log_r, s, f0)
        return 1.0 + cr, np.ones_like(cr), np.exp(cs)

    def core_speed_squared(self, s):
        """g(d_s, d_s) on the core curve (r = 0 by continuous extension)."""
        s = np.asarray(s, dtype=float)
        return np.exp(self.coefficients(np.full(s.shape, -np.inf), s)[1])

    def metric_at(self, p) -> BilinearForm:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        form = background_form(self.manifold, p)
        r, x, s = self.chart.coords(p)
        inside = r < self.R
        if np.any(inside):
            self._apply(form, np.nonzero(inside)[0], p[inside], r[inside], s[inside])
        return form

    def _apply(self, form, idx, p, r, s):
        with np.errstate(divide="ignore"):
            log_r = np.log(r)
        cr, cs = self.coefficients(log_r, s)
        dr, ds, _ = self.chart.directions(p)
        dr = np.where((r > 0)[:, None], dr, 0.0)
        F = form.frames[idx]
        a = np.einsum("kij,kj->ki", F, dr)
        b = np.einsum("kij,kj->ki", F, ds)
        form.components[idx] += cr[:, None, None] * a[:, :, None] * a[:, None, :]
        form.components[idx] += np.expm1(cs)[:, None, None] * b[:, :, None] * b[:, None, :]

    def curvature(self, log_r, s):
        return sectional_curvatures(self.ansatz, log_r=log_r, s=s)

    def to_jsonable(self):
        return {
            "variant": self.variant,
            "chart": self.chart.to_jsonable(),
            "epsilon": self.epsilon,
            "R": self.R,
            "delta": self.delta,
            "delta_certificate": self.delta_cert.to_jsonable(),
            "hat_alpha": self.hat_alpha,
            "log_epsilon0": self.log_epsilon0,
            "f_bar": self.f_bar,
            "warp": self.warp.to_jsonable(),
        }


def _core_range(f, chart, n_check=4096):
    s = np.linspace(0.0, chart.length, n_check, endpoint=False)
    vals = f(chart.core_point(s))
    return float(vals.min()), float(vals.max())


def build_block(chart, f: ConformalFactor, epsilon: float, R: float, variant: Optional[str] = None,
                delta_cert: Optional[DeltaCertificate] = None, reduce_radius: bool = True,
                R_floor: float = 1e-8, seed: int = 0) -> BlockMetric:
    """Construct the block metric on the R-tube of ``chart``'s core curve.

    On the sphere R is reduced, if needed, so that f varies by at most
    log(1+eps)/2 within distance R. ``delta_cert`` may be shared between
    blocks with equal parameters.
    """
    manifold = chart.torus if isinstance(chart, AxisGeodesicChart) else Sphere(len(chart.circle.u) - 1)
    variant = variant or variant_of(manifold)
    f.check_upper(-1.0)
    if variant == TORUS and isinstance(chart, AxisGeodesicChart) and R >= chart.injectivity_radius:
        raise ParameterError(f"R = {R} exceeds the embedded tube radius {chart.injectivity_radius}")
    if reduce_radius:
        rho = continuity_radius(f, 0.5 * np.log1p(epsilon), seed=seed, start=R)
        if rho < R:
            logger.info("reducing R from %g to %g for continuity of f", R, rho)
            R = rho
        if R < R_floor:
            raise ConstructionError(
                f"R = {R:g} fell below the floor {R_floor:g}; use a coarser f or a larger epsilon")
    fmin, fmax = f.f_min, f.f_max
    if delta_cert is None:
        delta_cert = certify_delta(variant, manifold.n, epsilon, R, fmin, fmax)
    warp = build_warp_profile(variant, epsilon, R, delta_cert.delta, manifold.n)
    cutoff = CutoffPhi(delta_cert.delta, R, make_eta())
    from .profiles import build_beta

    beta = build_beta(cutoff, f, chart, variant)
    ansatz = AnsatzMetric(variant, manifold.n, warp, beta)
    return BlockMetric(manifold, chart, f, variant, float(epsilon), float(R), delta_cert, ansatz)


# ---------------------------------------------------------------------------
# certificates


@dataclass
class SubCertificate:
    name: str
    passed: bool
    margin: float
    n_samples: int
    witness: dict = field(default_factory=dict)

    def to_jsonable(self):
        return {"name": self.name, "passed": bool(self.passed), "margin": float(self.margin),
                "n_samples": int(self.n_samples), "witness": self.witness}


@dataclass
class LemmaCertificate:
    parts: dict

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.parts.values())

    def __getitem__(self, key):
        return self.parts[key]

    def require(self):
        if not self.passed:
            bad = [p for p in self.parts.values() if not p.passed]
            raise CertificateError(f"failed sub-certificates: {[b.name for b in bad]}", bad[0].witness)
        return self

    def to_jsonable(self):
        return {"passed": self.passed, "parts": {k: v.to_jsonable() for k, v in self.parts.items()}}

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_jsonable(), indent=2, sort_keys=True))
        return path

    def write_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["property", "passed", "margin", "n_samples", "witness"])
            for k, v in sorted(self.parts.items()):
                w.writerow([k, int(v.passed), repr(float(v.margin)), v.n_samples,
                            json.dumps(v.witness, sort_keys=True)])
        return path


def _witness(**kw):
    out = {}
    for k, v in kw.items():
        v = np.asarray(v)
        out[k] = v.tolist() if v.ndim else float(v)
    return out


def _normal_directions(chart, s, rng):
    """Random unit vectors normal to the core at parameters s."""
    m = len(s)
    if isinstance(chart, TubeChart):
        d = len(chart.circle.u)
        v = rng.standard_normal((m, d))
        v -= np.outer(v @ chart.circle.u, chart.circle.u) + np.outer(v @ chart.circle.v, chart.circle.v)
    else:
        v = rng.standard_normal((m, chart.torus.n))
        v[:, chart.axis] = 0.0
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_tube(block: BlockMetric, m: int, rng, log_floor: Optional[float] = None):
    """Tube samples stratified in log r: returns (log_r, s, ambient points).

    Radii below float range embed onto the core, where f is evaluated at
    the core point; that is the continuous limit of the block.
    """
    le0 = block.log_epsilon0
    lo = le0 - 7.0 if log_floor is None else log_floor
    k = m // 3
    lr = np.concatenate([
        rng.uniform(lo, le0, k),
        rng.uniform(le0, np.log(block.R / 2.0), k),
        np.log(rng.uniform(block.R / 2.0, block.R, m - 2 * k)),
    ])
    s = rng.uniform(0.0, block.chart.length, m)
    x = _normal_directions(block.chart, s, rng)
    with np.errstate(under="ignore"):
        p = block.chart.embed(np.exp(lr), x, s)
    return lr, s, p


def check_block_properties(block: BlockMetric, n_r: int = 400, n_s: int = 400, n_points: int = 10_000,
                           n_outside: int = 1000, seed: int = 0) -> LemmaCertificate:
    """Sample-based certificates for the five block properties."""
    rng = np.random.default_rng(seed)
    eps = block.epsilon
    n = block.n
    parts = {}

    # (1) scalar curvature on a zone-stratified (r, s) grid
    lr = tube_log_grid(block.warp.layout, n_r)
    s = np.linspace(0.0, block.chart.length, n_s, endpoint=False)
    f0 = block.f0(s)
    LR, S = np.meshgrid(lr, s, indexing="ij")
    rep = sectional_curvatures(block.ansatz, log_r=LR, s=S, f0=np.broadcast_to(f0, LR.shape))
    scal = rep.scalar
    floor = 0.0 if block.variant == SPHERE else -eps
    k = np.unravel_index(np.argmin(scal), scal.shape)
    ok = bool(np.all(scal > floor)) if block.variant == SPHERE else bool(np.all(scal >= floor))
    parts["1_scalar"] = SubCertificate(
        "scalar curvature", ok, float(scal[k] - floor), scal.size,
        _witness(log_r=LR[k], s=S[k], scalar=scal[k], scaled_excess=rep.excess[k]))
    if block.variant == TORUS:
        # zone 3 of the torus block: R >= 2(n-2) min K_ri >= -(n-2) eps / n
        z3 = rep.zone == 3
        floor3 = -(n - 2) * eps / n
        vals = np.where(z3, scal, np.inf)
        k = np.unravel_index(np.argmin(vals), vals.shape)
        parts["1_zone3"] = SubCertificate(
            "zone-3 scalar floor", bool(np.all(scal[z3] >= floor3)), float(vals[k] - floor3), int(z3.sum()),
            _witness(log_r=LR[k], s=S[k], scalar=scal[k], floor=floor3))

    # (2) exact agreement with the background for r >= R
    if block.variant == SPHERE:
        lr_out = np.log(rng.uniform(block.R, 1.5, n_outside))
    else:
        lr_out = np.log(rng.uniform(block.R, 0.999 * block.chart.injectivity_radius, n_outside))
    lr_out[0] = np.log(block.R)
    s_out = rng.uniform(0.0, block.chart.length, n_outside)
    comps = block.ansatz.components(lr_out, s_out)
    bg = type(block.ansatz).background(block.variant, n).components(lr_out, s_out)
    diff_local = max(float(np.max(np.abs(a - b))) for a, b in zip(comps, bg))
    x = _normal_directions(block.chart, s_out, rng)
    p_out = block.chart.embed(np.exp(lr_out), x, s_out)
    p_out = p_out[block.chart.distance_to_core(p_out) >= block.R]
    forms = block.metric_at(p_out).components
    diff_amb = float(np.max(np.abs(forms - np.eye(n)))) if len(p_out) else 0.0
    parts["2_outside"] = SubCertificate(
        "background agreement outside the tube", diff_local == 0.0 and diff_amb == 0.0,
        -max(diff_local, diff_amb), n_outside + len(p_out), _witness(local=diff_local, ambient=diff_amb))

    # (3), (4) eigenvalue orderings on tube samples, local and ambient
    lr_in, s_in, p_in = sample_tube(block, n_points, rng)
    e_r, e_i, e_s = block.local_eigenvalues(lr_in, s_in)
    lam_max = np.maximum(np.maximum(e_r, e_i), e_s)
    lam_min = np.minimum(np.minimum(e_r, e_i), e_s)
    fp = block.f(p_in)
    amb = p_in[block.chart.distance_to_core(p_in) > 0]
    eig_amb = block.metric_at(amb).eigenvalues() if len(amb) else np.ones((1, n))
    f_amb = block.f(amb) if len(amb) else np.full(1, -np.inf)
    m3 = np.minimum((1 + eps) - lam_max, np.min((1 + eps) - eig_amb, axis=1).min())
    k3 = int(np.argmin(m3))
    parts["3_upper"] = SubCertificate(
        "g <= (1+eps) g0", bool(np.all(m3 >= 0)), float(m3[k3]), n_points + len(amb),
        _witness(log_r=lr_in[k3], s=s_in[k3], lam_max=lam_max[k3]))
    m4 = (1 + eps) * lam_min - np.exp(2 * fp)
    m4_amb = (1 + eps) * eig_amb[:, 0] - np.exp(2 * f_amb)
    k4 = int(np.argmin(m4))
    margin4 = float(min(m4.min(), m4_amb.min()))
    parts["4_lower"] = SubCertificate(
        "exp(2f) g0 <= (1+eps) g", margin4 >= 0, margin4, n_points + len(amb),
        _witness(log_r=lr_in[k4], s=s_in[k4], lam_min=lam_min[k4], f=fp[k4]))

    # (5) length element on the core, pointwise and integrated
    s5 = np.linspace(0.0, block.chart.length, 4096, endpoint=False)
    speed2 = block.core_speed_squared(s5)
    target = np.exp(2.0 * block.f(block.chart.core_point(s5)))
    point_err = float(np.max(np.abs(speed2 - target)))
    L_g = quad(lambda t: float(np.sqrt(block.core_speed_squared(np.array([t]))[0])),
               0.0, block.chart.length, epsabs=0, epsrel=1e-12, limit=200)[0]
    L_h = quad(lambda t: float(np.exp(block.f(block.chart.core_point(np.array([t])))[0])),
               0.0, block.chart.length, epsabs=0, epsrel=1e-12, limit=200)[0]
    rel = abs(L_g - L_h) / L_h
    parts["5_core"] = SubCertificate(
        "core length element", point_err == 0.0 and rel <= 1e-8, -max(point_err, rel), len(s5),
        _witness(pointwise=point_err, length_g=L_g, length_h=L_h, relative=rel))
    return LemmaCertificate(parts)


# ---------------------------------------------------------------------------
# assembled metric


@dataclass
class AssembledMetric:
    manifold: object
    atlas: PackedAtlas
    normalized: NormalizedFactor
    epsilon: float
    R: float
    blocks: list

    @property
    def f(self) -> ConformalFactor:
        return self.normalized.factor

    @property
    def variant(self) -> str:
        return variant_of(self.manifold)

    @property
    def bilipschitz_constant(self) -> float:
        return float(max(1 + self.epsilon, (1 + self.epsilon) * np.exp(2 * self.f.f_bar)))

    def active_blocks(self, p):
        """Index of the block whose tube contains each point, or -1."""
        d = self.atlas.distances_to_cores(p)
        inside = d < self.R
        counts = inside.sum(axis=1)
        if np.any(counts > 1):
            raise ConstructionError("tubes overlap: a point lies in two tubes")
        return np.where(counts == 1, np.argmax(inside, axis=1), -1)

    def metric_at(self, p) -> BilinearForm:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        form = background_form(self.manifold, p)
        active = self.active_blocks(p)
        for b in np.unique(active[active >= 0]):
            idx = np.nonzero(active == b)[0]
            blk = self.blocks[b]
            r, _, s = blk.chart.coords(p[idx])
            blk._apply(form, idx, p[idx], r, s)
        return form

    def sample_points(self, m: int, rng, tube_fraction: float = 0.8):
        """Ambient sample, dense in the tubes (log-uniform radii) and sparse elsewhere."""
        k = int(m * tube_fraction)
        out = [self.manifold.sample(rng, m - k)]
        which = rng.integers(0, len(self.blocks), k)
        for b in np.unique(which):
            cnt = int(np.sum(which == b))
            blk = self.blocks[b]
            lr = rng.uniform(np.log(self.R) - 30.0, np.log(self.R), cnt)
            s = rng.uniform(0.0, blk.chart.length, cnt)
            x = _normal_directions(blk.chart, s, rng)
            out.append(blk.chart.embed(np.exp(lr), x, s))
        return np.concatenate(out)

    def to_jsonable(self):
        return {
            "background": self.manifold.to_jsonable(),
            "epsilon": self.epsilon,
            "R": self.R,
            "normalization": self.normalized.to_jsonable(),
            "atlas": {"N": self.atlas.N, "eta": self.atlas.eta, "min_distance": self.atlas.min_distance},
            "blocks": [b.to_jsonable() for b in self.blocks],
        }


def assemble(atlas: PackedAtlas, f: ConformalFactor, epsilon: float, seed: int = 0,
             R_floor: float = 1e-8) -> AssembledMetric:
    """One block per atlas curve, all sharing the atlas tube radius.

    ``f`` is normalized first. The radius is reduced for continuity of f
    before any block is built, which keeps the tubes disjoint.
    """
    if not 0.0 < epsilon < 1.0:
        raise ParameterError(f"epsilon must lie in (0,1), got {epsilon}")
    norm = normalize_conformal_factor(f)
    ft = norm.factor
    variant = variant_of(atlas.manifold)
    R = atlas.R
    rho = continuity_radius(ft, 0.5 * np.log1p(epsilon), seed=seed, start=R)
    R = min(R, rho)
    if R < R_floor:
        raise ConstructionError(f"R = {R:g} fell below the floor {R_floor:g}")
    if atlas.N > 1 and not 2 * R < atlas.min_distance:
        raise ConstructionError("tube radius does not keep the tubes disjoint")
    cert = certify_delta(variant, atlas.manifold.n, epsilon, R, ft.f_min, ft.f_max)
    blocks = [build_block(c, ft, epsilon, R, variant, delta_cert=cert, reduce_radius=False)
              for c in atlas.charts]
    return AssembledMetric(atlas.manifold, atlas, norm, float(epsilon), float(R), blocks)


def check_assembled_properties(M: AssembledMetric, n_points: int = 10_000, n_r: int = 100, n_s: int = 64,
                               per_block_points: int = 200, seed: int = 0) -> LemmaCertificate:
    """Global certificates: block properties on every tube plus ambient orderings.

    Adds the bi-Lipschitz sandwich and a disjoint-support scan.
    """
    rng = np.random.default_rng(seed)
    eps = M.epsilon
    n = M.manifold.n
    block_certs = [check_block_properties(b, n_r=n_r, n_s=n_s, n_points=per_block_points,
                                          n_outside=50, seed=seed + i) for i, b in enumerate(M.blocks)]
    parts = {}
    keys = ("1_scalar", "1_zone3", "2_outside", "5_core") if M.variant == TORUS else ("1_scalar", "2_outside", "5_core")
    for key in keys:
        worst = min(range(len(block_certs)), key=lambda i: block_certs[i][key].margin)
        sub = block_certs[worst][key]
        ok = all(c[key].passed for c in block_certs)
        parts[key] = SubCertificate(sub.name, ok, sub.margin, sum(c[key].n_samples for c in block_certs),
                                    {**sub.witness, "block": worst})
    if M.variant == SPHERE:
        assert M.manifold.background_scalar > 0

    p = M.sample_points(n_points, rng)
    active = M.active_blocks(p)
    eig = M.metric_at(p).eigenvalues()
    fp = M.f(p)
    m3 = (1 + eps) - eig[:, -1]
    m4 = (1 + eps) * eig[:, 0] - np.exp(2 * fp)
    for key, name, m, others in (("3_upper", "g <= (1+eps) g0", m3, "3_upper"),
                                 ("4_lower", "exp(2f) g0 <= (1+eps) g", m4, "4_lower")):
        k = int(np.argmin(m))
        block_margin = min(c[others].margin for c in block_certs)
        margin = float(min(m[k], block_margin))
        parts[key] = SubCertificate(name, margin >= 0, margin, len(p) + sum(c[others].n_samples for c in block_certs),
                                    _witness(point=p[k], block=active[k], margin=m[k]))
    C = M.bilipschitz_constant
    lo = eig[:, 0] - 1.0 / C
    hi = C - eig[:, -1]
    k = int(np.argmin(np.minimum(lo, hi)))
    parts["bilipschitz"] = SubCertificate(
        "g0/C <= g <= C g0", bool(np.all(lo >= 0) and np.all(hi >= 0)), float(min(lo.min(), hi.min())), len(p),
        _witness(C=C, point=p[k], lam_min=eig[k, 0], lam_max=eig[k, -1]))
    parts["disjoint_support"] = SubCertificate(
        "at most one active block", True, 0.0, len(p), {"in_tubes": int(np.sum(active >= 0))})
    return LemmaCertificate(parts)


def check_lemma_properties(target, **kw) -> LemmaCertificate:
    """Dispatch to the block or assembled certificate."""
    if isinstance(target, BlockMetric):
        return check_block_properties(target, **kw)
    if isinstance(target, AssembledMetric):
        return check_assembled_properties(target, **kw)
    raise ParameterError(f"cannot certify {type(target).__name__}")
