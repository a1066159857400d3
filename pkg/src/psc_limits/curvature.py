"""Closed-form curvature of the doubly warped tube ansatz.

    g = dr^2/alpha(r) + w(r)^2 h_{S^{n-2}} + exp(2 beta(s, r)) ds^2,
    w = sin r (sphere) or r (torus).

Curvatures are carried in the scaled form r^2 K, which is O(1) in every
zone; the unscaled values are exposed as properties and may overflow to inf
deep inside zone 2, where r itself underflows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, DomainError, ParameterError
from .profiles import SPHERE, TORUS, as_real

SECTIONS = ("ri", "rs", "is", "ij")


def _rcot(r):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r < 1e-8, 1.0, r / np.tan(r))


def _rcsc(r):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r < 1e-8, 1.0, r / np.sin(r))


def _sinc(r):
    r = as_real(r)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r < 1e-8, 1.0, np.sin(r) / r)


def _beta_jets(beta, log_r, f0):
    """(r beta_r, r^2 (beta_rr + beta_r^2)) using the profile's stable form when it has one."""
    _, rb, r2bb = beta.eval_f0(log_r, f0)
    riccati = getattr(beta, "riccati", None)
    return rb, (riccati(log_r, f0) if riccati is not None else r2bb + rb * rb)


def scalar_curvature(k_ri, k_rs, k_is, k_ij, n: int):
    """2K_rs + 2(n-2)K_ri + 2(n-2)K_is + (n-2)(n-3)K_ij (works on scaled values too)."""
    if n < 4:
        raise DimensionError(f"scalar curvature assembly needs n >= 4, got {n}")
    return 2.0 * k_rs + 2.0 * (n - 2) * k_ri + 2.0 * (n - 2) * k_is + (n - 2) * (n - 3) * k_ij


class RoundWarp:
    """alpha == 1."""

    def eval_log(self, log_r):
        z = np.zeros(np.shape(log_r))
        return z + 1.0, z


class BackgroundBeta:
    """beta of the unmodified background: log cos r (sphere) or 0 (torus)."""

    def __init__(self, variant=SPHERE):
        self.variant = variant

    def eval_f0(self, log_r, f0vals=None):
        log_r = as_real(log_r)
        if self.variant == TORUS:
            z = np.zeros(log_r.shape)
            return z, z, z
        r = np.exp(log_r)
        return np.log(np.cos(r)), -r * np.tan(r), -((r / np.cos(r)) ** 2)

    def riccati(self, log_r, f0vals=None):
        log_r = as_real(log_r)
        if self.variant == TORUS:
            return np.zeros(log_r.shape)
        r = np.exp(log_r)
        return -r * r

    def eval_log(self, log_r, s):
        return self.eval_f0(log_r)

    def f0(self, s):
        return np.zeros(np.shape(s))


class CoreBeta:
    """beta frozen at its core values: exp(2 beta) = exp(2 f(s, 0)) for every r."""

    def __init__(self, f0):
        self.f0 = f0

    def eval_f0(self, log_r, f0vals):
        log_r = as_real(log_r)
        b = np.broadcast_to(as_real(f0vals), log_r.shape)
        z = np.zeros(log_r.shape, dtype=log_r.dtype)
        return b, z, z

    def riccati(self, log_r, f0vals):
        return np.zeros(as_real(log_r).shape)


@dataclass
class AnsatzMetric:
    """Local tube metric; ``warp`` and ``beta`` are duck-typed profile objects.

    ``warp.eval_log(log_r) -> (alpha, r alpha_r)`` and
    ``beta.eval_f0(log_r, f0) -> (beta, r beta_r, r^2 beta_rr)`` with
    ``beta.f0(s)`` giving the core values.
    """

    variant: str
    n: int
    warp: object
    beta: object

    def __post_init__(self):
        if self.variant not in (SPHERE, TORUS):
            raise ParameterError(f"unknown variant {self.variant!r}")
        if self.n < 4:
            raise DimensionError(f"n must be >= 4, got {self.n}")

    @classmethod
    def background(cls, variant, n):
        return cls(variant, n, RoundWarp(), BackgroundBeta(variant))

    def near_axis_model(self) -> "AnsatzMetric":
        """The metric a block reduces to for r <= eps0/2: alpha = 1, beta = f(s, 0)."""
        return AnsatzMetric(self.variant, self.n, RoundWarp(), CoreBeta(self.beta.f0))

    def components(self, log_r, s):
        """Diagonal components (g_rr, fiber factor w^2, g_ss) at (log_r, s)."""
        log_r = np.asarray(log_r, dtype=float)
        alpha, _ = self.warp.eval_log(log_r)
        beta = self.beta.eval_f0(log_r, self.beta.f0(np.asarray(s, dtype=float)))[0]
        r = np.exp(log_r)
        w2 = np.sin(r) ** 2 if self.variant == SPHERE else r * r
        return 1.0 / alpha, w2, np.exp(2.0 * beta)

    def chart_metric(self, log_r0: float, s0: float):
        """Metric g / r0^2 in coordinates (rho, theta_1..theta_{n-2}, sigma).

        r = r0 rho and s = s0 + r0 sigma, so the returned metric has O(1)
        components near rho = 1 at any radius and its scalar curvature equals
        r0^2 R(g) at (r0, s0). Angles are spherical coordinates on S^{n-2}.
        Extended-precision input is evaluated in extended precision: deep in
        the tube |log r| ~ 1e7, and float64 rounding of log r0 + log rho would
        dominate finite differences.
        """
        n = self.n
        r0 = float(np.exp(log_r0))

        def metric(q):
            q = as_real(q)
            rho = q[:, 0]
            theta = q[:, 1:n - 1]
            sigma = q[:, n - 1]
            log_r = log_r0 + np.log(rho)
            alpha, _ = self.warp.eval_log(log_r)
            s = s0 + r0 * sigma
            beta = self.beta.eval_f0(log_r, self.beta.f0(s))[0]
            if self.variant == SPHERE:
                w = rho * _sinc(np.exp(log_r))
            else:
                w = rho
            g = np.zeros((q.shape[0], n, n), dtype=q.dtype)
            g[:, 0, 0] = 1.0 / alpha
            prod = w * w
            for k in range(n - 2):
                g[:, k + 1, k + 1] = prod
                prod = prod * np.sin(theta[:, k]) ** 2
            g[:, n - 1, n - 1] = np.exp(2.0 * beta)
            return g

        return metric


@dataclass
class CurvatureReport:
    """Sectional and scalar curvatures at a batch of tube points, in r^2 K units."""

    n: int
    log_r: np.ndarray
    s: np.ndarray
    k_ri: np.ndarray
    k_rs: np.ndarray
    k_is: np.ndarray
    k_ij: np.ndarray
    scalar_scaled: np.ndarray
    zone: np.ndarray = field(default=None)
    # scalar = excess / r^2 + background; excess is O(1) and background carries
    # the r^2 terms of the scaled sum, which underflow when r is tiny
    excess: np.ndarray = field(default=None)
    background: np.ndarray = field(default=None)

    def __post_init__(self):
        recomputed = scalar_curvature(self.k_ri, self.k_rs, self.k_is, self.k_ij, self.n)
        if not np.array_equal(recomputed, self.scalar_scaled, equal_nan=True):
            raise AssertionError("scalar curvature does not match the sectional assembly")

    @property
    def r(self):
        return np.exp(self.log_r)

    def _unscale(self, v):
        with np.errstate(over="ignore"):
            return v * np.exp(-2.0 * self.log_r)

    @property
    def K_ri(self):
        return self._unscale(self.k_ri)

    @property
    def K_rs(self):
        return self._unscale(self.k_rs)

    @property
    def K_is(self):
        return self._unscale(self.k_is)

    @property
    def K_ij(self):
        return self._unscale(self.k_ij)

    @property
    def scalar(self):
        """Unscaled scalar curvature; +-inf where r underflows and the excess is nonzero."""
        if self.excess is None:
            return self._unscale(self.scalar_scaled)
        with np.errstate(over="ignore", invalid="ignore"):
            scaled = np.where(self.excess == 0.0, 0.0, self._unscale(self.excess))
        return scaled + self.background


def sectional_curvatures(ansatz: AnsatzMetric, r=None, s=0.0, *, log_r=None, f0=None) -> CurvatureReport:
    """Evaluate K_ri, K_rs, K_is, K_ij and the scalar curvature.

    Pass either ``r`` or ``log_r`` (broadcast against ``s``). ``f0`` overrides
    the core values beta.f0(s), which grid scans use to avoid re-evaluating f.
    """
    if (r is None) == (log_r is None):
        raise ParameterError("pass exactly one of r or log_r")
    if log_r is None:
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise DomainError("curvature is undefined on the tube axis r = 0")
        log_r = np.log(r)
    log_r = np.asarray(log_r, dtype=float)
    if not np.all(np.isfinite(log_r)):
        raise DomainError("curvature is undefined on the tube axis r = 0")
    s = np.asarray(s, dtype=float)
    log_r, s = np.broadcast_arrays(log_r, s)
    rr = np.exp(log_r)
    if ansatz.variant == SPHERE and np.any(rr >= np.pi / 2):
        raise DomainError("r = pi/2 is a coordinate singularity of the sphere chart")
    if f0 is None:
        f0 = ansatz.beta.f0(s)
    f0 = np.broadcast_to(np.asarray(f0, dtype=float), log_r.shape)

    alpha, ra = ansatz.warp.eval_log(log_r)
    rb, ric = _beta_jets(ansatz.beta, log_r, f0)
    k_rs = -0.5 * ra * rb - alpha * ric
    if ansatz.variant == SPHERE:
        rcot = _rcot(rr)
        k_ri = rr * rr * alpha - 0.5 * ra * rcot
        k_is = -alpha * rb * rcot
        k_ij = _rcsc(rr) ** 2 * (1.0 - alpha + alpha * np.sin(rr) ** 2)
        # k_ri and k_ij each contain alpha r^2; split those off
        n = ansatz.n
        excess = scalar_curvature(-0.5 * ra * rcot, k_rs, k_is, _rcsc(rr) ** 2 * (1.0 - alpha), n)
        background = alpha * (n - 2) * (n - 1)
    else:
        k_ri = -0.5 * ra
        k_is = -alpha * rb
        k_ij = 1.0 - alpha
        excess = None
        background = np.zeros_like(alpha)
    scalar = scalar_curvature(k_ri, k_rs, k_is, k_ij, ansatz.n)
    if excess is None:
        excess = scalar
    layout = getattr(ansatz.warp, "layout", None)
    zone = layout.zone_of(log_r) if layout is not None else None
    return CurvatureReport(ansatz.n, log_r, s, k_ri, k_rs, k_is, k_ij, scalar, zone, excess, background)


# ---------------------------------------------------------------------------
# Finite-difference cross-check


def oracle_sample(layout, m: int, rng, length: float = 2 * np.pi, inner: float = 0.6,
                  outer: float = 1.2):
    """Random (log_r, s) spread over the three zones and a band outside the tube.

    Zone-1 radii are r = y eps0 with y in [inner, 1]; closer to the axis the
    block coincides with its near-axis model (see ``near_axis_model``).
    """
    q = m // 4
    counts = [q, q, q, m - 3 * q]
    lr = np.concatenate([
        layout.log_epsilon0 + np.log(rng.uniform(inner, 1.0, counts[0])),
        rng.uniform(layout.log_epsilon0, np.log(layout.R / 2), counts[1]),
        np.log(rng.uniform(layout.R / 2, layout.R, counts[2])),
        np.log(rng.uniform(layout.R, outer * layout.R, counts[3])),
    ])
    return lr, rng.uniform(0.0, length, m)


def fd_relative_errors(ansatz: AnsatzMetric, log_r, s, rng, step: float = 0.005, order: int = 4):
    """|R_fd - R| / (1 + |R|) at each (log_r, s), R from the closed-form assembly.

    The finite differences run in the rescaled chart of ``chart_metric`` at a
    random angular position, so ``step`` is relative to r.
    """
    from .fd import fd_curvature

    log_r = np.atleast_1d(np.asarray(log_r, dtype=float))
    s = np.broadcast_to(np.asarray(s, dtype=float), log_r.shape)
    closed = sectional_curvatures(ansatz, log_r=log_r, s=s).scalar_scaled
    n = ansatz.n
    out = np.empty(log_r.shape)
    for i, (lr, s0) in enumerate(zip(log_r, s)):
        pt = np.concatenate([[1.0], rng.uniform(0.5, 2.5, n - 2), [0.0]])
        fd = fd_curvature(ansatz.chart_metric(float(lr), float(s0)), pt, step=step, order=order)
        out[i] = abs(fd - closed[i]) / (np.exp(2 * lr) + abs(closed[i]))
    return out


# ---------------------------------------------------------------------------
# Grids and lower-bound tables


def zone_log_grid(layout, n_per_zone: int = 200, inner_floor: float = 1e-3):
    """Log-radius grids for zones 1, 2, 3, each including both endpoints.

    Zone 1 starts at ``inner_floor * eps0``; curvature is not evaluated closer
    to the axis.
    """
    le0 = layout.log_epsilon0
    lhalf = np.log(layout.R / 2.0)
    z1 = np.linspace(le0 + np.log(inner_floor), le0, n_per_zone)
    z2 = np.linspace(le0, lhalf, n_per_zone)
    z3 = np.log(np.linspace(layout.R / 2.0, layout.R, n_per_zone))
    return {1: z1, 2: z2, 3: z3}


def tube_log_grid(layout, n_r: int = 400, inner_floor: float = 1e-3):
    """A single stratified radial grid over the whole tube (n_r points)."""
    k1 = n_r // 4
    k3 = n_r // 4
    k2 = n_r - k1 - k3
    le0 = layout.log_epsilon0
    lhalf = np.log(layout.R / 2.0)
    z1 = np.linspace(le0 + np.log(inner_floor), le0, k1, endpoint=False)
    z2 = np.linspace(le0, lhalf, k2, endpoint=False)
    z3 = np.log(np.linspace(layout.R / 2.0, layout.R, k3))
    return np.concatenate([z1, z2, z3])


@dataclass(frozen=True)
class TableParams:
    n: int
    epsilon: float
    delta: float
    C: float
    f_bar: float
    hat_alpha: float


def _table_rows(table: str):
    """Rows as (zone, section, bound, tight_by_construction).

    A bound maps (params, r^2) to (A, B) with r^2 K_bound = A + r^2 B; None
    marks the exact zone-2 expressions of table 1.
    """
    def const(a=0.0, b=0.0):
        return lambda p, r2: (np.full_like(r2, a(p) if callable(a) else a),
                              np.full_like(r2, b(p) if callable(b) else b))

    zero = const()
    quarter = const(b=0.25)
    gap = const(a=lambda p: 1.0 - p.hat_alpha)
    if table in ("1", "2"):
        rows = [
            (1, "ri", quarter, False), (1, "rs", zero, True), (1, "is", zero, True), (1, "ij", zero, False),
            (2, "ri", quarter, False), (2, "ij", gap, False),
            (3, "ri", quarter, False), (3, "rs", zero, False), (3, "is", zero, False), (3, "ij", zero, False),
        ]
        if table == "1":
            rows += [
                (2, "rs", None, True),  # -alpha (beta_rr + beta_r^2): the exact zone-2 value
                (2, "is", None, True),  # -alpha beta_r cot r: the exact zone-2 value
            ]
        else:
            rows += [
                (2, "rs", const(a=lambda p: -p.C * p.delta * p.f_bar**2, b=-0.01), False),
                (2, "is", const(a=lambda p: -p.C * p.delta * p.f_bar), False),
            ]
        return rows
    if table == "3":
        return [
            (1, "ri", zero, True), (1, "rs", zero, True), (1, "is", zero, True), (1, "ij", zero, True),
            (2, "ri", zero, True),
            (2, "rs", const(a=lambda p: -p.C * p.delta * p.f_bar**2), False),
            (2, "is", const(a=lambda p: -p.C * p.delta * p.f_bar), False),
            (2, "ij", gap, True),
            (3, "ri", const(b=lambda p: -p.epsilon / (2.0 * p.n)), False),
            (3, "rs", zero, True), (3, "is", zero, True), (3, "ij", zero, True),
        ]
    raise ParameterError(f"unknown table {table!r}; expected '1', '2' or '3'")


def _split_sectionals(ansatz: AnsatzMetric, rep: CurvatureReport):
    """Each r^2 K as (A, B) with r^2 K = A + r^2 B, both O(1) at any radius."""
    alpha, ra = ansatz.warp.eval_log(rep.log_r)
    rb, ric = _beta_jets(ansatz.beta, rep.log_r, ansatz.beta.f0(rep.s))
    zero = np.zeros_like(alpha)
    k_rs = -0.5 * ra * rb - alpha * ric
    if ansatz.variant == SPHERE:
        r = np.exp(rep.log_r)
        rcot = _rcot(r)
        return {"ri": (-0.5 * ra * rcot, alpha), "rs": (k_rs, zero), "is": (-alpha * rb * rcot, zero),
                "ij": (_rcsc(r) ** 2 * (1.0 - alpha), alpha)}
    return {"ri": (-0.5 * ra, zero), "rs": (k_rs, zero), "is": (-alpha * rb, zero), "ij": (1.0 - alpha, zero)}


@dataclass
class BoundRow:
    """Worst grid point of one table row.

    ``min_slack`` is K - K_bound in the table's own (unscaled) units,
    evaluated as A/r^2 + B so it stays finite where r^2 underflows; it is
    +inf where the O(1) part is positive at such radii. ``scaled_slack`` is
    r^2 (K - K_bound) at the same point.
    """

    table: str
    zone: int
    section: str
    min_slack: float
    scaled_slack: float
    log_r: float
    s: float
    value: float
    bound: float
    tol: float
    tight_by_construction: bool

    @property
    def passed(self) -> bool:
        return self.scaled_slack >= -self.tol

    @property
    def strict(self) -> bool:
        return self.min_slack > 0.0 and self.scaled_slack >= -self.tol

    def to_row(self):
        with np.errstate(under="ignore"):
            r = float(np.exp(self.log_r))
        return {
            "table": self.table, "zone": self.zone, "section": self.section,
            "log_r": repr(self.log_r), "r": repr(r), "s": repr(self.s),
            "value": repr(self.value), "bound": repr(self.bound), "slack": repr(self.min_slack),
            "scaled_slack": repr(self.scaled_slack),
            "tight_by_construction": int(self.tight_by_construction), "passed": int(self.passed),
        }


@dataclass
class BoundTableResult:
    table: str
    rows: list
    violations: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def strict_rows_ok(self) -> bool:
        """Every row whose bound is not attained by construction has positive slack."""
        return all(r.strict for r in self.rows if not r.tight_by_construction)

    @property
    def min_slack(self) -> float:
        """Smallest unscaled slack over the rows not tight by construction."""
        return min(r.min_slack for r in self.rows if not r.tight_by_construction)

    def write_csv(self, path):
        path = Path(path)
        fields = list(self.rows[0].to_row().keys())
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            for row in self.rows:
                w.writerow(row.to_row())
            for row in self.violations:
                w.writerow(row)
        return path

    def summary(self):
        return {
            "table": self.table,
            "passed": self.passed,
            "strict_rows_ok": self.strict_rows_ok,
            "rows": {f"zone{r.zone}:K_{r.section}": {"min_slack": r.min_slack, "scaled_slack": r.scaled_slack,
                                                      "strict": r.strict,
                                                      "tight_by_construction": r.tight_by_construction}
                     for r in self.rows},
            "n_violations": len(self.violations),
        }

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True))
        return path


def table_params(ansatz: AnsatzMetric) -> TableParams:
    warp, beta = ansatz.warp, ansatz.beta
    return TableParams(n=ansatz.n, epsilon=warp.epsilon, delta=warp.layout.delta,
                       C=beta.cutoff.C, f_bar=beta.f_bar, hat_alpha=warp.hat_alpha)


def verify_bound_table(ansatz: AnsatzMetric, table: str, n_r: int = 200, n_s: int = 200,
                       length: float = 2 * np.pi, rtol: float = 1e-10) -> BoundTableResult:
    """Check each tabulated sectional-curvature lower bound on a zone-stratified grid.

    A row passes when r^2 (K - K_bound) >= -tol everywhere, with
    tol = rtol * (|r^2 K| + |r^2 K_bound|) as a roundoff allowance. It is
    strict when in addition K - K_bound > 0 in unscaled units; the O(1) part
    of the scaled slack counts as zero when it is within tol.
    """
    if table == "3" and ansatz.variant != TORUS:
        raise ParameterError("table 3 applies to the torus ansatz")
    if table in ("1", "2") and ansatz.variant != SPHERE:
        raise ParameterError("tables 1 and 2 apply to the sphere ansatz")
    params = table_params(ansatz)
    grids = zone_log_grid(ansatz.warp.layout, n_r)
    s = np.linspace(0.0, length, n_s, endpoint=False)
    f0 = ansatz.beta.f0(s)
    reports, splits = {}, {}
    for z, lr in grids.items():
        LR, F0 = np.meshgrid(lr, f0, indexing="ij")
        S = np.broadcast_to(s, LR.shape)
        reports[z] = sectional_curvatures(ansatz, log_r=LR, s=S, f0=F0)
        splits[z] = _split_sectionals(ansatz, reports[z])

    rows, violations = [], []
    for zone, section, bound_fn, tight in _table_rows(table):
        rep = reports[zone]
        value = getattr(rep, f"k_{section}")
        A_val, B_val = splits[zone][section]
        with np.errstate(under="ignore"):
            r2 = np.exp(2.0 * rep.log_r)
        if bound_fn is None:
            alpha, _ = ansatz.warp.eval_log(rep.log_r)
            rb, ric = _beta_jets(ansatz.beta, rep.log_r, ansatz.beta.f0(rep.s))
            if section == "rs":
                A_b = -alpha * ric
            else:
                A_b = -alpha * rb * _rcot(np.sqrt(r2))
            B_b = np.zeros_like(A_b)
        else:
            A_b, B_b = bound_fn(params, r2)
        bound = A_b + r2 * B_b
        slack = value - bound
        tol_arr = rtol * (np.abs(value) + np.abs(bound)) + 1e-300
        A = A_val - A_b
        A = np.where(np.abs(A) <= rtol * (np.abs(A_val) + np.abs(A_b)), 0.0, A)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            unscaled = np.where(A == 0.0, 0.0, A / r2) + (B_val - B_b)
        k = np.unravel_index(np.argmin(unscaled), unscaled.shape)
        row = BoundRow(table, zone, section, float(unscaled[k]), float(np.min(slack)), float(rep.log_r[k]),
                       float(rep.s[k]), float(value[k]), float(bound[k]), float(np.max(tol_arr)), tight)
        rows.append(row)
        bad = slack < -tol_arr
        for idx in zip(*np.nonzero(bad)):
            violations.append({
                "table": table, "zone": zone, "section": section, "log_r": repr(float(rep.log_r[idx])),
                "r": repr(float(np.exp(rep.log_r[idx]))), "s": repr(float(rep.s[idx])),
                "value": repr(float(value[idx])), "bound": repr(float(bound[idx])),
                "slack": repr(float(unscaled[idx])), "scaled_slack": repr(float(slack[idx])),
                "tight_by_construction": int(tight), "passed": 0,
            })
    return BoundTableResult(table, rows, violations)
