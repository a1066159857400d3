"""Radial ingredient functions of the tube ansatz: eta, phi, alpha, beta.

Everything radial is evaluated from ``log_r`` rather than ``r``. The certified
cutoff parameter delta is typically ~1e-8, which puts the inner zone boundary
eps0 = exp(-1/(2 delta)) R/2 far below the double-precision range; in log
coordinates every zone stays addressable. Evaluators return the scaled
derivatives r*f' and r^2*f'' which remain O(1) across all zones.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit

from .errors import ConstructionError, DimensionError, ParameterError, PreconditionError

SPHERE = "sphere"
TORUS = "torus"
VARIANTS = (SPHERE, TORUS)

# Steepness of the smoothstep used for the zone-3 climb of alpha. The e^{-1/x}
# blend has sup eta' = 4, which overshoots the zone-3 slope cap by 7%; at 0.6
# sup eta' ~ 2.98 and the climb uses ~80% of the cap.
CLIMB_STEEPNESS = 0.6
# r^2-linear reparametrization of zone 3 gives alpha_r <= gap * eta' * 4r/(3R^2).
_CLIMB_FACTOR = 4.0 / 3.0


def as_real(x):
    """Float array, keeping extended precision when the input already has it."""
    x = np.asarray(x)
    return x if x.dtype == np.longdouble else x.astype(float, copy=False)


def _check_variant(variant):
    if variant not in VARIANTS:
        raise ParameterError(f"variant must be one of {VARIANTS}, got {variant!r}")


class SmoothStep:
    """C^infinity non-decreasing step, 0 on (-inf, 1/2] and 1 on [1, inf).

    With u = 2x - 1 in (0, 1) the value is ``psi(u) / (psi(u) + psi(1-u))`` for
    ``psi(u) = exp(-a/u)``; ``a`` is the steepness. The measured suprema of the
    first and second derivatives are stored as ``d1_max`` and ``d2_max``.
    """

    def __init__(self, steepness: float = 1.0):
        if steepness <= 0:
            raise ParameterError("steepness must be positive")
        self.steepness = float(steepness)
        self.d1_max = self._measure_sup(lambda x: self.d1(x))
        self.d2_max = self._measure_sup(lambda x: np.abs(self.d2(x)))

    @property
    def C(self) -> float:
        """Constant bounding eta', |eta''| and the combined phi estimates."""
        return self.d1_max + self.d2_max

    def _parts(self, x):
        x = as_real(x)
        a = self.steepness
        u = 2.0 * x - 1.0
        inside = (u > 0.0) & (u < 1.0)
        uc = np.where(inside, u, 0.5)
        q = a / uc - a / (1.0 - uc)
        # beyond |q| ~ 700 every derivative is below 1e-290; treat it as flat
        live = inside & (np.abs(q) < 700.0)
        return u, uc, q, inside, live

    def __call__(self, x):
        u, uc, q, inside, _ = self._parts(x)
        val = np.where(u >= 1.0, 1.0, 0.0)
        return np.where(inside, expit(-q), val)

    def d1(self, x):
        _, uc, q, _, live = self._parts(x)
        a = self.steepness
        p = expit(-q) * expit(q)
        w = a / uc**2 + a / (1.0 - uc) ** 2
        return np.where(live, 2.0 * p * w, 0.0)

    def d2(self, x):
        _, uc, q, _, live = self._parts(x)
        a = self.steepness
        s = expit(-q)
        p = s * expit(q)
        w = a / uc**2 + a / (1.0 - uc) ** 2
        wp = -2.0 * a / uc**3 + 2.0 * a / (1.0 - uc) ** 3
        s1 = p * w
        return np.where(live, 4.0 * (s1 * (1.0 - 2.0 * s) * w + p * wp), 0.0)

    @staticmethod
    def _measure_sup(func):
        xs = np.linspace(0.5, 1.0, 200001)
        vals = func(xs)
        k = int(np.argmax(vals))
        lo, hi = xs[max(k - 2, 0)], xs[min(k + 2, xs.size - 1)]
        res = minimize_scalar(lambda t: -float(func(t)), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-13})
        best = max(float(vals[k]), -float(res.fun))
        # tiny upward margin: the grid+refine sup is a lower estimate
        return best * (1.0 + 1e-9)

    def to_jsonable(self):
        return {"steepness": self.steepness, "d1_max": self.d1_max, "d2_max": self.d2_max, "C": self.C}


@functools.lru_cache(maxsize=None)
def make_eta(steepness: float = 1.0) -> SmoothStep:
    """The cutoff eta used throughout, with its certified derivative bounds."""
    return SmoothStep(steepness)


def hat_alpha_sphere(epsilon: float, R: float) -> float:
    """Plateau value max{3/4, 1 - eps/2, 1 - R^2/5} of the sphere warp profile."""
    if not 0.0 < epsilon < 1.0:
        raise ParameterError(f"epsilon must lie in (0,1), got {epsilon}")
    if not 0.0 < R < 0.01:
        raise ParameterError(f"R must lie in (0, 1/100), got {R}")
    return max(0.75, 1.0 - epsilon / 2.0, 1.0 - R * R / 5.0)


def hat_alpha_torus(epsilon: float, R: float, n: int) -> float:
    """Plateau value 1 - eps R^2 / (5n) of the torus warp profile."""
    if n < 4:
        raise DimensionError(f"n must be >= 4, got {n}")
    if not 0.0 < epsilon < 1.0:
        raise ParameterError(f"epsilon must lie in (0,1), got {epsilon}")
    if not 0.0 < R <= 1.0:
        raise ParameterError(f"R must lie in (0, 1], got {R}")
    return 1.0 - epsilon * R * R / (5.0 * n)


def log_epsilon0(delta: float, R: float) -> float:
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"delta must lie in (0,1), got {delta}")
    if R <= 0.0:
        raise ParameterError(f"R must be positive, got {R}")
    return -1.0 / (2.0 * delta) + np.log(R / 2.0)


def epsilon0(delta: float, R: float) -> float:
    """exp(-1/(2 delta)) * R/2; underflows to 0.0 for delta below ~7e-4."""
    return float(np.exp(log_epsilon0(delta, R)))


@dataclass(frozen=True)
class ZoneLayout:
    """Zones [0, eps0], [eps0, R/2], [R/2, R] of a tube of radius R."""

    R: float
    delta: float
    variant: str = SPHERE

    def __post_init__(self):
        _check_variant(self.variant)
        if self.variant == SPHERE and not 0.0 < self.R < 0.01:
            raise ParameterError(f"sphere tube radius must lie in (0, 1/100), got {self.R}")
        if self.variant == TORUS and not 0.0 < self.R <= 1.0:
            raise ParameterError(f"torus tube radius must lie in (0, 1], got {self.R}")
        log_epsilon0(self.delta, self.R)

    @property
    def log_epsilon0(self) -> float:
        return log_epsilon0(self.delta, self.R)

    @property
    def epsilon0(self) -> float:
        return float(np.exp(self.log_epsilon0))

    def zone_of(self, log_r):
        """Zone label 1, 2, 3, or 4 (outside the tube) for each log-radius."""
        log_r = np.asarray(log_r, dtype=float)
        r = np.exp(log_r)
        z = np.full(log_r.shape, 4, dtype=int)
        z = np.where(r < self.R, 3, z)
        z = np.where(r <= self.R / 2.0, 2, z)
        z = np.where(log_r < self.log_epsilon0, 1, z)
        return z


class CutoffPhi:
    """phi(r) = eta(1 + delta log(2r/R)): 0 for r <= eps0, 1 for r >= R/2."""

    def __init__(self, delta: float, R: float, eta: Optional[SmoothStep] = None):
        if not 0.0 < delta < 1.0:
            raise ParameterError(f"delta must lie in (0,1), got {delta}")
        self.delta = float(delta)
        self.R = float(R)
        self.eta = eta if eta is not None else make_eta()
        self._log_half_R = float(np.log(R / 2.0))

    @property
    def C(self) -> float:
        return self.eta.C

    def argument(self, log_r):
        return 1.0 + self.delta * (as_real(log_r) - self._log_half_R)

    def eval_log(self, log_r):
        """Return (phi, r phi', r^2 phi'') at the given log-radii."""
        x = self.argument(log_r)
        d = self.delta
        e1 = self.eta.d1(x)
        return self.eta(x), d * e1, d * d * self.eta.d2(x) - d * e1

    def __call__(self, r):
        with np.errstate(divide="ignore"):
            return self.eval_log(np.log(r))[0]

    def d1(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, self.eval_log(np.log(r))[1] / r, 0.0)

    def d2(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, self.eval_log(np.log(r))[2] / r**2, 0.0)


class WarpProfile:
    """The radial factor alpha(r) in dr^2/alpha.

    Zone 1 descends from 1 to hat_alpha with the eta blend of r/eps0; zone 2 is
    the plateau; zone 3 climbs back to 1 using a gentler smoothstep in r^2 so
    the slope cap alpha_r <= r (sphere) or alpha_r <= eps r / n (torus) holds.
    """

    def __init__(self, layout: ZoneLayout, hat_alpha: float, epsilon: float, n: int,
                 eta: Optional[SmoothStep] = None, climb: Optional[SmoothStep] = None):
        if not 0.0 < hat_alpha < 1.0:
            raise ParameterError(f"hat_alpha must lie in (0,1), got {hat_alpha}")
        self.layout = layout
        self.hat_alpha = float(hat_alpha)
        self.epsilon = float(epsilon)
        self.n = int(n)
        self.eta = eta if eta is not None else make_eta()
        self.climb = climb if climb is not None else make_eta(CLIMB_STEEPNESS)
        self.gap = 1.0 - self.hat_alpha

    @property
    def variant(self):
        return self.layout.variant

    @property
    def slope_cap_factor(self) -> float:
        """c such that zone 3 requires alpha_r <= c * r."""
        return 1.0 if self.variant == SPHERE else self.epsilon / self.n

    @property
    def slope_ratio(self) -> float:
        """Bound on max alpha_r / (cap * r) over zone 3; must be <= 1."""
        R = self.layout.R
        return self.gap * self.climb.d1_max * _CLIMB_FACTOR / (R * R) / self.slope_cap_factor

    def eval_log(self, log_r):
        """Return (alpha, r * alpha_r) at the given log-radii."""
        log_r = as_real(log_r)
        R = self.layout.R
        le0 = self.layout.log_epsilon0
        r = np.exp(log_r)
        # zone 1
        y = np.exp(np.minimum(log_r - le0, 0.0))
        a1 = 1.0 - self.gap * self.eta(y)
        ra1 = -self.gap * y * self.eta.d1(y)
        # zone 3
        t = 0.5 + (r * r - R * R / 4.0) / (1.5 * R * R)
        a3 = self.hat_alpha + self.gap * self.climb(t)
        ra3 = self.gap * self.climb.d1(t) * (_CLIMB_FACTOR * r * r / (R * R))

        alpha = np.where(r >= R, 1.0, np.where(r > R / 2.0, a3, self.hat_alpha))
        ralpha = np.where(r >= R, 0.0, np.where(r > R / 2.0, ra3, 0.0))
        z1 = log_r < le0
        alpha = np.where(z1, a1, alpha)
        ralpha = np.where(z1, ra1, ralpha)
        return alpha, ralpha

    def alpha(self, r):
        with np.errstate(divide="ignore"):
            return self.eval_log(np.log(r))[0]

    def alpha_r(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, self.eval_log(np.log(r))[1] / r, 0.0)

    def to_jsonable(self):
        return {
            "variant": self.variant,
            "epsilon": self.epsilon,
            "R": self.layout.R,
            "delta": self.layout.delta,
            "log_epsilon0": self.layout.log_epsilon0,
            "epsilon0": self.layout.epsilon0,
            "hat_alpha": self.hat_alpha,
            "eta_C": self.eta.C,
            "climb_steepness": self.climb.steepness,
            "slope_ratio": self.slope_ratio,
        }


def build_warp_profile(variant: str, epsilon: float, R: float, delta: float, n: int) -> WarpProfile:
    """Construct alpha for the sphere or torus block and check its slope budget."""
    _check_variant(variant)
    if n < 4:
        raise DimensionError(f"n must be >= 4, got {n}")
    layout = ZoneLayout(R=R, delta=delta, variant=variant)
    if variant == SPHERE:
        ha = hat_alpha_sphere(epsilon, R)
    else:
        ha = hat_alpha_torus(epsilon, R, n)
    prof = WarpProfile(layout, ha, epsilon, n)
    if prof.slope_ratio > 1.0:
        raise ConstructionError(
            f"zone-3 climb from {ha} to 1 over [R/2, R] exceeds the slope cap "
            f"(ratio {prof.slope_ratio:.4f})")
    return prof


@dataclass
class ConformalFactor:
    """A smooth conformal exponent f on the background manifold.

    ``func`` maps an array of ambient points (..., d) to values (...).
    ``f_min``/``f_max`` are exact for builtin families and sampled otherwise.
    """

    manifold: object
    func: Callable
    f_min: float
    f_max: float
    lipschitz: Optional[float] = None
    constant: Optional[float] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, p):
        return np.asarray(self.func(np.asarray(p, dtype=float)), dtype=float)

    @property
    def n(self):
        return self.manifold.n

    @property
    def f_bar(self) -> float:
        """max(-f)."""
        return -self.f_min

    def shifted(self, c: float) -> "ConformalFactor":
        func = self.func
        return ConformalFactor(
            manifold=self.manifold,
            func=lambda p: func(p) + c,
            f_min=self.f_min + c,
            f_max=self.f_max + c,
            lipschitz=self.lipschitz,
            constant=None if self.constant is None else self.constant + c,
            name=self.name,
            params={**self.params, "shift": self.params.get("shift", 0.0) + c},
        )

    def check_upper(self, bound: float = -1.0, tol: float = 0.0):
        if self.f_max > bound + tol:
            raise PreconditionError(f"conformal factor must satisfy f <= {bound}; max is {self.f_max}")

    def to_jsonable(self):
        return {"name": self.name, "params": self.params, "f_min": self.f_min,
                "f_max": self.f_max, "lipschitz": self.lipschitz}


def constant_factor(manifold, c: float) -> ConformalFactor:
    return ConformalFactor(manifold, lambda p: np.full(np.shape(p)[:-1], float(c)), c, c,
                           lipschitz=0.0, constant=float(c), name="constant", params={"value": c})


def linear_factor(manifold, a: float, b: float, axis: int = 0) -> ConformalFactor:
    """f = -a - b * p[axis] on the sphere (p ambient)."""
    if manifold.kind != SPHERE:
        raise ParameterError("the linear family is defined on the sphere")
    return ConformalFactor(manifold, lambda p: -a - b * p[..., axis], -a - abs(b), -a + abs(b),
                           lipschitz=abs(b), name="linear", params={"a": a, "b": b, "axis": axis})


def cosine_factor(manifold, a: float, b: float, axis: int = 0) -> ConformalFactor:
    """f = -a - b cos(2 pi p[axis] / L_axis) on a flat torus."""
    if manifold.kind != TORUS:
        raise ParameterError("the cosine family is defined on the torus")
    L = manifold.periods[axis]
    return ConformalFactor(manifold, lambda p: -a - b * np.cos(2 * np.pi * p[..., axis] / L),
                           -a - abs(b), -a + abs(b), lipschitz=2 * np.pi * abs(b) / L,
                           name="cosine", params={"a": a, "b": b, "axis": axis})


def tabulated_factor(manifold, points, values, seed: int = 0, n_bound_samples: int = 200000) -> ConformalFactor:
    """Smooth (Gaussian RBF) interpolant of tabulated samples; bounds are sampled."""
    from scipy.interpolate import RBFInterpolator

    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    if manifold.kind == TORUS:
        # periodic lift: embed each coordinate on a circle
        def lift(p):
            ang = 2 * np.pi * np.asarray(p) / manifold.L
            return np.concatenate([np.cos(ang), np.sin(ang)], axis=-1)
    else:
        def lift(p):
            return np.asarray(p)
    interp = RBFInterpolator(lift(points), values, kernel="gaussian", epsilon=2.0)

    def func(p):
        shp = np.shape(p)[:-1]
        return interp(lift(np.reshape(p, (-1, np.shape(p)[-1])))).reshape(shp)

    rng = np.random.default_rng(seed)
    probe = func(manifold.sample(rng, n_bound_samples))
    lo = float(min(probe.min(), values.min()))
    hi = float(max(probe.max(), values.max()))
    return ConformalFactor(manifold, func, lo, hi, name="tabulated", params={"n_samples": len(values)})


class BetaProfile:
    """beta(s, r) blending f(s,0) near the core into log cos r (sphere) or 0 (torus)."""

    def __init__(self, cutoff: CutoffPhi, f0: Callable, variant: str, f_bar: float):
        _check_variant(variant)
        self.cutoff = cutoff
        self.f0 = f0
        self.variant = variant
        self.f_bar = float(f_bar)

    def eval_f0(self, log_r, f0vals):
        """Return (beta, r beta_r, r^2 beta_rr) given the core values f(s,0)."""
        log_r = as_real(log_r)
        f0vals = as_real(f0vals)
        phi, rphi1, r2phi2 = self.cutoff.eval_log(log_r)
        if self.variant == SPHERE:
            r = np.exp(log_r)
            lc = np.log(np.cos(r))
            rtan = r * np.tan(r)
            r2sec2 = (r / np.cos(r)) ** 2
            beta = phi * lc + (1.0 - phi) * f0vals
            rb1 = rphi1 * (lc - f0vals) - phi * rtan
            r2b2 = r2phi2 * (lc - f0vals) - 2.0 * rphi1 * rtan - phi * r2sec2
        else:
            beta = (1.0 - phi) * f0vals
            rb1 = -rphi1 * f0vals
            r2b2 = -r2phi2 * f0vals
        return beta, rb1, r2b2

    def riccati(self, log_r, f0vals):
        """r^2 (beta_rr + beta_r^2), arranged so that sec^2 r never cancels tan^2 r."""
        log_r = as_real(log_r)
        f0vals = as_real(f0vals)
        phi, rphi1, r2phi2 = self.cutoff.eval_log(log_r)
        if self.variant == SPHERE:
            r = np.exp(log_r)
            L = np.log(np.cos(r)) - f0vals
            rtan = r * np.tan(r)
            return (r2phi2 * L + (rphi1 * L) ** 2 - 2.0 * rphi1 * rtan * (1.0 + phi * L)
                    - phi * r * r - phi * (1.0 - phi) * rtan**2)
        return -r2phi2 * f0vals + (rphi1 * f0vals) ** 2

    def eval_log(self, log_r, s):
        return self.eval_f0(log_r, self.f0(np.asarray(s, dtype=float)))

    def __call__(self, s, r):
        with np.errstate(divide="ignore"):
            return self.eval_log(np.log(r), s)[0]


def build_beta(cutoff: CutoffPhi, f: ConformalFactor, chart, variant: str, n_check: int = 4096) -> BetaProfile:
    """beta for the tube around ``chart``'s core curve, after checking f <= -1 on it."""
    _check_variant(variant)
    if variant == SPHERE and not cutoff.R < 0.01:
        raise ParameterError("sphere beta needs R < 1/100 so that log cos r > -1")

    def f0(s):
        return f(chart.core_point(s))

    s = np.linspace(0.0, chart.length, n_check, endpoint=False)
    worst = float(np.max(f0(s)))
    if worst > -1.0:
        raise PreconditionError(f"f must be <= -1 on the core curve; found {worst}")
    return BetaProfile(cutoff, f0, variant, f.f_bar)
