"""Background manifolds: the round sphere S^n in R^{n+1} and flat tori R^n / (L Z^n).

Both expose the same small surface (sampling, distance, minimizing-geodesic
interpolation, orthonormal tangent frames) so the packing, assembly and
distance modules can stay agnostic of the background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError


def _as_points(p, dim):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != dim:
        raise ParameterError(f"expected points with last axis {dim}, got shape {p.shape}")
    return p


@dataclass(frozen=True)
class Sphere:
    """Unit round sphere S^n embedded in R^{n+1}."""

    n: int

    def __post_init__(self):
        if self.n < 2:
            raise DimensionError(f"sphere dimension must be >= 2, got {self.n}")

    kind = "sphere"

    @property
    def ambient_dim(self) -> int:
        return self.n + 1

    @property
    def background_scalar(self) -> float:
        return float(self.n * (self.n - 1))

    @property
    def diameter(self) -> float:
        return float(np.pi)

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        x = rng.standard_normal((m, self.n + 1))
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    def project(self, p):
        p = np.asarray(p, dtype=float)
        return p / np.linalg.norm(p, axis=-1, keepdims=True)

    def distance(self, p, q):
        # 2*atan2(|p-q|, |p+q|) is accurate for both tiny and near-antipodal angles
        p = _as_points(p, self.n + 1)
        q = _as_points(q, self.n + 1)
        return 2.0 * np.arctan2(np.linalg.norm(p - q, axis=-1), np.linalg.norm(p + q, axis=-1))

    def geodesic(self, p, q, t):
        """Point at fraction ``t`` along the shorter great-circle arc from p to q."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        t = np.asarray(t, dtype=float)
        theta = self.distance(p, q)
        w = q - np.sum(p * q, axis=-1, keepdims=True) * p
        nw = np.linalg.norm(w, axis=-1, keepdims=True)
        if np.any(nw < 1e-15):
            if np.all(theta < 1e-12):
                return np.broadcast_to(p, np.broadcast_shapes(p.shape, t.shape + (1,))).copy()
            raise ParameterError("geodesic between antipodal points is not unique")
        w = w / nw
        ang = (t * theta)[..., None]
        return np.cos(ang) * p + np.sin(ang) * w

    def tangent_frame(self, p) -> np.ndarray:
        """Orthonormal basis of T_p S^n as rows of an (n, n+1) array.

        Gram-Schmidt of the coordinate axes projected to p^perp, skipping the
        axis most aligned with p; deterministic for a given p.
        """
        p = np.asarray(p, dtype=float)
        skip = int(np.argmax(np.abs(p)))
        basis = []
        for k in range(self.n + 1):
            if k == skip:
                continue
            e = np.zeros(self.n + 1)
            e[k] = 1.0
            e -= np.dot(e, p) * p
            for b in basis:
                e -= np.dot(e, b) * b
            basis.append(e / np.linalg.norm(e))
        return np.array(basis)

    def perturb(self, p, max_angle: float, rng: np.random.Generator):
        """Move p by a geodesic step of length <= max_angle in a random direction."""
        p = np.asarray(p, dtype=float)
        v = rng.standard_normal(p.shape)
        v -= np.dot(v, p) * p
        v /= np.linalg.norm(v)
        a = max_angle * rng.uniform()
        return np.cos(a) * p + np.sin(a) * v

    def to_jsonable(self):
        return {"type": "sphere", "n": self.n}


@dataclass(frozen=True)
class FlatTorus:
    """Flat torus R^n / (L_1 Z x ... x L_n Z) with points stored in [0, L)."""

    periods: tuple

    def __post_init__(self):
        periods = tuple(float(x) for x in self.periods)
        if len(periods) < 2 or min(periods) <= 0:
            raise ParameterError(f"invalid torus periods {self.periods}")
        object.__setattr__(self, "periods", periods)

    kind = "torus"

    @classmethod
    def cube(cls, n: int, period: float = 1.0) -> "FlatTorus":
        return cls((period,) * n)

    @property
    def n(self) -> int:
        return len(self.periods)

    @property
    def ambient_dim(self) -> int:
        return self.n

    @property
    def L(self) -> np.ndarray:
        return np.asarray(self.periods)

    @property
    def background_scalar(self) -> float:
        return 0.0

    @property
    def diameter(self) -> float:
        return float(0.5 * np.linalg.norm(self.L))

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return rng.uniform(size=(m, self.n)) * self.L

    def project(self, p):
        return np.mod(np.asarray(p, dtype=float), self.L)

    def displacement(self, p, q):
        """Minimal-image displacement q - p."""
        d = np.asarray(q, dtype=float) - np.asarray(p, dtype=float)
        return d - self.L * np.round(d / self.L)

    def distance(self, p, q):
        return np.linalg.norm(self.displacement(p, q), axis=-1)

    def geodesic(self, p, q, t):
        p = np.asarray(p, dtype=float)
        t = np.asarray(t, dtype=float)
        return self.project(p + t[..., None] * self.displacement(p, q))

    def tangent_frame(self, p) -> np.ndarray:
        return np.eye(self.n)

    def perturb(self, p, max_angle: float, rng: np.random.Generator):
        v = rng.standard_normal(self.n)
        v /= np.linalg.norm(v)
        return self.project(np.asarray(p, dtype=float) + max_angle * rng.uniform() * v)

    def to_jsonable(self):
        return {"type": "torus", "periods": list(self.periods)}
