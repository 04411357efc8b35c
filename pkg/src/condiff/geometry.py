"""Bounded convex domains with within-step exit probabilities.

Three shapes are supported: an interval, an axis-aligned box, and a
Euclidean ball.  All are convex with smooth-enough boundaries, so a
path started on the boundary leaves immediately and the half-space
crossing formula used by bridge_exit_probability is well behaved.

Positions are float arrays of shape (d,) for a single point or (n, d)
for a batch.  For d = 1 plain scalars and flat arrays of samples are
accepted as well.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Points within this distance of the boundary are classified as boundary
# points: not strictly inside, and certain to be killed by a bridge check.
BOUNDARY_TOL = 1e-12

_SIGMA_COND_LIMIT = 1e12


def check_sigma(sigma, dim: int) -> np.ndarray:
    """Validate an invertible diffusion matrix of the expected dimension."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (dim, dim):
        raise ValueError(f"sigma must have shape ({dim}, {dim}), got {sigma.shape}")
    if not np.all(np.isfinite(sigma)):
        raise ValueError("sigma must be finite")
    if np.linalg.cond(sigma) > _SIGMA_COND_LIMIT:
        raise ValueError("sigma is singular or near-singular")
    return sigma


class Domain:
    """Common interface of the bounded convex domain variants."""

    dim: int

    def _batch(self, x) -> tuple[np.ndarray, bool]:
        """Normalize input to shape (n, d); report whether it was a single point."""
        arr = np.asarray(x, dtype=float)
        if self.dim == 1:
            if arr.ndim == 0:
                return arr.reshape(1, 1), True
            if arr.ndim == 1:
                return arr.reshape(-1, 1), arr.shape[0] == 1 and np.ndim(x) == 0
            if arr.ndim == 2 and arr.shape[1] == 1:
                return arr, False
            raise ValueError(f"expected scalar, (n,), or (n, 1) positions, got shape {arr.shape}")
        if arr.ndim == 1:
            if arr.shape[0] != self.dim:
                raise ValueError(f"expected a point of dimension {self.dim}, got {arr.shape}")
            return arr.reshape(1, -1), True
        if arr.ndim == 2 and arr.shape[1] == self.dim:
            return arr, False
        raise ValueError(f"expected (n, {self.dim}) positions, got shape {arr.shape}")

    @staticmethod
    def _unbatch(values: np.ndarray, single: bool):
        return values[0] if single else values

    def contains_open(self, x):
        """True for points strictly inside, beyond the boundary tolerance."""
        pts, single = self._batch(x)
        return self._unbatch(self._distance(pts) > BOUNDARY_TOL, single)

    def boundary_distance(self, x):
        """Signed Euclidean distance to the boundary: positive inside, zero on it."""
        pts, single = self._batch(x)
        return self._unbatch(self._distance(pts), single)

    def bridge_exit_probability(self, x_from, x_to, dt: float, sigma) -> np.ndarray:
        """Probability that the diffusion bridge between two in-closure
        endpoints touches the boundary within a step of length dt.

        Uses the reflection formula for each face (box, interval) or for
        the tangent half-space at the nearest boundary point (ball), with
        the per-direction variance taken from sigma sigma^T.  An endpoint
        on the boundary gives probability one.
        """
        if not np.isfinite(dt) or dt <= 0:
            raise ValueError("dt must be positive and finite")
        sigma = check_sigma(sigma, self.dim)
        a, single_a = self._batch(x_from)
        b, single_b = self._batch(x_to)
        if a.shape != b.shape:
            raise ValueError("x_from and x_to must have matching shapes")
        if np.any(self._distance(a) < -BOUNDARY_TOL) or np.any(self._distance(b) < -BOUNDARY_TOL):
            raise ValueError("bridge endpoints must lie in the closed domain")
        cov = sigma @ sigma.T
        p = np.clip(self._bridge(a, b, float(dt), cov), 0.0, 1.0)
        return self._unbatch(p, single_a and single_b)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def diameter(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    # Subclass hooks, operating on (n, d) arrays.
    def _distance(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _bridge(self, a: np.ndarray, b: np.ndarray, dt: float, cov: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _face_crossing(d_from: np.ndarray, d_to: np.ndarray, variance: float, dt: float) -> np.ndarray:
    """Reflection-formula crossing probability of one hyperplane face."""
    d_from = np.maximum(d_from, 0.0)
    d_to = np.maximum(d_to, 0.0)
    return np.exp(-2.0 * d_from * d_to / (variance * dt))


def _combine_faces(probs) -> np.ndarray:
    """1 - prod(1 - p_i) accumulated in log space, so face probabilities
    far below machine epsilon survive instead of flushing to zero."""
    with np.errstate(divide="ignore"):
        log_stay = sum(np.log1p(-p) for p in probs)
    return -np.expm1(log_stay)


@dataclass(frozen=True)
class Interval(Domain):
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError("interval requires finite lo < hi")
        object.__setattr__(self, "dim", 1)

    def _distance(self, pts):
        x = pts[:, 0]
        return np.minimum(x - self.lo, self.hi - x)

    def _bridge(self, a, b, dt, cov):
        var = cov[0, 0]
        x, y = a[:, 0], b[:, 0]
        p_lo = _face_crossing(x - self.lo, y - self.lo, var, dt)
        p_hi = _face_crossing(self.hi - x, self.hi - y, var, dt)
        return _combine_faces((p_lo, p_hi))

    def bounding_box(self):
        return np.array([self.lo]), np.array([self.hi])

    def diameter(self):
        return self.hi - self.lo

    def to_dict(self):
        return {"type": "interval", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class Box(Domain):
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ValueError("box requires lo and hi vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo < hi)):
            raise ValueError("box requires finite lo < hi componentwise")
        object.__setattr__(self, "lo", tuple(lo.tolist()))
        object.__setattr__(self, "hi", tuple(hi.tolist()))
        object.__setattr__(self, "dim", lo.shape[0])

    @property
    def _lo(self):
        return np.asarray(self.lo)

    @property
    def _hi(self):
        return np.asarray(self.hi)

    def _distance(self, pts):
        lo, hi = self._lo, self._hi
        # Positive components of `out` measure how far the point exceeds a face.
        out = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
        out_norm = np.linalg.norm(out, axis=1)
        depth = np.min(np.minimum(pts - lo, hi - pts), axis=1)
        return np.where(out_norm > 0.0, -out_norm, depth)

    def _bridge(self, a, b, dt, cov):
        lo, hi = self._lo, self._hi
        var = np.diag(cov)
        faces = []
        for i in range(self.dim):
            faces.append(_face_crossing(a[:, i] - lo[i], b[:, i] - lo[i], var[i], dt))
            faces.append(_face_crossing(hi[i] - a[:, i], hi[i] - b[:, i], var[i], dt))
        return _combine_faces(faces)

    def bounding_box(self):
        return self._lo.copy(), self._hi.copy()

    def diameter(self):
        return float(np.linalg.norm(self._hi - self._lo))

    def to_dict(self):
        return {"type": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class Ball(Domain):
    center: tuple
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        if c.ndim != 1:
            raise ValueError("ball center must be a vector")
        if not (np.all(np.isfinite(c)) and np.isfinite(self.radius) and self.radius > 0):
            raise ValueError("ball requires a finite center and radius > 0")
        object.__setattr__(self, "center", tuple(c.tolist()))
        object.__setattr__(self, "dim", c.shape[0])

    @property
    def _center(self):
        return np.asarray(self.center)

    def _distance(self, pts):
        return self.radius - np.linalg.norm(pts - self._center, axis=1)

    def _bridge(self, a, b, dt, cov):
        c = self._center
        ra = a - c
        rb = b - c
        na = np.linalg.norm(ra, axis=1)
        nb = np.linalg.norm(rb, axis=1)
        # Anchor the tangent half-space at the boundary point nearest to
        # whichever endpoint sits closer to the boundary.
        anchor = np.where((na >= nb)[:, None], ra, rb)
        anchor_norm = np.linalg.norm(anchor, axis=1)
        unit = np.zeros_like(anchor)
        unit[:, 0] = 1.0  # fallback direction for endpoints at the center
        ok = anchor_norm > BOUNDARY_TOL
        unit[ok] = anchor[ok] / anchor_norm[ok, None]
        var = np.einsum("ni,ij,nj->n", unit, cov, unit)
        d_from = self.radius - np.einsum("ni,ni->n", ra, unit)
        d_to = self.radius - np.einsum("ni,ni->n", rb, unit)
        return _face_crossing(d_from, d_to, var, dt)

    def bounding_box(self):
        c = self._center
        return c - self.radius, c + self.radius

    def diameter(self):
        return 2.0 * self.radius

    def to_dict(self):
        return {"type": "ball", "center": list(self.center), "radius": self.radius}


def domain_from_dict(spec: dict) -> Domain:
    """Build a domain from its JSON form, e.g. {"type": "interval", "lo": -1, "hi": 1}."""
    kind = spec.get("type")
    if kind == "interval":
        return Interval(float(spec["lo"]), float(spec["hi"]))
    if kind == "box":
        return Box(tuple(spec["lo"]), tuple(spec["hi"]))
    if kind == "ball":
        return Ball(tuple(spec["center"]), float(spec["radius"]))
    raise ValueError(f"unknown domain type: {kind!r}")
