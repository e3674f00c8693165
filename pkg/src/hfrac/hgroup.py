"""Heisenberg group arithmetic on R^{2n+1}.

Points are stored as coordinate vectors ``(x_1..x_n, y_1..y_n, t)``.  Every
function accepts either a :class:`GroupPoint` or a float array whose last axis
has length ``2n+1``; array inputs broadcast over leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import EvaluationError, InputError

__all__ = [
    "GroupPoint",
    "HomogeneousNorm",
    "Ball",
    "GAUGE",
    "BOX_NORM",
    "homogeneous_dimension",
    "group_mul",
    "group_inv",
    "dilate",
    "gauge_norm",
    "pseudo_distance",
    "horizontal_gradient",
]


def homogeneous_dimension(n: int) -> int:
    return 2 * n + 2


def _dim_to_n(d: int) -> int:
    if d < 3 or d % 2 == 0:
        raise InputError(f"coordinate length {d} is not 2n+1 with n >= 1")
    return (d - 1) // 2


@dataclass(frozen=True)
class GroupPoint:
    """A point (x, y, t) of H^n."""

    x: np.ndarray
    y: np.ndarray
    t: float

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        t = float(self.t)
        if x.ndim != 1 or x.shape != y.shape or x.size < 1:
            raise InputError("x and y must be vectors of the same length n >= 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.isfinite(t)):
            raise InputError("GroupPoint coordinates must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def coords(self) -> np.ndarray:
        return np.concatenate([self.x, self.y, [self.t]])

    @classmethod
    def from_coords(cls, c) -> "GroupPoint":
        c = np.asarray(c, dtype=float)
        n = _dim_to_n(c.shape[-1])
        return cls(c[:n], c[n:2 * n], c[-1])

    @classmethod
    def zero(cls, n: int = 1) -> "GroupPoint":
        return cls(np.zeros(n), np.zeros(n), 0.0)

    def __eq__(self, other):
        if not isinstance(other, GroupPoint):
            return NotImplemented
        return bool(np.array_equal(self.coords, other.coords))

    def __hash__(self):
        return hash(tuple(self.coords))


def _as_array(p):
    if isinstance(p, GroupPoint):
        return p.coords, True
    a = np.asarray(p, dtype=float)
    _dim_to_n(a.shape[-1])
    return a, False


def _wrap(a, as_point):
    return GroupPoint.from_coords(a) if as_point else a


def group_mul(xi, eta):
    """Group law (x+x', y+y', t+t'+2<y,x'>-2<x,y'>)."""
    a, pa = _as_array(xi)
    b, pb = _as_array(eta)
    if a.shape[-1] != b.shape[-1]:
        raise InputError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    n = _dim_to_n(a.shape[-1])
    x, y = a[..., :n], a[..., n:2 * n]
    xp, yp = b[..., :n], b[..., n:2 * n]
    symp = 2.0 * (np.sum(y * xp, axis=-1) - np.sum(x * yp, axis=-1))
    out = np.concatenate(
        [x + xp, y + yp, (a[..., -1] + b[..., -1] + symp)[..., None]], axis=-1
    )
    return _wrap(out, pa and pb)


def group_inv(xi):
    a, pa = _as_array(xi)
    return _wrap(-a, pa)


def dilate(lam, xi):
    """Anisotropic dilation (lam x, lam y, lam^2 t); ``lam`` may broadcast over leading axes."""
    lam = np.asarray(lam, dtype=float)
    if not (np.all(np.isfinite(lam)) and np.all(lam > 0)):
        raise InputError(f"dilation factor must be positive, got {lam}")
    a, pa = _as_array(xi)
    out = a * lam[..., None]
    out[..., -1] *= lam
    return _wrap(out, pa)


def gauge_norm(xi):
    """Koranyi gauge (|z|^4 + t^2)^(1/4)."""
    a, pa = _as_array(xi)
    z2 = np.sum(a[..., :-1] ** 2, axis=-1)
    r = (z2 * z2 + a[..., -1] ** 2) ** 0.25
    return float(r) if pa else r


def _box_norm(a):
    z = np.sqrt(np.sum(a[..., :-1] ** 2, axis=-1))
    return np.maximum(z, np.sqrt(np.abs(a[..., -1])))


@dataclass(frozen=True)
class HomogeneousNorm:
    """A homogeneous norm together with its pseudo-triangle constant.

    ``kernel_id`` names the compiled implementation used by the pair-sum
    kernels (0 gauge, 1 box); user-supplied norms have ``kernel_id = -1`` and
    can only be used through the pure-Python API of this module.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    triangle_constant: float = 1.0
    kernel_id: int = -1

    def __post_init__(self):
        if not self.triangle_constant >= 1.0:
            raise InputError("triangle constant must be >= 1")

    @classmethod
    def custom(cls, func, triangle_constant: float, name: str = "custom"):
        return cls(name, func, float(triangle_constant), -1)

    @property
    def kind(self) -> str:
        return "gauge" if self.kernel_id == 0 else "custom"

    def __call__(self, xi):
        a, pa = _as_array(xi)
        r = self.func(a)
        return float(r) if pa else np.asarray(r, dtype=float)


GAUGE = HomogeneousNorm("gauge", lambda a: gauge_norm(a), 1.0, 0)
# max(|z|, |t|^(1/2)) satisfies the triangle inequality with constant 1 as
# well: |t + t' + 2 sigma(z, z')| <= (|ξ| + |η|)^2.
BOX_NORM = HomogeneousNorm("box", _box_norm, 1.0, 1)


def pseudo_distance(xi, eta, norm: HomogeneousNorm = GAUGE):
    """norm(eta^{-1} o xi)."""
    return norm(group_mul(group_inv(eta), xi))


@dataclass(frozen=True)
class Ball:
    center: GroupPoint
    radius: float

    def __post_init__(self):
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise InputError(f"ball radius must be positive, got {self.radius}")

    def contains(self, xi, norm: HomogeneousNorm = GAUGE):
        return pseudo_distance(xi, self.center, norm) < self.radius


def horizontal_gradient(f, xi, h: float, region=None):
    """Central-difference horizontal gradient (X_1 f, ..., X_2n f).

    ``f`` maps an ``(m, 2n+1)`` array to ``(m,)`` values.  ``xi`` is a point or
    an ``(m, 2n+1)`` batch.  If ``region = (lower, upper)`` is given, every
    stencil point must lie in that box.
    """
    if not h > 0:
        raise InputError("finite-difference step must be positive")
    a, pa = _as_array(xi)
    pts = np.atleast_2d(a)
    m, d = pts.shape
    n = _dim_to_n(d)
    offsets = np.eye(d) * h
    stencil = np.concatenate([pts[:, None, :] + offsets, pts[:, None, :] - offsets], axis=1)
    if region is not None:
        lo, hi = (np.asarray(v, dtype=float) for v in region)
        if np.any(stencil < lo) or np.any(stencil > hi):
            raise EvaluationError("finite-difference stencil leaves the sampled region")
    vals = np.asarray(f(stencil.reshape(-1, d)), dtype=float).reshape(m, 2 * d)
    partial = (vals[:, :d] - vals[:, d:]) / (2.0 * h)
    x, y = pts[:, :n], pts[:, n:2 * n]
    dt = partial[:, -1:]
    grad = np.concatenate([partial[:, :n] + 2.0 * y * dt, partial[:, n:2 * n] - 2.0 * x * dt], axis=1)
    return grad[0] if (pa or a.ndim == 1) else grad
