"""Quadrature over the complement of a box, in gauge polar coordinates.

A point is written xi = c o Phi_rho(theta) with |theta| = 1 (gauge).  The unit
sphere is parametrised by theta = (sqrt(cos phi) e, sin phi), e in S^{2n-1},
phi in (-pi/2, pi/2), and the volume element becomes

    d xi = rho^{Q-1} cos(phi)^{n-1} d rho d phi dS(e).

Along a ray the z-coordinates are linear in rho and t is quadratic, so the
set of rho where the ray is outside the box is a finite union of intervals
whose end points are roots of linear/quadratic equations.  Finite intervals
get Gauss-Legendre nodes; the unbounded one is mapped to (0, 1] by
rho = rho_L w^{-1/gamma}, which makes an integrand decaying like
rho^{-Q-gamma} smooth in w.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import gamma as gamma_fn
from scipy.stats import qmc

from .errors import InputError


def sphere_area(dim: int) -> float:
    """Surface area of the unit sphere S^{dim-1} in R^dim."""
    return 2.0 * math.pi ** (dim / 2) / gamma_fn(dim / 2)


def gauge_ball_volume(n: int) -> float:
    """|B_1| for the gauge on H^n: |S^{2n-1}| B(1/2, n/2) / Q."""
    Q = 2 * n + 2
    return sphere_area(2 * n) * beta_fn(0.5, n / 2) / Q


@dataclass(frozen=True)
class Directions:
    theta: np.ndarray  # (K, 2n+1) unit-gauge points
    weight: np.ndarray  # (K,) angular weights, sum = Q |B_1|


def unit_directions(n: int, n_phi: int = 16, n_sphere: int | None = None, seed: int = 0) -> Directions:
    phi, wphi = np.polynomial.legendre.leggauss(n_phi)
    phi = phi * (np.pi / 2)
    wphi = wphi * (np.pi / 2) * np.cos(phi) ** (n - 1)
    if n == 1:
        m = n_sphere or 2 * n_phi
        alpha = 2 * np.pi * (np.arange(m) + 0.5) / m
        e = np.stack([np.cos(alpha), np.sin(alpha)], axis=1)
        we = np.full(m, 2 * np.pi / m)
    else:
        m = n_sphere or 64 * n
        sob = qmc.Sobol(2 * n, scramble=True, seed=seed).random(m)
        from scipy.stats import norm

        g = norm.ppf(np.clip(sob, 1e-12, 1 - 1e-12))
        e = g / np.linalg.norm(g, axis=1, keepdims=True)
        we = np.full(m, sphere_area(2 * n) / m)
    sq = np.sqrt(np.cos(phi))
    z = sq[:, None, None] * e[None, :, :]
    t = np.broadcast_to(np.sin(phi)[:, None, None], (n_phi, m, 1))
    theta = np.concatenate([z, t], axis=2).reshape(-1, 2 * n + 1)
    weight = (wphi[:, None] * we[None, :]).reshape(-1)
    return Directions(theta, weight)


@dataclass(frozen=True)
class ExteriorNodes:
    """Quadrature nodes and volume weights for R^{2n+1} minus a box (and minus B_rmin(c))."""

    points: np.ndarray
    weights: np.ndarray
    center: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.size


def _ray_points(center, theta, rho):
    """c o Phi_rho(theta) for rho of shape (K, ...) and theta (K, d)."""
    d = center.size
    n = (d - 1) // 2
    zc, tc = center[:-1], center[-1]
    w, tau = theta[:, :-1], theta[:, -1]
    symp = 2.0 * (w[:, :n] @ zc[n:] - w[:, n:] @ zc[:n])  # 2(<y_c, x_w> - <x_c, y_w>)
    extra = (1,) * (rho.ndim - 1)
    z = zc + rho[..., None] * w.reshape(w.shape[0], *extra, d - 1)
    t = tc + rho ** 2 * tau.reshape(-1, *extra) + rho * symp.reshape(-1, *extra)
    return np.concatenate([z, t[..., None]], axis=-1)


def _breakpoints(center, theta, lower, upper):
    d = center.size
    n = (d - 1) // 2
    zc, tc = center[:-1], center[-1]
    w, tau = theta[:, :-1], theta[:, -1]
    b = 2.0 * (w[:, :n] @ zc[n:] - w[:, n:] @ zc[:n])
    cands = []
    with np.errstate(divide="ignore", invalid="ignore"):
        for bound in (lower, upper):
            cands.append((bound[:-1] - zc) / w)
            for level in (bound[-1],):
                c0 = tc - level
                disc = b * b - 4.0 * tau * c0
                sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
                # stable quadratic roots
                q = -0.5 * (b + np.copysign(sq, b))
                r1 = q / tau
                r2 = c0 / q
                lin = np.where(tau == 0, -c0 / b, np.nan)
                cands.append(np.stack([r1, r2, lin], axis=1))
    roots = np.concatenate(cands, axis=1)
    roots = np.where(np.isfinite(roots) & (roots > 0), roots, np.inf)
    return roots


def exterior_nodes(lower, upper, center, gamma: float, n: int, r_min: float = 0.0,
                   n_phi: int = 16, n_sphere: int | None = None, n_gl: int = 8, n_tail: int = 10) -> ExteriorNodes:
    """Nodes for integrals over {xi outside [lower, upper]} with |c^{-1} xi| > r_min.

    ``gamma`` is the decay rate used by the tail substitution (the kernel's sp).
    """
    if gamma <= 0:
        raise InputError("tail decay exponent must be positive")
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    center = np.asarray(center, dtype=float)
    Q = 2 * n + 2
    dirs = unit_directions(n, n_phi, n_sphere)
    theta, aw = dirs.theta, dirs.weight
    K = theta.shape[0]
    roots = _breakpoints(center, theta, lower, upper)
    half = 0.5 * (upper - lower)
    scale = max(float(np.max(half[:-1])), math.sqrt(half[-1]))
    extra = np.full((K, 1), max(r_min, scale))
    if r_min > 0:
        extra = np.concatenate([extra, np.full((K, 1), r_min)], axis=1)
    bp = np.sort(np.concatenate([np.zeros((K, 1)), roots, extra], axis=1), axis=1)
    last = np.max(np.where(np.isfinite(bp), bp, 0.0), axis=1)
    bp = np.where(np.isfinite(bp), bp, last[:, None])
    a, b = bp[:, :-1], bp[:, 1:]
    mid = 0.5 * (a + b)
    mp = _ray_points(center, theta, mid)
    outside = np.any((mp < lower) | (mp > upper), axis=-1) & (mid > r_min) & (b > a)

    x, wx = np.polynomial.legendre.leggauss(n_gl)
    rho = a[..., None] + 0.5 * (b - a)[..., None] * (x + 1.0)
    wr = 0.5 * (b - a)[..., None] * wx * rho ** (Q - 1) * outside[..., None]
    pts_fin = _ray_points(center, theta, rho.reshape(K, -1))
    w_fin = (wr * aw[:, None, None]).reshape(K, -1)

    xt, wt = np.polynomial.legendre.leggauss(n_tail)
    wv = 0.5 * (xt + 1.0)
    rho_t = last[:, None] * wv[None, :] ** (-1.0 / gamma)
    w_tail = (last[:, None] ** Q / gamma) * wv ** (-Q / gamma - 1.0) * 0.5 * wt * aw[:, None]
    pts_tail = _ray_points(center, theta, rho_t)

    pts = np.concatenate([pts_fin.reshape(-1, 2 * n + 1), pts_tail.reshape(-1, 2 * n + 1)])
    wts = np.concatenate([w_fin.reshape(-1), w_tail.reshape(-1)])
    keep = wts > 0
    return ExteriorNodes(np.ascontiguousarray(pts[keep]), wts[keep], center)
