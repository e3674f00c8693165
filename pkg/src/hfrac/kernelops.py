"""Discrete operators built from the kernel |eta^{-1} o xi|^{-Q-sp}.

Discretisation
--------------
Functions are piecewise constant on the cells of a grid over the box Lambda.
A pair of distinct cells (a, b) carries the weight ``W_ab = K(c_a, c_b)``
(cell centres), except for cells that touch (Chebyshev index distance 1),
whose weight is the average of K over all pairs of sub-cell midpoints.  Pairs
involving the complement of Lambda use the exterior datum g and the
ray quadrature of :mod:`hfrac.exterior`: ``Wf_aq = K(c_a, eta_q) vol_q``.

With h the cell volume, the discrete operator at a cell is

    L u(a) = sum_{b != a} phi_p(u_a - u_b) W_ab h + sum_q phi_p(u_a - g_q) Wf_aq

and the energy on the Omega values is

    E(u) = (1/p) [ sum_{a in Om} sum_{b != a} c_ab |u_a - u_b|^p W_ab h^2
                   + 2 h sum_{a in Om} sum_q |u_a - g_q|^p Wf_aq ] - h sum_{a in Om} f_a u_a

with c_ab = 1 for b in Omega and 2 otherwise (terms not involving Omega are
dropped).  Its gradient is ``dE/du_a = 2 h L u(a) - h f_a``, so stationary
points satisfy the weak form sum_ab phi(u_a-u_b)(psi_a-psi_b) W h^2 + ... = h sum f psi.

A grid function without an exterior datum is taken to vanish outside the box.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import _kernels as K
from .errors import InputError, RegimeError, SingularityError
from .exterior import ExteriorNodes, exterior_nodes, gauge_ball_volume
from .grid import Grid, GridFunction, build_grid, subcell_offsets
from .hgroup import GAUGE, GroupPoint, HomogeneousNorm, pseudo_distance

__all__ = [
    "KernelParams",
    "TailEstimate",
    "Discretization",
    "OmegaCoupling",
    "discretization",
    "omega_coupling",
    "kernel_weight",
    "gagliardo_seminorm",
    "fractional_energy",
    "energy_gradient",
    "apply_operator",
    "tail",
    "weak_residual",
    "kernel_integral_outside_ball",
    "sobolev_ratio",
    "embedding_ratio",
    "gauge_ball_volume",
]


@dataclass(frozen=True)
class KernelParams:
    n: int = 1
    s: float = 0.5
    p: float = 2.0
    norm: HomogeneousNorm = GAUGE
    subcell_level: int = 1
    # exterior quadrature resolution
    far_phi: int = 12
    far_gl: int = 6
    far_tail: int = 8

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise InputError(f"n must be a positive integer, got {self.n}")
        if not 0.0 < self.s < 1.0:
            raise InputError(f"s must lie in (0, 1), got {self.s}")
        if not 1.0 < self.p <= 10.0:
            raise InputError(f"p must lie in (1, 10], got {self.p}")
        if self.subcell_level < 0:
            raise InputError("subcell_level must be >= 0")
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "p", float(self.p))

    @property
    def Q(self) -> int:
        return 2 * self.n + 2

    @property
    def sp(self) -> float:
        return self.s * self.p

    @property
    def exponent(self) -> float:
        return self.Q + self.sp

    @property
    def sp_le_Q(self) -> bool:
        return self.sp <= self.Q

    @property
    def triangle_constant(self) -> float:
        return self.norm.triangle_constant

    def with_(self, **kw) -> "KernelParams":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return KernelParams(**d)

    def _norm_id(self) -> int:
        if self.norm.kernel_id < 0:
            raise RegimeError("grid operators need a compiled norm (gauge or box)")
        return self.norm.kernel_id


def kernel_weight(xi, eta, params: KernelParams):
    """pseudo_distance(xi, eta)^(-Q-sp)."""
    d = pseudo_distance(xi, eta, params.norm)
    if np.any(np.asarray(d) == 0):
        raise SingularityError("kernel weight is singular on the diagonal")
    return d ** (-params.exponent)


# Discretisation caches --------------------------------------------------------


class Discretization:
    """Kernel weights for one (grid, params) pair."""

    def __init__(self, grid: Grid, params: KernelParams):
        if grid.n != params.n:
            raise InputError("grid and kernel parameters disagree on n")
        self.grid = grid
        self.params = params
        self.h = grid.cell_volume
        self.offsets = subcell_offsets(grid.spacing, params.subcell_level)
        self._centers = np.ascontiguousarray(grid.centers)
        self._index = np.ascontiguousarray(grid.index.astype(np.int64))
        self._far: ExteriorNodes | None = None

    @property
    def far(self) -> ExteriorNodes:
        if self._far is None:
            g = self.grid
            c = 0.5 * (g.lower + g.upper)
            p = self.params
            self._far = exterior_nodes(g.lower, g.upper, c, p.sp, p.n, 0.0, p.far_phi, None, p.far_gl, p.far_tail)
        return self._far

    def weights(self, rows, cols=None) -> np.ndarray:
        rows = np.ascontiguousarray(rows, dtype=np.int64)
        cols = np.arange(self.grid.num_cells) if cols is None else cols
        cols = np.ascontiguousarray(cols, dtype=np.int64)
        p = self.params
        return K.weight_block(self._centers, self._index, rows, cols, p.n, p._norm_id(), p.exponent, self.offsets)

    def far_weights(self, rows) -> np.ndarray:
        """Wf[r, q] = K(c_r, eta_q) vol_q."""
        rows = np.asarray(rows, dtype=np.int64)
        p = self.params
        far = self.far
        Kf = K.point_weights(self._centers[rows], far.points, p.n, p._norm_id(), p.exponent)
        return Kf * far.weights

    def far_values(self, gfun: GridFunction) -> np.ndarray:
        if gfun.exterior is None:
            return np.zeros(self.far.size)
        return np.asarray(gfun.exterior(self.far.points), dtype=float)

    def far_sum(self, rows, vals, far_vals, power: float, mode: int) -> np.ndarray:
        p = self.params
        far = self.far
        rows = np.asarray(rows, dtype=np.int64)
        return K.far_sums(self._centers[rows], np.ascontiguousarray(vals, dtype=float), far.points,
                          np.ascontiguousarray(far_vals, dtype=float), far.weights,
                          p.n, p._norm_id(), p.exponent, power, mode)

    def pair_power_sum(self, sel, vals, power: float) -> float:
        """sum over ordered pairs a != b in sel of |v_a - v_b|^power W_ab (no h factor)."""
        sel = np.ascontiguousarray(sel, dtype=np.int64)
        p = self.params
        parts = K.seminorm_partials(self._centers, self._index, sel, np.ascontiguousarray(vals, dtype=float),
                                    p.n, p._norm_id(), p.exponent, self.offsets, float(power))
        return 2.0 * math.fsum(parts)


_CACHE: dict = {}
_CACHE_MAX = 6


def _cached(key, build):
    if key in _CACHE:
        return _CACHE[key]
    if len(_CACHE) >= _CACHE_MAX:
        _CACHE.pop(next(iter(_CACHE)))
    _CACHE[key] = val = build()
    return val


def clear_caches():
    """Drop cached weights and quadrature nodes (used by reproducibility runs)."""
    _CACHE.clear()


def discretization(grid: Grid, params: KernelParams) -> Discretization:
    key = ("disc", grid.spec, params, id(params.norm.func))
    return _cached(key, lambda: Discretization(grid if isinstance(grid, Grid) else build_grid(grid), params))


@dataclass(eq=False)
class OmegaCoupling:
    """Weights coupling the Omega values to each other and to the fixed values.

    ``Wmm = h^2 W[Om, Om]``; ``B = [2 h^2 W[Om, Lambda \\ Om], 2 h Wf[Om, :]]``.
    Fixed values are ``v = [u on Lambda \\ Om, g at the exterior nodes]``.
    """

    disc: Discretization
    rows: np.ndarray
    others: np.ndarray
    Wmm: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return self.disc.h

    @property
    def p(self) -> float:
        return self.disc.params.p

    def fixed_values(self, gfun: GridFunction) -> np.ndarray:
        return np.concatenate([gfun.values[self.others], self.disc.far_values(gfun)])

    def energy(self, u, v, f) -> float:
        inner, outer = K.energy_partials(np.ascontiguousarray(u, dtype=float), self.Wmm, self.B, v, self.p)
        return (math.fsum(inner) + math.fsum(outer)) / self.p - self.h * math.fsum(np.asarray(f) * u)

    def gradient(self, u, v, f) -> np.ndarray:
        g = K.energy_gradient(np.ascontiguousarray(u, dtype=float), self.Wmm, self.B, v, self.p, 2.0)
        return g - self.h * np.asarray(f)

    def energy_change(self, u, d, alpha, v, f) -> float:
        """E(u + alpha d) - E(u) computed term by term."""
        inner, outer = K.energy_delta_partials(np.ascontiguousarray(u, dtype=float),
                                               np.ascontiguousarray(d, dtype=float), float(alpha),
                                               self.Wmm, self.B, v, self.p)
        return (math.fsum(inner) + math.fsum(outer)) / self.p - alpha * self.h * math.fsum(np.asarray(f) * d)

    def hessian_diagonal(self, u, v, floor: float) -> np.ndarray:
        """Diagonal of the energy Hessian, with differences bounded below by ``floor``."""
        return K.hessian_diagonal(np.ascontiguousarray(u, dtype=float), self.Wmm, self.B, v, self.p, 2.0, floor)

    def diagonal(self) -> np.ndarray:
        """Diagonal of the p = 2 energy Hessian: 2 (sum_b Wmm_ab + sum_j B_aj / 2)."""
        return 2.0 * self.Wmm.sum(axis=1) + self.B.sum(axis=1)


def omega_coupling(grid: Grid, params: KernelParams, omega_mask) -> OmegaCoupling:
    mask = np.asarray(omega_mask, dtype=bool)
    if not mask.any():
        raise InputError("Omega mask is empty")

    def build():
        disc = discretization(grid, params)
        rows = np.flatnonzero(mask)
        others = np.flatnonzero(~mask)
        W = disc.weights(rows)
        h = disc.h
        Wmm = np.ascontiguousarray(h * h * W[:, rows])
        B = np.ascontiguousarray(np.concatenate([2.0 * h * h * W[:, others], 2.0 * h * disc.far_weights(rows)], axis=1))
        return OmegaCoupling(disc, rows, others, Wmm, B)

    key = ("omega", grid.spec, params, id(params.norm.func), mask.tobytes())
    return _cached(key, build)


# Public operations ------------------------------------------------------------


def _cell_values(grid: Grid, f) -> np.ndarray:
    if f is None:
        return np.zeros(grid.num_cells)
    if np.isscalar(f):
        return np.full(grid.num_cells, float(f))
    if callable(f):
        return np.asarray(f(grid.centers), dtype=float)
    arr = np.asarray(f, dtype=float)
    if arr.shape != (grid.num_cells,):
        raise InputError("source term must have one value per cell")
    return arr


def gagliardo_seminorm(u: GridFunction, params: KernelParams, mask=None, exterior: bool = False) -> float:
    """([u]^p)^(1/p) with [u]^p = sum over ordered masked cell pairs |u_a - u_b|^p W_ab h^2.

    With ``exterior=True`` the pairs (masked cell, complement of the box) are
    added using the exterior datum, which gives the full-space seminorm when
    ``mask`` covers the whole box.
    """
    grid = u.grid
    disc = discretization(grid, params)
    sel = np.arange(grid.num_cells) if mask is None else np.flatnonzero(np.asarray(mask, dtype=bool))
    if sel.size == 0:
        raise InputError("seminorm mask is empty")
    total = disc.pair_power_sum(sel, u.values[sel], params.p) * disc.h ** 2
    if exterior:
        far = disc.far_sum(sel, u.values[sel], disc.far_values(u), params.p, 0)
        total += 2.0 * disc.h * math.fsum(far)
    return total ** (1.0 / params.p)


def fractional_energy(u: GridFunction, f, params: KernelParams, omega_mask=None) -> float:
    mask = u.omega_mask if omega_mask is None else np.asarray(omega_mask, dtype=bool)
    oc = omega_coupling(u.grid, params, mask)
    fv = _cell_values(u.grid, f)[oc.rows]
    return oc.energy(u.values[oc.rows], oc.fixed_values(u), fv)


def energy_gradient(u: GridFunction, f, params: KernelParams, omega_mask=None) -> np.ndarray:
    """dE/du_a for the Omega cells (in increasing cell order)."""
    mask = u.omega_mask if omega_mask is None else np.asarray(omega_mask, dtype=bool)
    oc = omega_coupling(u.grid, params, mask)
    fv = _cell_values(u.grid, f)[oc.rows]
    return oc.gradient(u.values[oc.rows], oc.fixed_values(u), fv)


def apply_operator(u: GridFunction, cell, params: KernelParams):
    """L u at one cell index (returns float) or an array of cell indices."""
    scalar = np.isscalar(cell)
    rows = np.atleast_1d(np.asarray(cell, dtype=np.int64))
    if np.any(rows < 0) or np.any(rows >= u.grid.num_cells):
        raise InputError("cell index out of range")
    disc = discretization(u.grid, params)
    W = disc.weights(rows)
    Wf = disc.far_weights(rows)
    out = K.operator_rows(np.ascontiguousarray(u.values), rows, W, Wf, disc.far_values(u), params.p, disc.h)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class TailEstimate:
    """Tail(u; center, radius) = (grid_part + farfield_part)^(1/(p-1)).

    Both parts already include the factor radius^{sp}: ``grid_part`` is the
    sum over box cells outside the ball, ``farfield_part`` the ray quadrature
    over the complement of the box.
    """

    value: float
    grid_part: float
    farfield_part: float
    center: np.ndarray
    radius: float
    p: float

    def reconstruct(self) -> float:
        return (self.grid_part + self.farfield_part) ** (1.0 / (self.p - 1.0))


def _tail_grid_sum(grid: Grid, absvals, center, R, expo, n_sub: int) -> float:
    """sum over cells outside B_R(center) of absvals * |center^{-1} xi|^{-expo} h.

    Cells cut by the sphere, and cells within 2R of the centre where the kernel
    varies quickly across a cell, are integrated with n_sub^d sub-cell midpoints.
    """
    h = grid.cell_volume
    d = grid.spec.dim
    dist = pseudo_distance(grid.centers, center)
    corners = np.array(np.meshgrid(*([[-0.5, 0.5]] * d), indexing="ij")).reshape(d, -1).T * grid.spacing
    cd = pseudo_distance(grid.centers[:, None, :] + corners[None], center)
    lo = np.minimum(cd.min(axis=1), dist)
    hi = np.maximum(cd.max(axis=1), dist)
    live = (hi >= R) & (absvals != 0)
    near = live & (lo < 2.0 * R)
    far = live & ~near
    total = math.fsum(absvals[far] * dist[far] ** (-expo) * h)
    if near.any():
        ticks = (np.arange(n_sub) + 0.5) / n_sub - 0.5
        sub = np.stack(np.meshgrid(*([ticks] * d), indexing="ij"), axis=-1).reshape(-1, d) * grid.spacing
        for idx in np.array_split(np.flatnonzero(near), max(1, near.sum() // 2048)):
            pts = grid.centers[idx][:, None, :] + sub[None]
            sd = pseudo_distance(pts, center)
            kern = np.where(sd >= R, np.maximum(sd, 1e-300) ** (-expo), 0.0)
            total += math.fsum(absvals[idx] * kern.mean(axis=1) * h)
    return total


def _tail_nodes(grid: Grid, center, R, params: KernelParams) -> ExteriorNodes:
    key = ("tailnodes", grid.spec, tuple(np.round(center, 15)), float(R), params.sp, params.n,
           params.far_phi, params.far_gl, params.far_tail)
    return _cached(key, lambda: exterior_nodes(grid.lower, grid.upper, center, params.sp, params.n, R,
                                               params.far_phi, None, params.far_gl, params.far_tail))


def tail(u: GridFunction, xi0, R: float, params: KernelParams, n_sub: int = 6) -> TailEstimate:
    """Nonlocal tail (R^{sp} int_{outside B_R(xi0)} |u|^{p-1} |xi0^{-1} xi|^{-Q-sp})^{1/(p-1)}."""
    if not (np.isfinite(R) and R > 0):
        raise InputError(f"tail radius must be positive, got {R}")
    c = np.asarray(xi0.coords if isinstance(xi0, GroupPoint) else xi0, dtype=float)
    p = params.p
    Rsp = R ** params.sp
    absvals = np.abs(u.values) ** (p - 1.0)
    grid_part = Rsp * _tail_grid_sum(u.grid, absvals, c, R, params.exponent, n_sub)
    far_part = 0.0
    if u.exterior is not None:
        nodes = _tail_nodes(u.grid, c, R, params)
        g = np.abs(u.exterior(nodes.points)) ** (p - 1.0)
        k = pseudo_distance(nodes.points, c) ** (-params.exponent)
        far_part = Rsp * math.fsum(g * k * nodes.weights)
    value = (grid_part + far_part) ** (1.0 / (p - 1.0))
    if not np.isfinite(value):
        raise InputError("tail is not finite; the exterior datum grows too fast")
    return TailEstimate(value, grid_part, far_part, c, float(R), p)


def weak_residual(u: GridFunction, psi, f, params: KernelParams) -> float:
    """sum_ab phi(u_a-u_b)(psi_a-psi_b) W h^2 + 2h sum_aq phi(u_a-g_q) psi_a Wf - h sum f psi."""
    grid = u.grid
    pv = psi.values if isinstance(psi, GridFunction) else np.asarray(psi, dtype=float)
    if pv.shape != (grid.num_cells,):
        raise InputError("test function must have one value per cell")
    if np.any(pv[~u.omega_mask] != 0):
        raise InputError("test function must vanish outside Omega")
    rows = np.flatnonzero(pv != 0)
    if rows.size == 0:
        return 0.0
    Lu = apply_operator(u, rows, params)
    fv = _cell_values(grid, f)[rows]
    h = grid.cell_volume
    return 2.0 * h * math.fsum(Lu * pv[rows]) - h * math.fsum(fv * pv[rows])


def kernel_integral_outside_ball(r: float, gamma: float, params: KernelParams) -> float:
    """int_{|xi| > r} |xi|^{-Q-gamma} d xi for the gauge, by two 1-D quadratures.

    With u = |z|^2 and (u, t) = R (cos phi, sin phi) the integral separates into
    |S^{2n-1}|/2 * int cos^{n-1} phi dphi * int_{r^2}^inf R^n R^{-(Q+gamma)/2} dR.
    """
    if not gamma > 0:
        raise InputError(f"gamma must be positive, got {gamma}")
    if not r > 0:
        raise InputError(f"radius must be positive, got {r}")
    from .exterior import sphere_area

    n = params.n
    Q = params.Q
    ang, _ = integrate.quad(lambda ph: np.cos(ph) ** (n - 1), -np.pi / 2, np.pi / 2)
    rad, _ = integrate.quad(lambda R: R ** n * R ** (-(Q + gamma) / 2.0), r * r, np.inf, limit=200)
    return 0.5 * sphere_area(2 * n) * ang * rad


def sobolev_ratio(u: GridFunction, params: KernelParams) -> float:
    """||u||_{L^{p*}}^p / [u]^p over the whole space, p* = Qp/(Q-sp)."""
    if params.sp >= params.Q:
        raise RegimeError("Sobolev ratio needs sp < Q")
    p = params.p
    pstar = params.Q * p / (params.Q - params.sp)
    semi = gagliardo_seminorm(u, params, None, exterior=True) ** p
    if semi == 0:
        raise InputError("seminorm vanishes; ratio undefined")
    h = u.grid.cell_volume
    lp = (math.fsum(np.abs(u.values) ** pstar) * h) ** (p / pstar)
    return lp / semi


def embedding_ratio(u: GridFunction, s1: float, params: KernelParams, domain=None) -> float:
    """||u||_{W^{s1,p}(D)} / ||u||_{W^{s,p}(D)} with ||u||^p = ||u||_p^p + [u]^p on D."""
    if not 0 < s1 <= params.s:
        raise InputError(f"s1 must lie in (0, s], got {s1}")
    if s1 == params.s:
        return 1.0
    mask = np.ones(u.grid.num_cells, bool) if domain is None else np.asarray(domain, dtype=bool)
    p = params.p
    lp = math.fsum(np.abs(u.values[mask]) ** p) * u.grid.cell_volume
    hi = lp + gagliardo_seminorm(u, params, mask) ** p
    lo = lp + gagliardo_seminorm(u, params.with_(s=s1), mask) ** p
    return (lo / hi) ** (1.0 / p)
