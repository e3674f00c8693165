"""Discrete weak solutions of the nonlocal Dirichlet problem.

The unknowns are the values of u on the Omega cells; the box cells outside
Omega hold g, and g is also used at the exterior quadrature nodes.  The
discrete energy and its gradient are those of :mod:`hfrac.kernelops`.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, cg

from .errors import InputError, NumericalError, RegimeError
from .expr import Expr
from .grid import Grid, GridFunction, GridSpec, ball_mask, build_grid
from .hgroup import Ball, GroupPoint
from .kernelops import KernelParams, OmegaCoupling, _cell_values, omega_coupling

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    method: str = "ncg"  # "ncg" (Polak-Ribiere+ conjugate directions) or "gd"
    tol: float = 1e-6  # sup-norm of the pointwise residual 2 L u - f on Omega
    max_iter: int = 20000
    armijo: float = 1e-4
    min_step: float = 1e-16
    restart: int = 1000
    linear_tol: float = 1e-10
    linear_max_iter: int = 10000
    picard_iter: int = 20
    picard_tol: float = 1e-8

    def __post_init__(self):
        if self.method not in ("ncg", "gd"):
            raise InputError(f"unknown descent method {self.method!r}")
        if not (self.tol > 0 and self.linear_tol > 0):
            raise InputError("tolerances must be positive")
        if self.max_iter < 1:
            raise InputError("max_iter must be >= 1")


@dataclass(eq=False)
class DirichletProblem:
    """2 L u = f in Omega, u = g outside Omega (discrete weak form)."""

    params: KernelParams
    grid: Grid
    omega_mask: np.ndarray
    g: Expr | Callable
    f: object = None  # None, scalar, Expr/callable of points, or per-cell array
    f_of_u: Callable | None = None  # optional f(points, u) for a Picard loop

    def __post_init__(self):
        self.omega_mask = np.asarray(self.omega_mask, dtype=bool)
        if self.omega_mask.shape != (self.grid.num_cells,):
            raise InputError("Omega mask must have one entry per cell")
        if not self.omega_mask.any():
            raise InputError("Omega mask is empty")
        gv = np.asarray(self.g(self.grid.centers), dtype=float)
        if not np.all(np.isfinite(gv[~self.omega_mask])):
            raise InputError("g is not finite on the box cells outside Omega")
        fv = _cell_values(self.grid, self.f)
        if not np.all(np.isfinite(fv[self.omega_mask])):
            raise InputError("f is not bounded on Omega")
        self._g_cells = gv
        self.f_sup = float(np.max(np.abs(fv[self.omega_mask]))) if self.omega_mask.any() else 0.0

    @classmethod
    def on_ball(cls, params: KernelParams, center, radius: float, resolution: int, g, f=None,
                collar: float | None = None, f_of_u=None) -> "DirichletProblem":
        spec = GridSpec.around_ball(center, radius, resolution, params.n, collar)
        grid = build_grid(spec)
        c = center if isinstance(center, GroupPoint) else GroupPoint.from_coords(center)
        mask = ball_mask(grid, Ball(c, radius))
        return cls(params, grid, mask, g, f, f_of_u)

    def f_values(self) -> np.ndarray:
        return _cell_values(self.grid, self.f)

    def datum(self) -> GridFunction:
        """g on every cell (Omega values included) with g as exterior datum."""
        g = self.g if isinstance(self.g, Expr) else _CallableExpr(self.g)
        return GridFunction(self.grid, self._g_cells, self.omega_mask, g)

    def coupling(self) -> OmegaCoupling:
        return omega_coupling(self.grid, self.params, self.omega_mask)


class _CallableExpr:
    """Adapter so plain callables can serve as exterior data."""

    def __init__(self, fn):
        self.fn = fn
        self.source = getattr(fn, "__name__", "callable")

    def __call__(self, pts):
        return np.asarray(self.fn(np.atleast_2d(pts)), dtype=float)


@dataclass
class SolveResult:
    u: GridFunction
    iterations: int
    optimality: float
    energy_trace: list
    wall_ms: float
    converged: bool = True
    method: str = ""
    residual: float | None = None
    final_energy: float | None = None
    picard_iterations: int = 0
    picard_converged: bool | None = None
    extra: dict = field(default_factory=dict)

    def report(self, params: KernelParams) -> dict:
        p = {k: v for k, v in asdict(params).items() if k != "norm"}
        p["norm"] = params.norm.name
        p["Q"] = params.Q
        spec = self.u.grid.spec
        out = {
            "params": p,
            "grid": {"n": spec.n, "lower": list(spec.lower), "upper": list(spec.upper),
                     "resolution": list(spec.resolution)},
            "method": self.method,
            "iterations": self.iterations,
            "optimality": self.optimality,
            "converged": self.converged,
            "residual": self.residual,
            "final_energy": self.final_energy,
            "energy_trace": list(self.energy_trace),
            "picard_iterations": self.picard_iterations,
            "picard_converged": self.picard_converged,
            "wall_ms": self.wall_ms,
        }
        out.update(self.extra)
        return out


def _with_omega(problem: DirichletProblem, uo: np.ndarray) -> GridFunction:
    base = problem.datum()
    vals = base.values.copy()
    vals[problem.omega_mask] = uo
    return base.with_values(vals)


def _initial_guess(oc: OmegaCoupling, v: np.ndarray) -> np.ndarray:
    """Kernel-weighted mean of the fixed values seen from each Omega cell."""
    mass = oc.B.sum(axis=1)
    return (oc.B @ v) / mass


# Linear case ---------------------------------------------------------------------


def assemble_linear_p2(problem: DirichletProblem):
    """(A, b, c0) with E(u) = 1/2 u^T A u - b^T u + c0 on the Omega values (p = 2).

    A is dense (the kernel couples every pair of cells), symmetric, with
    positive diagonal and nonpositive off-diagonal entries.
    """
    if problem.params.p != 2.0:
        raise RegimeError("linear assembly needs p = 2")
    oc = problem.coupling()
    v = oc.fixed_values(problem.datum())
    f = problem.f_values()[oc.rows]
    A = -2.0 * oc.Wmm
    A[np.diag_indices_from(A)] = 2.0 * oc.Wmm.sum(axis=1) + oc.B.sum(axis=1)
    b = oc.B @ v + oc.h * f
    c0 = 0.5 * math.fsum((oc.B * (v * v)).sum(axis=1))
    return A, b, c0


def solve_linear_p2(problem: DirichletProblem, tol: float = 1e-10, max_iter: int = 10000) -> SolveResult:
    """Jacobi-preconditioned conjugate gradients on A u = b."""
    t0 = time.perf_counter()
    A, b, c0 = assemble_linear_p2(problem)
    oc = problem.coupling()
    h = oc.h
    bn = float(np.linalg.norm(b))
    count = [0]

    def cb(_):
        count[0] += 1

    if bn == 0.0:
        u = np.zeros(b.size)
        res = 0.0
    else:
        dinv = 1.0 / np.diag(A)
        M = LinearOperator(A.shape, matvec=lambda x: dinv * x, dtype=float)
        x0 = _initial_guess(oc, oc.fixed_values(problem.datum()))
        u, info = cg(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=max_iter, M=M, callback=cb)
        res = float(np.linalg.norm(A @ u - b) / bn)
        if info != 0 or res > tol:
            raise NumericalError(f"CG did not reach rtol {tol} in {max_iter} iterations", residual=res)
    grad = A @ u - b
    e0 = c0
    e1 = 0.5 * float(u @ (A @ u)) - float(b @ u) + c0
    return SolveResult(
        u=_with_omega(problem, u),
        iterations=count[0],
        optimality=float(np.max(np.abs(grad)) / h),
        energy_trace=[e0, e1],
        wall_ms=1e3 * (time.perf_counter() - t0),
        method="cg",
        residual=res,
        final_energy=e1,
    )


# General p --------------------------------------------------------------------------


def _merge_fixed(oc: OmegaCoupling, v: np.ndarray) -> OmegaCoupling:
    """Coupling with the fixed columns of equal value summed into one column.

    Exact for every p, and a large saving when the datum is constant on most
    of the exterior (compactly supported data, far field of zero).
    """
    vals, inv = np.unique(v, return_inverse=True)
    if vals.size == v.size:
        return oc, v
    S = sparse.csr_matrix((np.ones(v.size), (np.arange(v.size), inv)), shape=(v.size, vals.size))
    B = np.ascontiguousarray((sparse.csr_matrix(oc.B) @ S).toarray())
    return replace(oc, B=B), vals


def _descent(oc: OmegaCoupling, u: np.ndarray, v: np.ndarray, f: np.ndarray, cfg: SolverConfig):
    oc, v = _merge_fixed(oc, v)
    h = oc.h
    D2 = oc.diagonal()
    scale = 1.0 + float(np.max(np.abs(v))) if v.size else 1.0
    floor = 1e-3 * scale

    def precond(x):
        # Jacobi scaling by the local Hessian diagonal (constant when p = 2)
        if oc.p == 2.0:
            return 1.0 / D2
        return 1.0 / np.maximum(oc.hessian_diagonal(x, v, floor), 1e-8 * D2)

    P = precond(u)
    g = oc.gradient(u, v, f)
    E = oc.energy(u, v, f)
    trace = [E]
    d = -P * g
    alpha = 1.0
    it = 0
    opt = float(np.max(np.abs(g))) / h
    while opt > cfg.tol:
        if it >= cfg.max_iter:
            return u, it, opt, trace, False
        gd = float(g @ d)
        if gd >= 0:
            d = -P * g
            gd = float(g @ d)
        a = alpha
        delta = oc.energy_change(u, d, a, v, f)
        while not delta <= cfg.armijo * a * gd:
            a *= 0.5
            if a < cfg.min_step:
                raise NumericalError(f"line search failed at iteration {it} (step < {cfg.min_step})", residual=opt)
            delta = oc.energy_change(u, d, a, v, f)
        # one-dimensional quadratic model through E(u), slope gd and E(u + a d)
        curv = (delta - gd * a) / (a * a)
        if curv > 0:
            a_q = -gd / (2.0 * curv)
            if abs(a_q - a) > 1e-3 * a:
                dq = oc.energy_change(u, d, a_q, v, f)
                if dq < delta and dq <= cfg.armijo * a_q * gd:
                    a, delta = a_q, dq
        u = u + a * d
        E = E + delta
        trace.append(E)
        g_new = oc.gradient(u, v, f)
        it += 1
        P_old = P
        P = precond(u)
        if cfg.method == "ncg" and it % cfg.restart:
            Pg = P * g_new
            beta = max(0.0, float(Pg @ (g_new - g)) / float((P_old * g) @ g))
            d = -Pg + beta * d
        else:
            d = -P * g_new
        g = g_new
        alpha = min(2.0 * a, 1e6)
        opt = float(np.max(np.abs(g))) / h
    return u, it, opt, trace, True


def solve_energy_descent(problem: DirichletProblem, config: SolverConfig | None = None, u0=None) -> SolveResult:
    """Minimise the discrete energy over the Omega values.

    Directions are Jacobi-scaled gradients (``gd``) or Polak-Ribiere+ conjugate
    directions with periodic restarts (``ncg``).  Steps come from Armijo
    backtracking by halving, followed by one quadratic-model trial step that is
    accepted only if it lowers the energy further.  Energy changes are computed
    term by term, so the recorded trace is nonincreasing.
    """
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    oc = problem.coupling()
    datum = problem.datum()
    v = oc.fixed_values(datum)
    u = _initial_guess(oc, v) if u0 is None else np.asarray(u0, dtype=float)[oc.rows].copy()
    f = problem.f_values()[oc.rows]
    picard_it = 0
    picard_ok = None
    if problem.f_of_u is None:
        u, it, opt, trace, ok = _descent(oc, u, v, f, cfg)
    else:
        pts = problem.grid.centers[oc.rows]
        it = 0
        trace = []
        picard_ok = False
        for picard_it in range(1, cfg.picard_iter + 1):
            f = np.asarray(problem.f_of_u(pts, u), dtype=float)
            u_new, k, opt, tr, ok = _descent(oc, u, v, f, cfg)
            it += k
            trace.extend(tr)
            change = float(np.max(np.abs(u_new - u)))
            u = u_new
            if change <= cfg.picard_tol:
                picard_ok = True
                break
    if not ok:
        log.warning("descent stopped at max_iter=%d with optimality %.3e", cfg.max_iter, opt)
    final = oc.energy(u, v, f)
    return SolveResult(
        u=_with_omega(problem, u),
        iterations=it,
        optimality=opt,
        energy_trace=trace,
        wall_ms=1e3 * (time.perf_counter() - t0),
        converged=ok,
        method=cfg.method,
        final_energy=final,
        picard_iterations=picard_it,
        picard_converged=picard_ok,
    )
