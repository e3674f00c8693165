"""Measured versions of the regularity estimates.

Every inequality is evaluated on a grid function with the same discretisation
as the solver (cell-pair weights plus exterior ray quadrature), and reported
as an :class:`EstimateReport`.  Constants in the estimates are implicit, so a
report carries the *fitted* constant: the smallest multiple of the right-hand
side (all unknown constants set to one) that dominates the left-hand side.

The module also runs the two iteration schemes behind the sup bound and the
oscillation decay: the level-set recursion A_{j+1} <= M C^j A_j^{1+beta}
(``degiorgi_iterate``) and the geometric oscillation ledger.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import InputError, PreconditionError, RegimeError
from .exterior import gauge_ball_volume
from .grid import Grid, GridFunction
from .hgroup import GroupPoint, horizontal_gradient, pseudo_distance
from .kernelops import (KernelParams, _cell_values, discretization, kernel_integral_outside_ball, tail,
                        weak_residual)

log = logging.getLogger(__name__)

__all__ = [
    "CutoffFunction",
    "EstimateReport",
    "LemmaGammaParams",
    "DeGiorgiSchedule",
    "DeGiorgiRun",
    "OscillationLedger",
    "HolderFit",
    "TailScalingReport",
    "check_lemma_gamma",
    "check_caccioppoli",
    "check_log_lemma",
    "check_log_corollary",
    "check_boundedness",
    "boundedness_closed_form",
    "certify_subsolution",
    "degiorgi_iterate",
    "degiorgi_pipeline",
    "recursion_threshold",
    "fit_holder_exponent",
    "oscillation_ledger",
    "check_kernel_tail_scaling",
]


def _coords(xi) -> np.ndarray:
    return np.asarray(xi.coords if isinstance(xi, GroupPoint) else xi, dtype=float)


def _ball(grid: Grid, xi0, r: float, params: KernelParams) -> np.ndarray:
    return pseudo_distance(grid.centers, _coords(xi0), params.norm) < r


def _fit(lhs: float, rhs_total: float) -> float:
    if lhs <= 0.0:
        return 0.0
    if rhs_total <= 0.0:
        return math.inf
    return lhs / rhs_total


def _negative_part(expr):
    if expr is None:
        return None
    return lambda pts: np.maximum(-np.asarray(expr(pts), dtype=float), 0.0)


def _positive_part(expr, shift: float = 0.0):
    if expr is None:
        return None
    return lambda pts: np.maximum(np.asarray(expr(pts), dtype=float) - shift, 0.0)


# Reports ----------------------------------------------------------------------------


@dataclass
class EstimateReport:
    """One inequality on one instance.

    ``rhs`` holds the right-hand-side terms with every unknown constant set to
    one; ``fitted_c = lhs / sum(rhs)``.
    """

    inequality: str
    instance: dict
    lhs: float
    rhs: dict
    fitted_c: float
    lhs_terms: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    ok: bool | None = None  # explicit verdict for checks whose pass is not "finite constant"

    @property
    def passed(self) -> bool:
        if self.ok is not None:
            return bool(self.ok)
        return bool(np.isfinite(self.fitted_c))

    def to_dict(self) -> dict:
        out = {"inequality": self.inequality, "instance": dict(self.instance), "lhs": self.lhs}
        out.update(self.lhs_terms)
        out.update(self.rhs)
        out["fitted_c"] = self.fitted_c
        out["pass"] = self.passed
        out.update(self.extra)
        out["warnings"] = list(self.warnings)
        return out


# Lemma for |a|^p -------------------------------------------------------------------


@dataclass(frozen=True)
class LemmaGammaParams:
    p: float

    def __post_init__(self):
        if not self.p >= 1:
            raise InputError(f"p must be >= 1, got {self.p}")

    @property
    def c_p(self) -> float:
        return (self.p - 1.0) * gamma_fn(max(1.0, self.p - 2.0))


def check_lemma_gamma(a, b, eps, params):
    """|a|^p <= |b|^p + c_p eps |b|^p + (1 + c_p eps) eps^{1-p} |a - b|^p.

    Vectorised over ``a``, ``b``, ``eps`` (and ``p`` when ``params`` is an
    array of exponents).  Returns ``(ok, slack)`` where slack = RHS - LHS and
    ok means slack >= -1e-12 RHS.  ``params`` may be a LemmaGammaParams, a
    KernelParams or a plain exponent.
    """
    if isinstance(params, (LemmaGammaParams, KernelParams)):
        p = np.asarray(params.p, dtype=float)
    else:
        p = np.asarray(params, dtype=float)
    if np.any(p < 1):
        raise InputError("p must be >= 1")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if np.any(~(eps > 0)) or np.any(eps > 1):
        raise InputError("eps must lie in (0, 1]")
    cp = (p - 1.0) * gamma_fn(np.maximum(1.0, p - 2.0))
    bp = np.abs(b) ** p
    lhs = np.abs(a) ** p
    rhs = bp + cp * eps * bp + (1.0 + cp * eps) * eps ** (1.0 - p) * np.abs(a - b) ** p
    slack = rhs - lhs
    ok = slack >= -1e-12 * rhs
    if ok.ndim == 0:
        return bool(ok), float(slack)
    return ok, slack


# Cut-off functions ------------------------------------------------------------------


def _smoothstep(t):
    """C^2 quintic bridge from 0 (t <= 0) to 1 (t >= 1)."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


@dataclass(frozen=True)
class CutoffFunction:
    """phi = 1 on B_inner(center), 0 outside B_outer(center), quintic in gauge distance between."""

    center: np.ndarray
    inner: float
    outer: float
    grad_sup: float = math.nan  # measured sup |grad_H phi|
    grad_constant: float = math.nan  # grad_sup * (outer - inner)

    def __post_init__(self):
        object.__setattr__(self, "center", _coords(self.center))
        if not (0 <= self.inner < self.outer):
            raise InputError("cut-off radii must satisfy 0 <= inner < outer")

    def __call__(self, pts) -> np.ndarray:
        d = pseudo_distance(np.asarray(pts, dtype=float), self.center)
        return 1.0 - _smoothstep((d - self.inner) / (self.outer - self.inner))

    @classmethod
    def build(cls, center, inner: float, outer: float, n_probe: int = 4000, seed: int = 0,
              fd_step: float | None = None) -> "CutoffFunction":
        """Construct and measure sup |grad_H phi| on random points of the transition shell."""
        c = _coords(center)
        phi = cls(c, inner, outer)
        rng = np.random.default_rng(seed)
        d = c.size
        n = (d - 1) // 2
        # points c o Phi_rho(theta) with gauge-uniform directions and rho in the shell
        z = rng.normal(size=(n_probe, d - 1))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        ang = rng.uniform(-np.pi / 2, np.pi / 2, n_probe)
        theta = np.concatenate([np.sqrt(np.cos(ang))[:, None] * z, np.sin(ang)[:, None]], axis=1)
        rho = rng.uniform(inner, outer, n_probe)
        local = np.concatenate([rho[:, None] * theta[:, :-1], (rho ** 2 * theta[:, -1])[:, None]], axis=1)
        x, y, t = c[:n], c[n:2 * n], c[-1]
        lx, ly = local[:, :n], local[:, n:2 * n]
        pts = np.concatenate([x + lx, y + ly, (t + local[:, -1] + 2.0 * (ly @ x - lx @ y))[:, None]], axis=1)
        step = fd_step or 1e-4 * (outer - inner)
        g = horizontal_gradient(phi, pts, step)
        sup = float(np.max(np.linalg.norm(g, axis=1)))
        return cls(c, inner, outer, sup, sup * (outer - inner))


# Subsolution certificate ------------------------------------------------------------


def certify_subsolution(u: GridFunction, f, params: KernelParams, n_tests: int = 20, tol: float = 1e-6,
                        seed: int = 0) -> tuple[bool, float]:
    """Weak residual against random nonnegative tests supported in Omega.

    Returns ``(certified, max residual)``; certified iff every residual is <= tol.
    """
    rng = np.random.default_rng(seed)
    rows = np.flatnonzero(u.omega_mask)
    worst = -math.inf
    for _ in range(n_tests):
        psi = np.zeros(u.grid.num_cells)
        psi[rows] = rng.uniform(0.0, 1.0, rows.size)
        worst = max(worst, weak_residual(u, psi, f, params))
    return bool(worst <= tol), float(worst)


def _certify(report: EstimateReport, u, f, params, certify):
    if certify is False:
        return
    if certify is True or certify is None:
        ok, res = certify_subsolution(u, f, params)
    else:
        ok, res = certify
    report.extra["certified"] = ok
    report.extra["certificate_residual"] = res
    if not ok:
        report.warnings.append("uncertified subsolution")


# Caccioppoli --------------------------------------------------------------------------


def _pair_sum(W, x, h, p, weights=None):
    diff = np.abs(x[:, None] - x[None, :]) ** p
    if weights is not None:
        diff = weights[:, None] * diff
    return h * h * math.fsum((W * diff).sum(axis=1))


def check_caccioppoli(u: GridFunction, k: float, phi: CutoffFunction, xi0, r: float, params: KernelParams,
                      f=None, certify=None) -> EstimateReport:
    """Caccioppoli inequality with tail for w = (u - k)_+ on B_r(xi0).

    lhs_gagliardo   = int_{B_r} int_{B_r} K |w phi(xi) - w phi(eta)|^p
    rhs_phi_term    = int_{B_r} int_{B_r} K w^p(xi) |phi(xi) - phi(eta)|^p
    rhs_tail_sup_term, rhs_f_term = (int w phi^p) * (sup_{supp phi} int_{outside B_r} K w^{p-1}),
                                    (int w phi^p) * ||f||_{L^inf(B_r)}
    ``certify`` is None/True (run the certificate), False (skip) or a
    precomputed ``(ok, residual)`` pair.
    """
    grid = u.grid
    p = params.p
    disc = discretization(grid, params)
    h = disc.h
    inside = _ball(grid, xi0, r, params)
    if not inside.any():
        raise InputError("ball contains no grid cells")
    phv = phi(grid.centers)
    if np.any(phv[~inside] > 0):
        raise InputError("cut-off function is not supported in B_r")
    w = np.maximum(u.values - k, 0.0)
    sel = np.flatnonzero(inside)
    W = disc.weights(sel, sel)
    ws, ps = w[sel], phv[sel]
    lhs = _pair_sum(W, ws * ps, h, p)
    rhs_phi = _pair_sum(W, ps, h, p, weights=ws ** p)
    mass = h * math.fsum(ws * ps ** p)
    supp = sel[ps > 0]
    sup_tail = 0.0
    if supp.size and mass > 0:
        out = np.flatnonzero(~inside)
        Wo = disc.weights(supp, out)
        grid_part = h * (Wo @ (w[out] ** (p - 1.0)))
        far_part = 0.0
        if u.exterior is not None:
            gw = np.maximum(disc.far_values(u) - k, 0.0) ** (p - 1.0)
            far_part = disc.far_weights(supp) @ gw
        sup_tail = float(np.max(grid_part + far_part))
    fv = _cell_values(grid, f)
    f_sup = float(np.max(np.abs(fv[sel])))
    rhs = {"rhs_phi_term": rhs_phi, "rhs_tail_sup_term": mass * sup_tail, "rhs_f_term": mass * f_sup}
    rep = EstimateReport(
        "caccioppoli",
        {"center": _coords(xi0).tolist(), "r": r, "k": k, "p": p, "s": params.s, "n": params.n,
         "resolution": list(grid.spec.resolution)},
        lhs, rhs, _fit(lhs, math.fsum(rhs.values())),
        lhs_terms={"lhs_gagliardo": lhs},
        extra={"phi_inner": phi.inner, "phi_outer": phi.outer, "phi_grad_sup": phi.grad_sup,
               "phi_grad_constant": phi.grad_constant, "sup_tail": sup_tail, "w_phi_mass": mass},
    )
    _certify(rep, u, f, params, certify)
    return rep


# Logarithmic estimates ----------------------------------------------------------------


def _log_setup(u: GridFunction, d: float, xi0, r: float, R: float, params: KernelParams):
    if not d > 0:
        raise InputError("d must be positive")
    if not (0 < r and R > 0):
        raise InputError("radii must be positive")
    ct = params.triangle_constant
    if r > R / (2.0 * ct) * (1 + 1e-12):
        raise InputError(f"B_r must lie in B_(R/2c): r={r} > {R / (2 * ct)}")
    inside_R = _ball(u.grid, xi0, R, params)
    if not inside_R.any():
        raise InputError("ball B_R contains no grid cells")
    umin = float(np.min(u.values[inside_R]))
    if umin < -1e-10:
        raise PreconditionError(f"u is negative on B_R (min {umin:.3e})")
    neg = GridFunction(u.grid, np.maximum(-u.values, 0.0), u.omega_mask, _negative_part(u.exterior))
    T = tail(neg, xi0, R, params).value
    return T


def check_log_lemma(u: GridFunction, d: float, r: float, R: float, params: KernelParams, f=None,
                    xi0=None) -> EstimateReport:
    """Logarithmic estimate on B_r(xi0) for a solution u >= 0 on B_R(xi0).

    lhs_log = int_{B_r} int_{B_r} K |log((u(xi)+d)/(u(eta)+d))|^p,  lhs_f = int_{B_r} f_+ (u+d)^{1-p}
    rhs_scale_term = r^{Q-sp};  rhs_tail_term = d^{1-p} r^Q R^{-sp} (Tail(u_-; xi0, R)^{p-1} + 1)
    rhs_f_term = ||f||_{L^inf(B_r)} int_{B_2r} (u+d)^{1-p}
    """
    grid = u.grid
    xi0 = np.zeros(grid.spec.dim) if xi0 is None else _coords(xi0)
    T = _log_setup(u, d, xi0, r, R, params)
    p, Q, sp = params.p, params.Q, params.sp
    disc = discretization(grid, params)
    h = disc.h
    inside = _ball(grid, xi0, r, params)
    if not inside.any():
        raise InputError("ball B_r contains no grid cells")
    sel = np.flatnonzero(inside)
    W = disc.weights(sel, sel)
    lu = np.log(u.values[sel] + d)
    lhs_log = _pair_sum(W, lu, h, p)
    fv = _cell_values(grid, f)
    lhs_f = h * math.fsum(np.maximum(fv[sel], 0.0) * (u.values[sel] + d) ** (1.0 - p))
    two = _ball(grid, xi0, 2.0 * r, params)
    f_sup = float(np.max(np.abs(fv[sel])))
    rhs = {
        "rhs_scale_term": r ** (Q - sp),
        "rhs_tail_term": d ** (1.0 - p) * r ** Q / R ** sp * (T ** (p - 1.0) + 1.0),
        "rhs_f_term": f_sup * h * math.fsum((u.values[two] + d) ** (1.0 - p)),
    }
    lhs = lhs_log + lhs_f
    return EstimateReport(
        "log_lemma",
        {"center": xi0.tolist(), "r": r, "R": R, "d": d, "p": p, "s": params.s, "n": params.n,
         "resolution": list(grid.spec.resolution)},
        lhs, rhs, _fit(lhs, math.fsum(rhs.values())),
        lhs_terms={"lhs_log": lhs_log, "lhs_f": lhs_f},
        extra={"tail_u_minus": T},
    )


def check_log_corollary(u: GridFunction, a: float, b: float, d: float, r: float, R: float, params: KernelParams,
                        f=None, xi0=None) -> EstimateReport:
    """Mean oscillation of v = min{(log(a+d) - log(u+d))_+, log b} on B_r(xi0).

    lhs_mean_osc = mean_{B_r} |v - (v)_{B_r}|^p
    rhs_const_term = 1;  rhs_tail_term = d^{1-p} (r/R)^{sp} (1 + Tail(u_-; xi0, R)^{p-1})
    rhs_f_term = r^{sp} ||f||_{L^inf(B_2r)} mean_{B_2r} (u+d)^{1-p}
    The fractional Poincare step r^{sp-Q} [v]^p_{B_r} is reported alongside.
    """
    if not a > 0:
        raise InputError("a must be positive")
    if not b > 1:
        raise InputError("b must exceed 1")
    grid = u.grid
    xi0 = np.zeros(grid.spec.dim) if xi0 is None else _coords(xi0)
    T = _log_setup(u, d, xi0, r, R, params)
    p, Q, sp = params.p, params.Q, params.sp
    disc = discretization(grid, params)
    h = disc.h
    inside = _ball(grid, xi0, r, params)
    if not inside.any():
        raise InputError("ball B_r contains no grid cells")
    sel = np.flatnonzero(inside)
    uv = u.values[sel]
    v = np.minimum(np.maximum(math.log(a + d) - np.log(uv + d), 0.0), math.log(b))
    lhs = float(np.mean(np.abs(v - np.mean(v)) ** p))
    two = _ball(grid, xi0, 2.0 * r, params)
    fv = _cell_values(grid, f)
    f_sup = float(np.max(np.abs(fv[two])))
    rhs = {
        "rhs_const_term": 1.0,
        "rhs_tail_term": d ** (1.0 - p) * (r / R) ** sp * (1.0 + T ** (p - 1.0)),
        "rhs_f_term": r ** sp * f_sup * float(np.mean((u.values[two] + d) ** (1.0 - p))),
    }
    W = disc.weights(sel, sel)
    poincare = r ** (sp - Q) * _pair_sum(W, v, h, p)
    return EstimateReport(
        "log_corollary",
        {"center": xi0.tolist(), "r": r, "R": R, "a": a, "b": b, "d": d, "p": p, "s": params.s, "n": params.n,
         "resolution": list(grid.spec.resolution)},
        lhs, rhs, _fit(lhs, math.fsum(rhs.values())),
        lhs_terms={"lhs_mean_osc": lhs},
        extra={"tail_u_minus": T, "poincare_term": poincare, "poincare_ratio": _fit(lhs, poincare)},
    )


# Local boundedness -----------------------------------------------------------------------


def _bounded_exponent(params: KernelParams) -> float:
    """e = (p-1)Q/(s p^2), the power of 1/delta in the sup bound."""
    return (params.p - 1.0) * params.Q / (params.s * params.p ** 2)


def _c_delta(sup: float, T: float, M: float, delta: float, e: float) -> float:
    excess = sup - delta * T
    if excess <= 0:
        return 0.0
    if M <= 0:
        return math.inf
    return excess * delta ** e / M


def check_boundedness(u: GridFunction, xi0, r: float, params: KernelParams, deltas=None, f=None,
                      certify=None) -> list[EstimateReport]:
    """Sweep of the minimal c(delta) in sup_{B_r/2} u <= delta Tail(u_+; r/2) + c delta^{-e} (mean_{B_r} u_+^p)^{1/p}.

    e = (p-1)Q/(s p^2).  One report per delta; ``fitted_c`` is c(delta).
    """
    grid = u.grid
    deltas = np.round(np.arange(1, 11) / 10.0, 12) if deltas is None else np.asarray(deltas, dtype=float)
    if np.any(deltas <= 0) or np.any(deltas > 1):
        raise InputError("delta must lie in (0, 1]")
    half = _ball(grid, xi0, r / 2.0, params)
    if not half.any():
        raise InputError("B_(r/2) contains no grid cells; refine the grid")
    inside = _ball(grid, xi0, r, params)
    p = params.p
    up = np.maximum(u.values, 0.0)
    sup = float(np.max(u.values[half]))
    pos = GridFunction(grid, up, u.omega_mask, _positive_part(u.exterior))
    T = tail(pos, xi0, r / 2.0, params).value
    M = float(np.mean(up[inside] ** p)) ** (1.0 / p)
    e = _bounded_exponent(params)
    cert = None
    if certify is not False:
        cert = certify if isinstance(certify, tuple) else certify_subsolution(u, f, params)
    out = []
    for dl in deltas:
        dl = float(dl)
        rep = EstimateReport(
            "boundedness",
            {"center": _coords(xi0).tolist(), "r": r, "delta": dl, "p": p, "s": params.s, "n": params.n,
             "resolution": list(grid.spec.resolution)},
            sup, {"rhs_tail_term": dl * T, "rhs_mean_term": dl ** (-e) * M},
            _c_delta(sup, T, M, dl, e),
            lhs_terms={"lhs_sup": sup},
            extra={"tail_u_plus": T, "mean_u_plus_p": M, "exponent": e},
        )
        if cert is not None:
            _certify(rep, u, f, params, cert)
        out.append(rep)
    return out


def boundedness_closed_form(c: float, delta, params: KernelParams):
    """c(delta) for u = c > 0 everywhere: Tail = c (Q|B_1|/(sp))^{1/(p-1)}, mean term = c."""
    T0 = (params.Q * gauge_ball_volume(params.n) / params.sp) ** (1.0 / (params.p - 1.0))
    e = _bounded_exponent(params)
    delta = np.asarray(delta, dtype=float)
    return np.maximum(0.0, 1.0 - delta * T0) * delta ** e, c * T0


# De Giorgi iteration -----------------------------------------------------------------------


def recursion_threshold(M: float, C: float, beta: float) -> float:
    """x_0 threshold M^{-1/beta} C^{-1/beta^2} for x_{j+1} = M C^j x_j^{1+beta}."""
    return M ** (-1.0 / beta) * C ** (-1.0 / beta ** 2)


@dataclass(frozen=True)
class DeGiorgiSchedule:
    """Radii, levels and constants of the level-set iteration on B_r(xi0).

    r_j = (1 + 2^{-j}) r/2,  k_j = k + (1 - 2^{-j}) k_tilde, and the tilde
    quantities are midpoints.  In the subcritical case sp < Q the iteration
    exponent is beta = sp/(Q-sp) with Sobolev exponent p* = Qp/(Q-sp); when
    sp = Q the embedding W^{s,p} -> W^{s1,p} is used with a Sobolev exponent q
    in (p, p1*), p1* = Qp/(Q - s1 p), and beta = q/p - 1.
    """

    r: float
    center: np.ndarray
    k: float
    k_tilde: float
    p: float
    s: float
    Q: int
    delta: float
    c: float
    f_sup: float
    branch: str
    pstar: float  # Sobolev exponent used (p* or q)
    beta: float
    C: float
    c_bar: float
    s1: float | None = None

    def __post_init__(self):
        if not self.beta > 0:
            raise InputError("beta must be positive")
        if not self.r > 0:
            raise InputError("r must be positive")

    @classmethod
    def build(cls, params: KernelParams, r: float, center, k: float = 0.0, delta: float = 1.0, c: float = 1.0,
              f_sup: float = 0.0, k_tilde: float = 1.0, q: float | None = None, s1: float | None = None):
        p, s, Q, sp = params.p, params.s, params.Q, params.sp
        if not 0 < delta <= 1:
            raise InputError("delta must lie in (0, 1]")
        if sp < Q and not math.isclose(sp, Q):
            branch = "subcritical"
            pstar = Q * p / (Q - sp)
            beta = pstar / p - 1.0
            C = 2.0 ** (sp / (Q - sp) + Q * (Q + sp + p - 1.0) / (p * (Q - sp)))
            s1 = None
        elif math.isclose(sp, Q):
            branch = "borderline"
            s1 = s / 2.0 if s1 is None else s1
            if not 0 < s1 < s:
                raise InputError("s1 must lie in (0, s)")
            p1 = Q * p / (Q - s1 * p)
            pstar = 0.5 * (p + p1) if q is None else q
            if not p < pstar < p1:
                raise InputError(f"q must lie in (p, p1*) = ({p}, {p1})")
            beta = pstar / p - 1.0
            C = 2.0 ** (pstar * (Q + sp + p - 1.0) / p ** 2 + (pstar - p) / p)
        else:
            raise RegimeError("sp > Q is handled by the Morrey embedding, not by this iteration")
        e = pstar / p ** 2
        c_bar = c ** e * (delta ** (p - 1.0) * (1.0 + r ** sp * f_sup) + 1.0) ** e * 2.0 ** (2.0 * (pstar - p) / p)
        return cls(r, _coords(center), k, k_tilde, p, s, Q, delta, c, f_sup, branch, pstar, beta, C, c_bar, s1)

    def radius(self, j):
        return (1.0 + 2.0 ** (-np.asarray(j, dtype=float))) * self.r / 2.0

    def radius_tilde(self, j):
        return 0.5 * (self.radius(j) + self.radius(np.asarray(j) + 1))

    def level(self, j):
        return self.k + (1.0 - 2.0 ** (-np.asarray(j, dtype=float))) * self.k_tilde

    def level_tilde(self, j):
        return 0.5 * (self.level(j) + self.level(np.asarray(j) + 1))

    @property
    def delta_exponent(self) -> float:
        """Power of delta multiplying the recursion."""
        return self.pstar * (1.0 - self.p) / self.p ** 2

    @property
    def M(self) -> float:
        return self.delta ** self.delta_exponent * self.c_bar

    @property
    def threshold(self) -> float:
        """Largest A_0/k_tilde for which the recursion drives A_j to zero."""
        return recursion_threshold(self.M, self.C, self.beta)

    @property
    def H(self) -> float:
        return self.c_bar ** (1.0 / self.beta) * self.C ** (1.0 / self.beta ** 2)

    @property
    def ktilde_exponent(self) -> float:
        """Power of delta in front of H A_0 in the choice of k_tilde."""
        if self.branch == "subcritical":
            return -(self.p - 1.0) * self.Q / (self.s * self.p ** 2)
        return -(self.p - 1.0) * self.pstar / (self.p * (self.pstar - self.p))

    def with_k_tilde(self, k_tilde: float) -> "DeGiorgiSchedule":
        from dataclasses import replace

        return replace(self, k_tilde=float(k_tilde))


@dataclass
class DeGiorgiRun:
    A: np.ndarray  # A_j (not normalised)
    converged: bool
    steps: int
    threshold_ratio: float  # (A_0/k_tilde) / threshold
    diverged: bool = False


def degiorgi_iterate(A0: float, schedule: DeGiorgiSchedule, max_steps: int = 200, zero: float = 1e-12) -> DeGiorgiRun:
    """A_{j+1}/k~ = M C^j (A_j/k~)^{1+beta}, run in log space.

    Converged iff A_j < ``zero`` within ``max_steps`` steps.
    """
    if A0 < 0:
        raise InputError("A_0 must be nonnegative")
    kt = schedule.k_tilde
    if not kt > 0:
        raise InputError("k_tilde must be positive")
    x0 = A0 / kt
    ratio = x0 / schedule.threshold
    if A0 == 0:
        return DeGiorgiRun(np.zeros(1), True, 0, 0.0)
    logM, logC, b1 = math.log(schedule.M), math.log(schedule.C), 1.0 + schedule.beta
    logk = math.log(kt)
    lz = math.log(zero)
    y = math.log(x0)
    seq = [y]
    converged = diverged = False
    for j in range(max_steps):
        if y + logk < lz:
            converged = True
            break
        y = logM + j * logC + b1 * y
        seq.append(y)
        if y > 700.0:
            diverged = True
            break
    else:
        converged = y + logk < lz
    A = np.exp(np.clip(np.array(seq) + logk, -745.0, 709.0))
    return DeGiorgiRun(A, converged, len(seq) - 1, ratio, diverged)


def degiorgi_pipeline(u: GridFunction, xi0, r: float, params: KernelParams, k: float = 0.0, delta: float = 1.0,
                      c: float = 1.0, f=None, q=None, s1=None) -> dict:
    """Level-set iteration on measured data.

    A_0 = (mean_{B_r} (u-k)_+^p)^{1/p} and k~ = delta Tail((u-k)_+; r/2) + delta^{..} H A_0.
    Returns the run, the schedule and the measured bound check sup_{B_r/2} u <= k + k~.
    """
    grid = u.grid
    p = params.p
    inside = _ball(grid, xi0, r, params)
    half = _ball(grid, xi0, r / 2.0, params)
    if not half.any():
        raise InputError("B_(r/2) contains no grid cells; refine the grid")
    w = np.maximum(u.values - k, 0.0)
    A0 = float(np.mean(w[inside] ** p)) ** (1.0 / p)
    pos = GridFunction(grid, w, u.omega_mask, _positive_part(u.exterior, k))
    T = tail(pos, xi0, r / 2.0, params).value
    f_sup = float(np.max(np.abs(_cell_values(grid, f)[inside])))
    sched = DeGiorgiSchedule.build(params, r, xi0, k, delta, c, f_sup, 1.0, q, s1)
    kt = delta * T + delta ** sched.ktilde_exponent * sched.H * A0
    sup = float(np.max(u.values[half]))
    if kt <= 0:
        # u <= k on B_r and no tail: nothing to iterate
        run = DeGiorgiRun(np.zeros(1), True, 0, 0.0)
        sched = sched.with_k_tilde(1.0)
    else:
        sched = sched.with_k_tilde(kt)
        run = degiorgi_iterate(A0, sched)
    return {"schedule": sched, "run": run, "A0": A0, "tail": T, "k_tilde": kt, "sup_half": sup,
            "bound": k + kt, "bound_holds": bool(sup <= k + kt)}


# Hoelder exponent ------------------------------------------------------------------------


@dataclass
class HolderFit:
    alpha: float  # nan when flat
    flat: bool
    radii: np.ndarray
    osc: np.ndarray
    cells: np.ndarray
    used: np.ndarray
    admissible_bound: float | None
    monotone: bool
    warnings: list = field(default_factory=list)

    def table(self) -> list[dict]:
        return [{"rho": float(r), "cells": int(c), "osc": float(o), "used": bool(u)}
                for r, c, o, u in zip(self.radii, self.cells, self.osc, self.used)]


def fit_holder_exponent(u: GridFunction, xi0, radii, params: KernelParams | None = None,
                        min_cells: int = 8) -> HolderFit:
    """Least-squares slope of log osc_{B_rho} u against log rho.

    Balls with fewer than ``min_cells`` cells are excluded with a warning.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size < 2 or np.any(np.diff(radii) >= 0) or np.any(radii <= 0):
        raise InputError("radii must be a positive decreasing sequence of length >= 2")
    norm = params.norm if params is not None else None
    c = _coords(xi0)
    dist = pseudo_distance(u.grid.centers, c) if norm is None else pseudo_distance(u.grid.centers, c, norm)
    osc = np.zeros(radii.size)
    cells = np.zeros(radii.size, dtype=int)
    warns = []
    for i, rho in enumerate(radii):
        m = dist < rho
        cells[i] = int(m.sum())
        if cells[i]:
            vals = u.values[m]
            osc[i] = float(vals.max() - vals.min())
    resolved = cells >= min_cells
    if not resolved.all():
        msg = f"{int((~resolved).sum())} ball(s) with fewer than {min_cells} cells excluded from the fit"
        log.warning(msg)
        warns.append(msg)
    monotone = bool(np.all(np.diff(osc[resolved]) <= 0))
    used = resolved & (osc > 0)
    bound = params.sp / (params.p - 1.0) if params is not None else None
    if not used.any():
        return HolderFit(math.nan, True, radii, osc, cells, used, bound, monotone, warns)
    if used.sum() < 2:
        warns.append("fewer than two usable radii")
        return HolderFit(math.nan, False, radii, osc, cells, used, bound, monotone, warns)
    slope = float(np.polyfit(np.log(radii[used]), np.log(osc[used]), 1)[0])
    return HolderFit(slope, False, radii, osc, cells, used, bound, monotone, warns)


# Oscillation ledger -------------------------------------------------------------------------


@dataclass
class OscillationLedger:
    sigma: float
    alpha: float
    omega0: float
    d: float
    radii: np.ndarray
    cells: np.ndarray
    osc: np.ndarray
    predicted: np.ndarray
    density_upper: np.ndarray  # |2B_{j+1} & {u >= inf_{B_j} u + omega_j/2}| / |2B_{j+1}|
    density_lower: np.ndarray  # same with <=
    branch: list
    sigma_clamped: bool
    nu_star: float
    warnings: list = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for j in range(self.radii.size):
            out.append({"j": j, "r_j": float(self.radii[j]), "cells": int(self.cells[j]),
                        "osc": float(self.osc[j]), "omega": float(self.predicted[j]),
                        "holds": bool(self.osc[j] <= self.predicted[j]),
                        "density_upper": float(self.density_upper[j]), "density_lower": float(self.density_lower[j]),
                        "branch": self.branch[j]})
        return out


def oscillation_ledger(u: GridFunction, xi0, r: float, params: KernelParams, sigma: float | None = None,
                       alpha: float | None = None, c: float = 1.0, c_log: float = 1.0, f=None,
                       steps: int = 4, min_cells: int = 8) -> OscillationLedger:
    """Measured oscillation on B_j = B_{sigma^j r/2}(xi0) against omega(r_j) = (r_j/r)^alpha omega(r).

    omega(r)/2 = Tail(u; xi0, r/2) + c (mean_{B_r} u_+^p)^{1/p}.  Without an
    explicit sigma the default is min{1/(4 c~), exp(-c_log/nu*)}, clamped at
    1e-4 (flagged).  Without alpha, the largest alpha < sp/(p-1) with
    sigma^alpha >= 1 - d, d = sigma^{sp/(p-1)}, is used.
    """
    grid = u.grid
    p, s, Q, sp = params.p, params.s, params.Q, params.sp
    ct = params.triangle_constant
    fv = _cell_values(grid, f)
    inside = _ball(grid, xi0, r, params)
    f_sup = float(np.max(np.abs(fv[inside]))) if inside.any() else 0.0
    warns = []
    if sp < Q:
        pstar = Q * p / (Q - sp)
        beta = sp / (Q - sp)
        log_nu = (-math.log(c) / beta - pstar / (p * beta) * math.log1p(r ** sp * f_sup)
                  - (Q + (2 + s) * p) * pstar / (p * beta ** 2) * math.log(2.0))
        nu_star = math.exp(log_nu)
    else:
        nu_star = math.nan
    clamped = False
    if sigma is None:
        cand = 1.0 / (4.0 * ct)
        if np.isfinite(nu_star):
            cand = min(cand, math.exp(-c_log / nu_star) if nu_star > 0 else 0.0)
        if cand < 1e-4:
            cand = 1e-4
            clamped = True
            warns.append("sigma clamped at 1e-4")
        sigma = cand
    if not 0 < sigma <= 0.25:
        raise InputError("sigma must lie in (0, 1/4]")
    d = sigma ** (sp / (p - 1.0))
    bound = sp / (p - 1.0)
    if alpha is None:
        alpha = min(math.log1p(-d) / math.log(sigma), 0.999 * bound)
    if not 0 < alpha < bound:
        raise InputError(f"alpha must lie in (0, sp/(p-1)) = (0, {bound})")
    T = tail(u, xi0, r / 2.0, params).value
    mean = float(np.mean(np.maximum(u.values[inside], 0.0) ** p)) ** (1.0 / p)
    omega0 = 2.0 * (T + c * mean)
    dist = pseudo_distance(grid.centers, _coords(xi0), params.norm)
    radii = sigma ** np.arange(steps + 1) * r / 2.0
    cells = np.zeros(radii.size, dtype=int)
    osc = np.full(radii.size, np.nan)
    dens_up = np.full(radii.size, np.nan)
    dens_lo = np.full(radii.size, np.nan)
    branch = []
    predicted = (radii / r) ** alpha * omega0
    for j, rj in enumerate(radii):
        m = dist < rj
        cells[j] = int(m.sum())
        if cells[j] < min_cells:
            branch.append("unresolved")
            continue
        vals = u.values[m]
        osc[j] = float(vals.max() - vals.min())
        m2 = dist < 2.0 * sigma * rj
        if m2.sum() < min_cells:
            branch.append("unresolved")
            continue
        level = float(vals.min()) + predicted[j] / 2.0
        v2 = u.values[m2]
        dens_up[j] = float(np.mean(v2 >= level))
        dens_lo[j] = float(np.mean(v2 <= level))
        branch.append("upper" if dens_up[j] >= 0.5 else "lower")
    if np.any(cells < min_cells):
        warns.append("some balls are not resolved by the grid")
    return OscillationLedger(sigma, alpha, omega0, d, radii, cells, osc, predicted, dens_up, dens_lo, branch,
                             clamped, nu_star, warns)


# Kernel tail scaling -------------------------------------------------------------------------


@dataclass
class TailScalingReport:
    gammas: np.ndarray
    radii: np.ndarray
    values: np.ndarray  # (len(gammas), len(radii))
    slopes: np.ndarray
    closed_form: np.ndarray
    doubling: np.ndarray  # I(2r)/I(r) for each gamma and r
    passed: bool

    def to_dict(self) -> dict:
        return {"gammas": self.gammas.tolist(), "radii": self.radii.tolist(), "values": self.values.tolist(),
                "slopes": self.slopes.tolist(), "closed_form": self.closed_form.tolist(),
                "doubling": self.doubling.tolist(), "pass": self.passed}


def check_kernel_tail_scaling(gammas, radii, params: KernelParams, slope_tol: float = 0.02) -> TailScalingReport:
    """Fit the exponent of r -> int_{outside B_r} |xi|^{-Q-gamma} for each gamma (expected -gamma)."""
    gammas = np.asarray(gammas, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if np.any(gammas <= 0) or np.any(radii <= 0):
        raise InputError("gamma and r must be positive")
    vals = np.array([[kernel_integral_outside_ball(r, g, params) for r in radii] for g in gammas])
    dbl = np.array([[kernel_integral_outside_ball(2 * r, g, params) for r in radii] for g in gammas]) / vals
    closed = np.array([[params.Q * gauge_ball_volume(params.n) / g * r ** (-g) for r in radii] for g in gammas])
    if radii.size >= 2:
        slopes = np.array([np.polyfit(np.log(radii), np.log(v), 1)[0] for v in vals])
    else:
        slopes = np.log(dbl[:, 0]) / math.log(2.0)
    ok = bool(np.all(np.abs(slopes + gammas) <= slope_tol))
    return TailScalingReport(gammas, radii, vals, slopes, closed, dbl, ok)
