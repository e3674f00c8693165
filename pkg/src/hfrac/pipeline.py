"""From an :class:`ExperimentConfig` to a solved problem and a list of reports."""
from __future__ import annotations

import logging
import math

import numpy as np

from .config import ExperimentConfig
from .errors import InputError
from .expr import Expr, constant, gauge_power, smooth_bump, zero
from .grid import GridSpec, build_grid, grid_function_from_csv
from .hgroup import BOX_NORM, GAUGE, pseudo_distance
from .kernelops import KernelParams
from .solver import DirichletProblem, SolverConfig, SolveResult, solve_energy_descent, solve_linear_p2
from .verifier import (CutoffFunction, EstimateReport, certify_subsolution, check_boundedness, check_caccioppoli,
                       check_kernel_tail_scaling, check_lemma_gamma, check_log_corollary, check_log_lemma,
                       degiorgi_pipeline, fit_holder_exponent, oscillation_ledger)

log = logging.getLogger(__name__)


def kernel_params(cfg: ExperimentConfig) -> KernelParams:
    norm = GAUGE if cfg["kernel.norm"] == "gauge" else BOX_NORM
    return KernelParams(n=cfg["kernel.n"], s=cfg["kernel.s"], p=cfg["kernel.p"], norm=norm,
                        subcell_level=cfg["kernel.subcell_level"])


def _center(cfg: ExperimentConfig, key: str) -> np.ndarray:
    v = cfg[key]
    if v is None:
        return np.zeros(2 * cfg["kernel.n"] + 1)
    return np.asarray(v, dtype=float)


def datum(cfg: ExperimentConfig) -> Expr:
    kind = cfg["g.kind"]
    gc = cfg["g.center"]
    if kind == "zero":
        return zero()
    if kind == "constant":
        return constant(cfg["g.value"])
    if kind == "gauge_power":
        return gauge_power(cfg["g.beta"], gc, cfg["g.value"])
    if kind == "smooth_bump":
        return smooth_bump(_center(cfg, "g.center"), cfg["g.radius"], cfg["g.value"])
    return Expr(cfg["g.expr"])


def grid_spec(cfg: ExperimentConfig) -> GridSpec:
    return GridSpec.around_ball(_center(cfg, "omega.center"), cfg["omega.radius"], cfg["grid.resolution"],
                                cfg["kernel.n"], cfg["grid.collar"])


def source(cfg: ExperimentConfig, spec: GridSpec):
    kind = cfg["f.kind"]
    if kind == "zero":
        return None
    if kind == "constant":
        return cfg["f.value"]
    if kind == "expr":
        return Expr(cfg["f.expr"])
    try:
        with open(cfg["f.file"], encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read f.file: {exc}") from None
    return np.array(grid_function_from_csv(text, spec).values)


def build_problem(cfg: ExperimentConfig) -> DirichletProblem:
    params = kernel_params(cfg)
    spec = grid_spec(cfg)
    grid = build_grid(spec)
    norm = GAUGE if cfg["omega.shape"] == "ball" else BOX_NORM
    mask = pseudo_distance(grid.centers, _center(cfg, "omega.center"), norm) < cfg["omega.radius"]
    return DirichletProblem(params, grid, mask, datum(cfg), source(cfg, spec))


def solver_config(cfg: ExperimentConfig) -> SolverConfig:
    return SolverConfig(method=cfg["solver.method"], tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"],
                        linear_tol=cfg["solver.linear_tol"])


def solve(cfg: ExperimentConfig, problem: DirichletProblem | None = None) -> tuple[DirichletProblem, SolveResult]:
    """Energy descent; for p = 2 the result is cross-checked against the linear solve."""
    problem = problem or build_problem(cfg)
    res = solve_energy_descent(problem, solver_config(cfg))
    if problem.params.p == 2.0:
        lin = solve_linear_p2(problem, cfg["solver.linear_tol"])
        diff = float(np.max(np.abs(lin.u.values - res.u.values)))
        res.extra.update({"oracle_checked": True, "oracle_sup_diff": diff, "oracle_iterations": lin.iterations})
    else:
        res.extra["oracle_checked"] = False
    return problem, res


# Checks ---------------------------------------------------------------------------------------


def _lemma_gamma_report(cfg: ExperimentConfig) -> list[EstimateReport]:
    rng = np.random.default_rng(cfg["seed"])
    m = cfg["checks.lemma_samples"]
    out = []
    for p in (1.5, 2.0, 3.0, 5.0):
        a = rng.uniform(-10, 10, m)
        b = rng.uniform(-10, 10, m)
        eps = 1.0 - rng.uniform(0.0, 1.0, m)  # (0, 1]
        ok, slack = check_lemma_gamma(a, b, eps, p)
        lhs = np.abs(a) ** p
        ratio = lhs / (lhs + slack)  # LHS / RHS; <= 1 where the inequality holds
        bad = int(np.sum(~ok))
        i = int(np.argmax(ratio))
        out.append(EstimateReport("lemma_gamma", {"p": p, "samples": m}, float(bad), {}, float(ratio[i]),
                                  extra={"violations": bad, "worst": {"a": a[i], "b": b[i], "eps": eps[i]}},
                                  ok=bad == 0))
    return out


def _label(rep: EstimateReport) -> str:
    keys = [k for k in ("k", "d", "delta", "a", "p", "gamma", "sigma") if k in rep.instance]
    return ";".join(f"{k}={rep.instance[k]:.6g}" for k in keys)


def run_checks(cfg: ExperimentConfig, problem: DirichletProblem | None, result: SolveResult | None,
               names=None, u=None) -> list[EstimateReport]:
    """Evaluate the configured checks on the solution (``u`` overrides ``result.u``)."""
    names = tuple(cfg["checks.run"] if names is None else names)
    params = kernel_params(cfg)
    if u is None and result is not None:
        u = result.u
    needs_u = [c for c in names if c not in ("lemma_gamma", "tail_scaling")]
    if needs_u and u is None:
        raise InputError("checks need a solution")
    R_omega = cfg["omega.radius"]
    xi0 = _center(cfg, "checks.center") if cfg["checks.center"] is not None else _center(cfg, "omega.center")
    r = cfg["checks.r"] or R_omega / 2.0
    R = cfg["checks.R"] or R_omega
    f = problem.f if problem is not None else None
    cert = None
    if any(c in ("caccioppoli", "boundedness") for c in names):
        cert = certify_subsolution(u, f, params, seed=cfg["seed"])
    reports: list[EstimateReport] = []
    for name in names:
        if name == "lemma_gamma":
            reports += _lemma_gamma_report(cfg)
        elif name == "caccioppoli":
            phi = CutoffFunction.build(xi0, cfg["checks.cutoff_inner"] * r, cfg["checks.cutoff_outer"] * r,
                                       seed=cfg["seed"])
            reports.append(check_caccioppoli(u, cfg["checks.k"], phi, xi0, r, params, f, certify=cert))
        elif name == "log_lemma":
            for d in cfg["checks.d"]:
                reports.append(check_log_lemma(u, d, min(r, R / 2.0), R, params, f, xi0))
        elif name == "log_corollary":
            rr = min(r, R / 2.0)
            inside = pseudo_distance(u.grid.centers, xi0, params.norm) < rr
            a = float(np.median(u.values[inside])) if inside.any() else 1.0
            a = a if a > 0 else 1.0
            for d in cfg["checks.d"]:
                reports.append(check_log_corollary(u, a, cfg["checks.b"], d, rr, R, params, f, xi0))
        elif name == "boundedness":
            reports += check_boundedness(u, xi0, r, params, cfg["checks.deltas"], f, certify=cert)
        elif name == "degiorgi":
            res = degiorgi_pipeline(u, xi0, r, params, cfg["checks.k"], 1.0, 1.0, f)
            run = res["run"]
            reports.append(EstimateReport(
                "degiorgi", {"r": r, "k": cfg["checks.k"], "p": params.p, "s": params.s,
                             "resolution": list(u.grid.spec.resolution)},
                res["sup_half"], {"rhs_bound": res["bound"]}, run.threshold_ratio,
                extra={"converged": run.converged, "steps": run.steps, "A0": res["A0"], "tail": res["tail"],
                       "k_tilde": res["k_tilde"], "bound_holds": res["bound_holds"],
                       "branch": res["schedule"].branch, "beta": res["schedule"].beta},
                ok=run.converged and res["bound_holds"]))
        elif name == "holder_fit":
            radii = cfg["checks.radii"] or tuple(r * 0.75 ** np.arange(6))
            fit = fit_holder_exponent(u, xi0, radii, params)
            ok = fit.flat or (np.isfinite(fit.alpha) and fit.alpha > 0)
            reports.append(EstimateReport(
                "holder_fit", {"r": r, "p": params.p, "s": params.s, "resolution": list(u.grid.spec.resolution)},
                float(np.nanmax(fit.osc)), {}, fit.alpha,
                extra={"flat": fit.flat, "monotone": fit.monotone, "admissible_bound": fit.admissible_bound,
                       "table": fit.table()}, warnings=fit.warnings, ok=bool(ok)))
        elif name == "oscillation":
            led = oscillation_ledger(u, xi0, r, params, sigma=cfg["checks.sigma"], f=f, steps=cfg["checks.steps"])
            rows = led.rows()
            ratios = [x["osc"] / x["omega"] for x in rows if np.isfinite(x["osc"]) and x["omega"] > 0]
            worst = max(ratios) if ratios else math.nan
            reports.append(EstimateReport(
                "oscillation", {"r": r, "sigma": led.sigma, "p": params.p, "s": params.s,
                                "resolution": list(u.grid.spec.resolution)},
                worst, {}, worst,
                extra={"alpha": led.alpha, "omega0": led.omega0, "d": led.d, "rows": rows,
                       "sigma_clamped": led.sigma_clamped},
                warnings=led.warnings, ok=bool(ratios) and all(x <= 1.0 for x in ratios)))
        elif name == "tail_scaling":
            rep = check_kernel_tail_scaling(cfg["checks.gammas"], cfg["checks.tail_radii"], params)
            for g, sl in zip(rep.gammas, rep.slopes):
                reports.append(EstimateReport("tail_scaling", {"gamma": float(g)}, float(sl), {"expected": -float(g)},
                                              abs(float(sl) + float(g)), extra=rep.to_dict(),
                                              ok=abs(sl + g) <= 0.02))
        else:
            raise InputError(f"unknown check {name!r}")
    return reports


def report_label(rep: EstimateReport) -> str:
    return _label(rep)
