"""Fixed instance batches shared by the experiment scripts and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .cli import _rows_csv
from .expr import smooth_bump, zero
from .kernelops import KernelParams
from .solver import DirichletProblem, SolverConfig, solve_energy_descent
from .verifier import CutoffFunction, check_caccioppoli, certify_subsolution

P_VALUES = (1.5, 2.0, 3.0)
S_VALUES = (0.3, 0.6, 0.9)


@dataclass(frozen=True)
class Instance:
    name: str
    p: float
    s: float
    datum: str  # "bump" (g = bump, f = 1/2) or "source" (g = 0, f = 1)
    k: float = 0.0

    def problem(self, resolution: int, collar: float = 1.0) -> DirichletProblem:
        params = KernelParams(s=self.s, p=self.p)
        if self.datum == "bump":
            g, f = smooth_bump([0.8, 0.0, 0.0], 1.2), 0.5
        else:
            g, f = zero(), 1.0
        return DirichletProblem.on_ball(params, [0.0, 0.0, 0.0], 1.0, resolution, g, f=f, collar=collar)


def caccioppoli_instances() -> list[Instance]:
    """20 instances: two data for each (p, s), plus two extra truncation levels."""
    out = []
    for p in P_VALUES:
        for s in S_VALUES:
            out.append(Instance(f"bump_p{p}_s{s}", p, s, "bump"))
            out.append(Instance(f"source_p{p}_s{s}", p, s, "source"))
    out.append(Instance("bump_p2.0_s0.6_k0.05", 2.0, 0.6, "bump", 0.05))
    out.append(Instance("bump_p3.0_s0.6_k0.05", 3.0, 0.6, "bump", 0.05))
    return out


def caccioppoli_batch(resolutions=(16, 24), r: float = 0.8, seed: int = 0, tol: float = 1e-6,
                      instances=None, progress=None) -> tuple[str, list[dict]]:
    """Solve every instance at every resolution and fit the Caccioppoli constant.

    Returns the batch CSV (``instance,p,s,k,resolution,fitted_c,pass``) and the
    per-row records.  Solutions are reused across instances that share data.
    """
    instances = instances or caccioppoli_instances()
    phi = CutoffFunction.build([0.0, 0.0, 0.0], 0.5 * r, 0.9 * r, seed=seed)
    solved = {}
    records = []
    for res in resolutions:
        for inst in instances:
            key = (inst.p, inst.s, inst.datum, res)
            t0 = time.perf_counter()
            if key not in solved:
                prob = inst.problem(res)
                sol = solve_energy_descent(prob, SolverConfig(tol=tol))
                cert = certify_subsolution(sol.u, prob.f, prob.params, seed=seed)
                solved[key] = (prob, sol, cert)
            prob, sol, cert = solved[key]
            rep = check_caccioppoli(sol.u, inst.k, phi, [0.0, 0.0, 0.0], r, prob.params, prob.f, certify=cert)
            rec = {"instance": inst.name, "p": inst.p, "s": inst.s, "k": inst.k, "resolution": res,
                   "fitted_c": rep.fitted_c, "pass": rep.passed, "converged": sol.converged,
                   "iterations": sol.iterations, "certified": rep.extra["certified"],
                   "seconds": time.perf_counter() - t0}
            records.append(rec)
            if progress:
                progress(rec)
    rows = [[r_["instance"], r_["p"], r_["s"], r_["k"], r_["resolution"], r_["fitted_c"], r_["pass"]]
            for r_ in records]
    return _rows_csv(["instance", "p", "s", "k", "resolution", "fitted_c", "pass"], rows), records


def stability_ratios(records: list[dict]) -> dict:
    """max/min of the fitted constant across resolutions, per instance."""
    by = {}
    for r in records:
        by.setdefault(r["instance"], []).append(r["fitted_c"])
    out = {}
    for name, vals in by.items():
        v = np.asarray(vals, dtype=float)
        out[name] = float(v.max() / v.min()) if np.all(v > 0) and np.all(np.isfinite(v)) else float("inf")
    return out
