"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The numerically heavy criteria (7 and 12) share the Caccioppoli batch from
:mod:`hfrac.studies`; the other solved instances are cached per module.
"""
import math
import time

import numpy as np
import pytest

from hfrac.exterior import gauge_ball_volume
from hfrac.expr import constant, gauge_power, smooth_bump
from hfrac.grid import GridFunction, GridSpec, build_grid
from hfrac.hgroup import BOX_NORM, GAUGE, dilate, gauge_norm, group_inv, group_mul, pseudo_distance
from hfrac.kernelops import (KernelParams, clear_caches, energy_gradient, fractional_energy, gagliardo_seminorm,
                             kernel_integral_outside_ball)
from hfrac.solver import DirichletProblem, SolverConfig, solve_energy_descent, solve_linear_p2
from hfrac.studies import Instance, caccioppoli_batch, stability_ratios
from hfrac.verifier import (CutoffFunction, DeGiorgiSchedule, boundedness_closed_form, check_boundedness,
                            check_caccioppoli, check_lemma_gamma, check_log_corollary, check_log_lemma,
                            degiorgi_iterate, degiorgi_pipeline, fit_holder_exponent, recursion_threshold)

ORIGIN = np.zeros(3)
_SOLVED = {}
_BATCH = {}


def solved(p, s, datum, res):
    key = (p, s, datum, res)
    if key not in _SOLVED:
        pr = Instance("acc", p, s, datum).problem(res, collar=0.5)
        _SOLVED[key] = (pr, solve_energy_descent(pr).u)
    return _SOLVED[key]


def const_function(c, res, collar=1.0):
    grid = build_grid(GridSpec.around_ball(ORIGIN, 1.0, res, collar=collar))
    mask = pseudo_distance(grid.centers, ORIGIN) < 1.0
    return GridFunction(grid, np.full(grid.num_cells, float(c)), mask, constant(c))


def bump_function(R, res, collar):
    grid = build_grid(GridSpec.around_ball(ORIGIN, R, res, collar=collar))
    e = smooth_bump(ORIGIN, R)
    return GridFunction(grid, e(grid.centers), np.zeros(grid.num_cells, bool), e)


def test_c01_group_and_norm(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    m = 10_000
    a, b, c = rng.normal(size=(3, m, 3)) * rng.lognormal(size=(3, m, 1))
    lam = rng.lognormal(size=m)

    def rel(x, y):
        return float(np.max(np.abs(x - y) / np.maximum(1.0, np.abs(y))))

    errs = {
        "assoc": rel(group_mul(group_mul(a, b), c), group_mul(a, group_mul(b, c))),
        "identity": rel(group_mul(a, np.zeros(3)), a),
        "inverse": float(np.max(np.abs(group_mul(a, group_inv(a))))),
        "dilation": rel(dilate(lam, group_mul(a, b)), group_mul(dilate(lam, a), dilate(lam, b))),
        "homogeneity": rel(gauge_norm(dilate(lam, a)), lam * gauge_norm(a)),
        "symmetry": rel(gauge_norm(group_inv(a)), gauge_norm(a)),
    }
    x, y = rng.normal(size=(2, 100_000, 3)) * rng.lognormal(size=(2, 100_000, 1))
    violations = sum(int(np.sum(N(group_mul(x, y)) > (N(x) + N(y)) * (1 + 1e-12))) for N in (GAUGE, BOX_NORM))
    dt = time.perf_counter() - t0
    ok = max(errs.values()) <= 1e-12 and violations == 0 and dt < 10
    acceptance(1, ok, f"max rel err {max(errs.values()):.1e}, triangle violations {violations}, {dt:.1f}s")
    assert ok


def test_c02_kernel_integral(acceptance):
    t0 = time.perf_counter()
    P = KernelParams()
    worst = worst_d = 0.0
    for gamma in (0.5, 1.0, 2.0):
        for r in (0.5, 1.0, 2.0):
            exact = P.Q * gauge_ball_volume(1) / gamma * r ** (-gamma)
            val = kernel_integral_outside_ball(r, gamma, P)
            worst = max(worst, abs(val / exact - 1))
            ratio = kernel_integral_outside_ball(2 * r, gamma, P) / val
            worst_d = max(worst_d, abs(ratio / 2 ** -gamma - 1))
    dt = time.perf_counter() - t0
    ok = worst <= 0.02 and worst_d <= 0.01 and dt < 60
    acceptance(2, ok, f"max rel err {worst:.1e}, doubling {worst_d:.1e}, {dt:.1f}s")
    assert ok


def test_c03_dilation_law(acceptance):
    # [u o Phi_lam]^p for u = bump of radius 1 is the seminorm of the bump of radius 1/lam; it is
    # computed both on the dilated 24^3 grid and on an independent 23^3 grid with another collar
    t0 = time.perf_counter()
    P = KernelParams(s=0.5, p=2.0)
    base = gagliardo_seminorm(bump_function(1.0, 24, 0.5), P, exterior=True) ** P.p
    worst = 0.0
    for lam in (0.5, 2.0):
        want = lam ** (P.sp - P.Q) * base
        for res, collar in ((24, 0.5), (23, 0.6)):
            got = gagliardo_seminorm(bump_function(1 / lam, res, collar / lam), P, exterior=True) ** P.p
            worst = max(worst, abs(got / want - 1))
    dt = time.perf_counter() - t0
    ok = worst <= 0.02 and dt < 120
    acceptance(3, ok, f"max rel deviation {worst:.1e} (p=2, s=0.5), {dt:.1f}s")
    assert ok


def test_c04_solver_oracle(acceptance):
    t0 = time.perf_counter()
    pr = DirichletProblem.on_ball(KernelParams(s=0.5, p=2.0), ORIGIN, 1.0, 9, smooth_bump([0.8, 0, 0], 1.2),
                                  f=0.5, collar=1.0)
    lin = solve_linear_p2(pr, 1e-12)
    des = solve_energy_descent(pr, SolverConfig(tol=1e-8))
    diff = float(np.max(np.abs(lin.u.values - des.u.values)))
    dt = time.perf_counter() - t0
    ok = des.converged and diff <= 1e-6 and dt < 60
    acceptance(4, ok, f"sup difference {diff:.1e}, {dt:.1f}s")
    assert ok


def test_c05_gradient(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    grid = build_grid(GridSpec.around_ball(ORIGIN, 1.0, 9, collar=1.0))
    mask = pseudo_distance(grid.centers, ORIGIN) < 1.0
    e = smooth_bump([0.5, 0, 0], 1.2)
    worst = 0.0
    for p in (1.5, 2.0, 3.0):
        P = KernelParams(s=0.6, p=p)
        vals = e(grid.centers) + 0.1 * rng.normal(size=grid.num_cells) * mask
        u = GridFunction(grid, vals, mask, e)
        rows = np.flatnonzero(mask)
        grad = energy_gradient(u, 0.3, P)
        for j in rng.choice(rows.size, 10, replace=False):
            h = 1e-6
            up, dn = vals.copy(), vals.copy()
            up[rows[j]] += h
            dn[rows[j]] -= h
            fd = (fractional_energy(u.with_values(up), 0.3, P) - fractional_energy(u.with_values(dn), 0.3, P)) / (2 * h)
            worst = max(worst, abs(fd - grad[j]) / abs(grad[j]))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 60
    acceptance(5, ok, f"max rel err {worst:.1e}, {dt:.1f}s")
    assert ok


def test_c06_lemma_gamma(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    m = 1_000_000
    a, b = rng.uniform(-10, 10, (2, m))
    eps = 1.0 - rng.uniform(0, 1, m)
    p = rng.choice([1.5, 2.0, 3.0, 5.0], m)
    ok_mask, _ = check_lemma_gamma(a, b, eps, p)
    bad = int(np.sum(~ok_mask))
    per_p = ", ".join(f"p={q:g}: {int(np.sum(~ok_mask[p == q]))}" for q in (1.5, 2.0, 3.0, 5.0))
    dt = time.perf_counter() - t0
    ok = bad == 0 and dt < 30
    acceptance(6, ok, f"{bad} violations in {m} draws ({per_p}), {dt:.1f}s")
    assert ok


def _run_batch():
    if "first" not in _BATCH:
        t0 = time.perf_counter()
        csv, records = caccioppoli_batch()
        _BATCH["first"] = (csv, records, time.perf_counter() - t0)
    return _BATCH["first"]


def test_c07_caccioppoli(acceptance):
    phi = CutoffFunction.build(ORIGIN, 0.4, 0.72)
    ident = 0.0
    for p, s in ((1.5, 0.3), (2.0, 0.6), (3.0, 0.9)):
        rep = check_caccioppoli(const_function(1.3, 10), 0.3, phi, ORIGIN, 0.8, KernelParams(s=s, p=p),
                                certify=False)
        ident = max(ident, rep.fitted_c)
    csv, records, dt = _run_batch()
    ratios = stability_ratios(records)
    finite = all(np.isfinite(r["fitted_c"]) for r in records)
    worst = max(ratios, key=ratios.get)
    ok = ident <= 1 + 1e-10 and finite and len(ratios) == 20 and ratios[worst] <= 3 and dt < 1800
    acceptance(7, ok, f"identity c {ident:.3f}, {len(ratios)} instances, max/min {ratios[worst]:.2f} "
                      f"({worst}), {dt:.0f}s")
    assert ok


def test_c08_logarithmic(acceptance):
    t0 = time.perf_counter()
    cases = [(2.0, 0.3, "bump"), (2.0, 0.6, "bump"), (2.0, 0.9, "bump"), (3.0, 0.3, "bump"), (3.0, 0.6, "bump"),
             (3.0, 0.9, "bump"), (1.5, 0.3, "bump"), (1.5, 0.6, "bump"), (2.0, 0.5, "source"),
             (3.0, 0.5, "source")]
    worst = 0.0
    for p, s, datum in cases:
        pr, u = solved(p, s, datum, 15)
        a = float(np.median(u.values[pseudo_distance(u.grid.centers, ORIGIN) < 0.5]))
        for d in (0.01, 0.1, 1.0):
            lem = check_log_lemma(u, d, 0.5, 1.0, pr.params, pr.f)
            cor = check_log_corollary(u, a, math.e, d, 0.5, 1.0, pr.params, pr.f)
            worst = max(worst, lem.fitted_c, cor.fitted_c)
    zero = 0.0
    for d in (0.01, 0.1, 1.0):
        c = const_function(0.7, 15, 0.5)
        zero = max(zero, check_log_lemma(c, d, 0.5, 1.0, KernelParams()).lhs_terms["lhs_log"],
                   check_log_corollary(c, 0.7, math.e, d, 0.5, 1.0, KernelParams()).lhs)
    dt = time.perf_counter() - t0
    ok = np.isfinite(worst) and zero == 0.0 and dt < 1200
    acceptance(8, ok, f"{len(cases)} instances x 3 d, max fitted c {worst:.3g}, constant log term {zero}, {dt:.0f}s")
    assert ok


def test_c09_boundedness(acceptance):
    t0 = time.perf_counter()
    close = 0.0
    for p, s in ((2.0, 0.5), (3.0, 0.3)):
        P = KernelParams(s=s, p=p)
        deltas = [0.005, 0.01, 0.02]
        reps = check_boundedness(const_function(1.5, 12), ORIGIN, 2.0, P, deltas, certify=False)
        cd, T = boundedness_closed_form(1.5, deltas, P)
        close = max(close, abs(reps[0].extra["tail_u_plus"] / T - 1),
                    *(abs(r.fitted_c / w - 1) for r, w in zip(reps, cd)))
    deltas = np.round(np.arange(1, 11) / 10, 12)
    stable = finite = True
    worst = 1.0
    for p, s, datum in ((2.0, 0.5, "source"), (3.0, 0.6, "source"), (2.0, 0.5, "bump"), (1.5, 0.6, "source")):
        cs = []
        for res in (15, 21):
            pr, u = solved(p, s, datum, res)
            cs.append(np.array([r.fitted_c for r in check_boundedness(u, ORIGIN, 1.0, pr.params, deltas, pr.f)]))
        a, b = cs
        finite &= bool(np.all(np.isfinite(a)) and np.all(np.isfinite(b)))
        both = (a > 0) & (b > 0)
        stable &= bool(np.all((a > 0) == (b > 0)))
        if both.any():
            worst = max(worst, float(np.max(np.maximum(a, b)[both] / np.minimum(a, b)[both])))
    stable &= worst <= 2
    dt = time.perf_counter() - t0
    ok = close <= 0.03 and finite and stable and dt < 900
    acceptance(9, ok, f"closed form rel err {close:.1e}, sweep finite {finite}, worst ratio {worst:.2f}, {dt:.0f}s")
    assert ok


def test_c10_degiorgi(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    base = DeGiorgiSchedule.build(KernelParams(s=0.5, p=2.0), 1.0, ORIGIN)
    exact = True
    for _ in range(100):
        M, C, beta = rng.uniform(0.5, 5), rng.uniform(1.1, 8), rng.uniform(0.2, 2)
        sched = base.__class__(**{**base.__dict__, "c_bar": M, "C": C, "beta": beta})
        thr = recursion_threshold(M, C, beta)
        run = degiorgi_iterate(thr, sched, max_steps=10, zero=1e-300)
        j = np.arange(run.A.size)
        exact &= bool(np.allclose(run.A, thr * C ** (-j / beta), rtol=1e-9, atol=0))
        exact &= degiorgi_iterate(0.5 * thr, sched, max_steps=400).converged
        exact &= degiorgi_iterate(2 * M ** (-1 / beta), sched, max_steps=400).diverged
    verdicts = []
    for p, s, datum in ((2.0, 0.5, "bump"), (2.0, 0.5, "source"), (3.0, 0.6, "source"), (3.0, 0.3, "bump"),
                        (1.5, 0.6, "source")):
        pr, u = solved(p, s, datum, 15)
        res = degiorgi_pipeline(u, ORIGIN, 0.8, pr.params, f=pr.f)
        verdicts.append(res["run"].converged and res["bound_holds"])
    dt = time.perf_counter() - t0
    ok = exact and all(verdicts) and dt < 300
    acceptance(10, ok, f"synthetic exact {exact}, pipeline {sum(verdicts)}/5 converged with bound, {dt:.0f}s")
    assert ok


def test_c11_holder(acceptance):
    t0 = time.perf_counter()
    grid = build_grid(GridSpec.around_ball(ORIGIN, 1.0, 25, collar=0.5))
    err = 0.0
    for beta in (0.2, 0.4, 0.6):
        e = gauge_power(beta)
        u = GridFunction(grid, e(grid.centers), np.zeros(grid.num_cells, bool), e)
        fit = fit_holder_exponent(u, ORIGIN, [1.0, 0.8, 0.64, 0.51])
        err = max(err, abs(fit.alpha - beta))
    alphas = []
    mono = True
    for p, s, datum in ((2.0, 0.5, "bump"), (2.0, 0.5, "source"), (3.0, 0.6, "source"), (1.5, 0.6, "source")):
        pr, u = solved(p, s, datum, 21)
        fit = fit_holder_exponent(u, ORIGIN, [0.9, 0.7, 0.55, 0.43, 0.34], pr.params)
        alphas.append(fit.alpha)
        mono &= fit.monotone
    dt = time.perf_counter() - t0
    ok = err <= 0.05 and min(alphas) > 0 and mono and dt < 600
    acceptance(11, ok, f"gauge-power max |err| {err:.3f}, solved alpha min {min(alphas):.2f}, monotone {mono}, "
                       f"{dt:.0f}s")
    assert ok


def test_c12_determinism(acceptance):
    first, _, _ = _run_batch()
    clear_caches()
    second, _ = caccioppoli_batch()
    ok = first.encode() == second.encode()
    acceptance(12, ok, f"batch CSV bit-identical: {ok} ({len(first.encode())} bytes)")
    assert ok
