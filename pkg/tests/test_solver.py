import numpy as np
import pytest

from hfrac.errors import InputError
from hfrac.expr import constant, gauge_decay, smooth_bump, zero
from hfrac.kernelops import KernelParams, fractional_energy
from hfrac.solver import DirichletProblem, SolverConfig, assemble_linear_p2, solve_energy_descent, solve_linear_p2

ORIGIN = [0.0, 0.0, 0.0]


def problem(p=2.0, s=0.5, res=9, g=None, f=None):
    g = smooth_bump([0.8, 0.0, 0.0], 1.2) if g is None else g
    return DirichletProblem.on_ball(KernelParams(s=s, p=p), ORIGIN, 1.0, res, g, f=f, collar=1.0)


def test_p2_descent_matches_linear_solve():
    pr = problem(f=0.5)
    lin = solve_linear_p2(pr, 1e-12)
    des = solve_energy_descent(pr, SolverConfig(tol=1e-8))
    assert des.converged
    assert np.max(np.abs(lin.u.values - des.u.values)) <= 1e-6


def test_linear_system_symmetric_positive():
    A, b = assemble_linear_p2(problem())[:2]
    A = A.toarray() if hasattr(A, "toarray") else np.asarray(A)
    np.testing.assert_allclose(A, A.T, rtol=1e-12)
    assert np.linalg.eigvalsh(A).min() > 0


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_constant_datum_gives_constant(p):
    res = solve_energy_descent(problem(p=p, g=constant(0.7)))
    assert res.converged
    np.testing.assert_allclose(res.u.values, 0.7, atol=1e-6)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_minimiser_beats_perturbations(p, rng):
    pr = problem(p=p, f=0.5)
    res = solve_energy_descent(pr, SolverConfig(tol=1e-8))
    E = fractional_energy(res.u, pr.f, pr.params)
    for _ in range(5):
        d = rng.normal(size=res.u.values.size) * pr.omega_mask
        for eps in (1e-2, 1e-4):
            assert fractional_energy(res.u.with_values(res.u.values + eps * d), pr.f, pr.params) >= E - 1e-14


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_energy_trace_nonincreasing(p):
    res = solve_energy_descent(problem(p=p, f=1.0))
    tr = np.asarray(res.energy_trace)
    assert tr.size > 1 and np.all(np.diff(tr) <= 0)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_comparison_principle(p):
    lo = solve_energy_descent(problem(p=p, g=gauge_decay(0.5), f=0.2), SolverConfig(tol=1e-8))
    hi = solve_energy_descent(problem(p=p, g=gauge_decay(1.0), f=0.4), SolverConfig(tol=1e-8))
    assert np.all(lo.u.values <= hi.u.values + 1e-8)


def test_zero_data_gives_zero():
    res = solve_energy_descent(problem(g=zero()))
    np.testing.assert_allclose(res.u.values, 0.0, atol=1e-12)


def test_gd_and_ncg_agree():
    pr = problem(p=3.0, f=0.5)
    a = solve_energy_descent(pr, SolverConfig(method="ncg", tol=1e-8))
    b = solve_energy_descent(pr, SolverConfig(method="gd", tol=1e-8, max_iter=200000))
    assert a.converged and b.converged
    assert np.max(np.abs(a.u.values - b.u.values)) <= 1e-5


def test_max_iter_reports_nonconvergence():
    res = solve_energy_descent(problem(p=1.5, f=1.0), SolverConfig(max_iter=2))
    assert not res.converged and res.iterations == 2


def test_picard_loop_converges():
    pr = problem(p=2.0, g=zero())
    pr.f_of_u = lambda pts, u: 1.0 - 0.5 * np.tanh(u)
    res = solve_energy_descent(pr, SolverConfig(tol=1e-10))
    assert res.picard_converged and res.picard_iterations >= 2


def test_bad_inputs():
    with pytest.raises(InputError):
        SolverConfig(method="newton")
    with pytest.raises(InputError):
        SolverConfig(tol=0.0)
    with pytest.raises(InputError):
        problem(g=lambda pts: np.full(len(pts), np.inf))
