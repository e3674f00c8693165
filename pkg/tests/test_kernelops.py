import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hfrac.errors import InputError, RegimeError, SingularityError
from hfrac.exterior import gauge_ball_volume
from hfrac.expr import constant, smooth_bump
from hfrac.grid import GridFunction, GridSpec, build_grid
from hfrac.hgroup import HomogeneousNorm, gauge_norm, pseudo_distance
from hfrac.kernelops import (KernelParams, apply_operator, energy_gradient, fractional_energy, gagliardo_seminorm,
                             kernel_integral_outside_ball, kernel_weight, tail, weak_residual)


def bump_function(res=8, R=1.0, collar=0.5, omega=True):
    spec = GridSpec.around_ball([0, 0, 0], R, res, collar=collar * R)
    grid = build_grid(spec)
    e = smooth_bump([0, 0, 0], R)
    mask = pseudo_distance(grid.centers, np.zeros(3)) < R if omega else np.zeros(grid.num_cells, bool)
    return GridFunction(grid, e(grid.centers), mask, e)


def test_params_validation():
    for kw in ({"s": 0.0}, {"s": 1.0}, {"p": 1.0}, {"p": 11.0}, {"n": 0}):
        with pytest.raises(InputError):
            KernelParams(**kw)
    P = KernelParams(s=0.5, p=3.0)
    assert P.Q == 4 and P.sp == 1.5 and P.exponent == 5.5
    assert P.with_(s=0.2).s == 0.2


def test_gauge_ball_volume():
    assert gauge_ball_volume(1) == pytest.approx(math.pi ** 2 / 2, rel=1e-12)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_outside_ball_closed_form(gamma, r):
    P = KernelParams()
    exact = P.Q * gauge_ball_volume(1) / gamma * r ** (-gamma)
    assert kernel_integral_outside_ball(r, gamma, P) == pytest.approx(exact, rel=1e-8)
    ratio = kernel_integral_outside_ball(2 * r, gamma, P) / kernel_integral_outside_ball(r, gamma, P)
    assert ratio == pytest.approx(2.0 ** -gamma, rel=1e-8)


def test_kernel_weight():
    P = KernelParams(s=0.5, p=2.0)
    a = np.array([1.0, 0.0, 0.0])
    assert kernel_weight(a, np.zeros(3), P) == pytest.approx(1.0)
    with pytest.raises(SingularityError):
        kernel_weight(a, a, P)


@given(st.floats(0.1, 0.9), st.floats(1.2, 4.0), st.floats(-3, 3))
def test_constant_has_zero_seminorm_and_operator(s, p, c):
    P = KernelParams(s=s, p=p)
    spec = GridSpec.around_ball([0, 0, 0], 1.0, 5, collar=1.0)
    grid = build_grid(spec)
    mask = pseudo_distance(grid.centers, np.zeros(3)) < 1.0
    u = GridFunction(grid, np.full(grid.num_cells, c), mask, constant(c))
    assert gagliardo_seminorm(u, P, exterior=True) == 0.0
    np.testing.assert_array_equal(apply_operator(u, np.flatnonzero(mask), P), 0.0)


@pytest.mark.parametrize("p,s", [(2.0, 0.5), (1.5, 0.3)])
@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_dilation_law_on_dilated_grid(p, s, lam):
    # the same samples on the dilated grid: exact up to rounding
    P = KernelParams(s=s, p=p)
    a = gagliardo_seminorm(bump_function(10, 1.0, omega=False), P, exterior=True) ** p
    b = gagliardo_seminorm(bump_function(10, 1.0 / lam, omega=False), P, exterior=True) ** p
    assert b / (lam ** (P.sp - P.Q) * a) == pytest.approx(1.0, rel=1e-10)


def test_energy_gradient_finite_differences(rng):
    for p in (1.5, 2.0, 3.0):
        P = KernelParams(s=0.6, p=p)
        u0 = bump_function(7)
        vals = u0.values + 0.1 * rng.normal(size=u0.values.size) * u0.omega_mask
        u = u0.with_values(vals)
        rows = np.flatnonzero(u.omega_mask)
        grad = energy_gradient(u, 0.3, P)
        for j in rng.choice(rows.size, 5, replace=False):
            h = 1e-6 * max(1.0, abs(vals[rows[j]]))
            up, dn = vals.copy(), vals.copy()
            up[rows[j]] += h
            dn[rows[j]] -= h
            fd = (fractional_energy(u.with_values(up), 0.3, P) - fractional_energy(u.with_values(dn), 0.3, P)) / (2 * h)
            assert fd == pytest.approx(grad[j], rel=1e-5, abs=1e-12)


def test_gradient_matches_weak_residual(rng):
    P = KernelParams(s=0.4, p=2.5)
    u = bump_function(7)
    u = u.with_values(u.values + 0.05 * rng.normal(size=u.values.size) * u.omega_mask)
    grad = energy_gradient(u, 1.0, P)
    psi = np.zeros(u.grid.num_cells)
    psi[u.omega_mask] = rng.uniform(size=u.omega_mask.sum())
    assert weak_residual(u, psi, 1.0, P) == pytest.approx(grad @ psi[u.omega_mask], rel=1e-10)


def test_weak_residual_rejects_bad_tests():
    u = bump_function(6)
    P = KernelParams()
    with pytest.raises(InputError):
        weak_residual(u, np.ones(u.grid.num_cells), None, P)
    with pytest.raises(InputError):
        weak_residual(u, np.ones(3), None, P)


@pytest.mark.parametrize("p,s", [(2.0, 0.5), (3.0, 0.3)])
def test_tail_of_constant(p, s):
    # Tail(c; R)^{p-1} = c^{p-1} R^{sp} Q |B_1| / (sp) R^{-sp}
    P = KernelParams(s=s, p=p)
    spec = GridSpec.around_ball([0, 0, 0], 1.0, 12, collar=1.0)
    grid = build_grid(spec)
    c = 2.0
    u = GridFunction(grid, np.full(grid.num_cells, c), np.zeros(grid.num_cells, bool), constant(c))
    T = tail(u, np.zeros(3), 0.5, P)
    exact = c * (P.Q * gauge_ball_volume(1) / P.sp) ** (1 / (p - 1))
    assert T.value == pytest.approx(exact, rel=0.02)
    assert T.reconstruct() == pytest.approx(T.value, rel=1e-12)


def test_custom_norm_not_compiled():
    P = KernelParams(norm=HomogeneousNorm.custom(gauge_norm, 1.0))
    with pytest.raises(RegimeError):
        gagliardo_seminorm(bump_function(5), P)
