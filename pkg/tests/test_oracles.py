"""Independent oracles for hand-computable and closed-form values."""
import math

import numpy as np
import pytest

from hfrac.exterior import gauge_ball_volume
from hfrac.expr import constant, gauge_decay, smooth_bump, zero
from hfrac.grid import GridFunction, GridSpec, build_grid
from hfrac.hgroup import dilate, gauge_norm, group_mul, horizontal_gradient, pseudo_distance
from hfrac.kernelops import (KernelParams, apply_operator, discretization, embedding_ratio, fractional_energy,
                             gagliardo_seminorm, kernel_integral_outside_ball, kernel_weight, sobolev_ratio, tail,
                             weak_residual)
from hfrac.solver import DirichletProblem, assemble_linear_p2, solve_energy_descent, solve_linear_p2

ORIGIN = np.zeros(3)


@pytest.fixture(scope="module")
def omega_mc():
    """Monte Carlo volume of the unit gauge ball; it lies in [-1, 1]^3."""
    rng = np.random.default_rng(2024)
    pts = rng.uniform(-1, 1, size=(2_000_000, 3))
    z2 = pts[:, 0] ** 2 + pts[:, 1] ** 2
    return 8.0 * np.mean(z2 * z2 + pts[:, 2] ** 2 < 1.0)


# group --------------------------------------------------------------------------


def test_hand_values():
    np.testing.assert_array_equal(group_mul([1.0, 0, 0], [0, 1.0, 0]), [1.0, 1.0, -2.0])
    np.testing.assert_array_equal(dilate(2.0, [1.0, 1.0, 1.0]), [2.0, 2.0, 4.0])
    assert gauge_norm(np.array([1.0, 0, 0])) == 1.0
    g = horizontal_gradient(lambda q: q[:, 2], np.array([1.0, 0, 0]), 1e-3)
    np.testing.assert_allclose(g, [0.0, -2.0], atol=1e-9)


def test_ball_volume_monte_carlo(omega_mc):
    assert omega_mc == pytest.approx(math.pi ** 2 / 2, rel=0.01)
    assert gauge_ball_volume(1) == pytest.approx(omega_mc, rel=0.02)


# grid --------------------------------------------------------------------------


def test_mask_volume_scales_like_r_to_the_Q():
    vols = []
    for r, collar in ((0.5, 0.1), (1.0, 0.2), (2.0, 0.3)):
        grid = build_grid(GridSpec.around_ball(ORIGIN, r, 32, collar=collar * r))
        vols.append(np.sum(pseudo_distance(grid.centers, ORIGIN) < r) * grid.cell_volume / r ** 4)
    assert max(vols) / min(vols) - 1 <= 0.03


def test_integral_of_one_over_ball(omega_mc):
    grid = build_grid(GridSpec.around_ball(ORIGIN, 1.0, 24, collar=0.2))
    vol = np.sum(pseudo_distance(grid.centers, ORIGIN) < 1.0) * grid.cell_volume
    assert vol == pytest.approx(omega_mc, rel=0.02)


def test_decay_datum_spot_values():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.5, -0.5, 2.0]])
    z2 = pts[:, 0] ** 2 + pts[:, 1] ** 2
    want = 3.0 / (1.0 + z2 * z2 + pts[:, 2] ** 2)
    np.testing.assert_allclose(gauge_decay(3.0)(pts), want, rtol=1e-14)


# kernel operators ---------------------------------------------------------------


def test_kernel_weight_hand_value():
    assert kernel_weight(np.array([2.0, 0, 0]), ORIGIN, KernelParams(s=0.5, p=2.0)) == pytest.approx(2 ** -5)


def test_two_cell_seminorm():
    P = KernelParams(s=0.5, p=2.0, subcell_level=0)
    grid = build_grid(GridSpec(1, (0, 0, 0), (2, 1, 1), (2, 1, 1)))
    u = GridFunction(grid, [0.0, 1.0], [False, False])
    w = kernel_weight(grid.centers[0], grid.centers[1], P)
    assert gagliardo_seminorm(u, P) ** 2 == pytest.approx(2 * w * grid.cell_volume ** 2, rel=1e-14)


def test_quadratic_form_identity(rng):
    pr = DirichletProblem.on_ball(KernelParams(s=0.5, p=2.0), ORIGIN, 1.0, 8, smooth_bump([0.5, 0, 0], 1.0),
                                  f=0.7, collar=1.0)
    A, b, c0 = assemble_linear_p2(pr)
    base = pr.datum()
    for _ in range(3):
        uo = rng.normal(size=int(pr.omega_mask.sum()))
        vals = base.values.copy()
        vals[pr.omega_mask] = uo
        E = fractional_energy(base.with_values(vals), pr.f, pr.params)
        assert E == pytest.approx(0.5 * uo @ A @ uo - b @ uo + c0, rel=1e-10)


def test_operator_is_half_energy_gradient(rng):
    P = KernelParams(s=0.7, p=2.5)
    grid = build_grid(GridSpec.around_ball(ORIGIN, 1.0, 9, collar=1.0))
    mask = pseudo_distance(grid.centers, ORIGIN) < 1.0
    e = smooth_bump([0.3, 0, 0], 1.0)
    vals = e(grid.centers) + 0.1 * rng.normal(size=grid.num_cells) * mask
    u = GridFunction(grid, vals, mask, e)
    h = grid.cell_volume
    rows = np.flatnonzero(mask)
    for a in rng.choice(rows, 10, replace=False):
        step = 1e-6
        up, dn = vals.copy(), vals.copy()
        up[a] += step
        dn[a] -= step
        fd = (fractional_energy(u.with_values(up), None, P) - fractional_energy(u.with_values(dn), None, P)) / (2 * step)
        assert 2 * h * apply_operator(u, int(a), P) == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("p,s", [(2.0, 0.5), (3.0, 0.4), (1.5, 0.7)])
def test_tail_constant_against_volume_oracle(p, s, omega_mc):
    P = KernelParams(s=s, p=p)
    grid = build_grid(GridSpec.around_ball(ORIGIN, 1.0, 12, collar=1.0))
    u = GridFunction(grid, np.full(grid.num_cells, 0.8), np.zeros(grid.num_cells, bool), constant(0.8))
    want = 0.8 * (P.Q * omega_mc / P.sp) ** (1 / (p - 1))
    assert tail(u, ORIGIN, 1.0, P).value == pytest.approx(want, rel=0.02)


def test_tail_against_brute_force():
    # direct 48^3 midpoint sum over a large box, with 4^3 sub-samples near the sphere
    P = KernelParams(s=0.5, p=2.0)
    e = gauge_decay(1.0)
    grid = build_grid(GridSpec.around_ball(ORIGIN, 1.0, 16, collar=0.5))
    split = tail(GridFunction(grid, e(grid.centers), np.zeros(grid.num_cells, bool), e), ORIGIN, 1.0, P).value
    L, n, sub = 3.0, 48, 4
    hx, ht = 2 * L / n, 2 * L * L / n
    axes = [(np.arange(n) + 0.5) * hx - L] * 2 + [(np.arange(n) + 0.5) * ht - L * L]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    d = pseudo_distance(X, ORIGIN)
    near = d < 2.5
    total = np.sum(e(X[~near]) * d[~near] ** -P.exponent)
    ticks = (np.arange(sub) + 0.5) / sub - 0.5
    S = np.stack(np.meshgrid(ticks, ticks, ticks, indexing="ij"), -1).reshape(-1, 3) * [hx, hx, ht]
    for idx in np.array_split(np.flatnonzero(near), 20):
        pts = (X[idx][:, None, :] + S[None]).reshape(-1, 3)
        dd = pseudo_distance(pts, ORIGIN)
        total += np.sum(np.where(dd >= 1, np.maximum(dd, 1e-300) ** -P.exponent, 0.0) * e(pts)) / len(S)
    assert total * hx * hx * ht == pytest.approx(split, rel=0.03)


def test_kernel_integral_at_gamma_sp(omega_mc):
    P = KernelParams(s=0.5, p=2.0)
    assert kernel_integral_outside_ball(1.0, P.sp, P) == pytest.approx(P.Q * omega_mc / P.sp, rel=0.02)


def _bump(R, res, collar):
    grid = build_grid(GridSpec.around_ball(ORIGIN, R, res, collar=collar))
    e = smooth_bump(ORIGIN, R)
    return GridFunction(grid, e(grid.centers), np.zeros(grid.num_cells, bool), e)


def test_sobolev_ratio_dilation_and_refinement():
    P = KernelParams(s=0.5, p=2.0)
    base = sobolev_ratio(_bump(1.0, 16, 0.5), P)
    assert sobolev_ratio(_bump(0.5, 15, 0.3), P) == pytest.approx(base, rel=0.03)
    assert sobolev_ratio(_bump(1.0, 24, 0.5), P) == pytest.approx(base, rel=0.2)


def test_embedding_ratio_bounded(rng):
    P = KernelParams(s=0.6, p=2.0)
    grid = build_grid(GridSpec.around_ball(ORIGIN, 1.0, 8, collar=0.5))
    ratios = []
    for _ in range(20):
        c = rng.normal(size=3) * 0.3
        e = smooth_bump(c, rng.uniform(0.5, 1.0), rng.uniform(0.5, 2.0))
        u = GridFunction(grid, e(grid.centers), np.zeros(grid.num_cells, bool), e)
        ratios.append(embedding_ratio(u, 0.3, P))
    assert np.all(np.isfinite(ratios)) and max(ratios) < 10


# solver ---------------------------------------------------------------------------


def test_single_cell_by_hand():
    P = KernelParams(s=0.5, p=2.0)
    grid = build_grid(GridSpec(1, (-1.5, -1.5, -1.5), (1.5, 1.5, 1.5), 3))
    mask = np.zeros(27, bool)
    mask[13] = True
    pr = DirichletProblem(P, grid, mask, zero(), f=1.0)
    disc = discretization(grid, P)
    h = grid.cell_volume
    W = disc.weights(np.array([13]))[0]
    Wf = disc.far_weights(np.array([13]))[0]
    want = h / (2 * h * h * (W.sum() - W[13]) + 2 * h * Wf.sum())
    assert solve_linear_p2(pr).u.values[13] == pytest.approx(want, rel=1e-10)
    assert solve_energy_descent(pr).u.values[13] == pytest.approx(want, rel=1e-6)


def test_weak_residual_of_linear_solution(rng):
    pr = DirichletProblem.on_ball(KernelParams(s=0.5, p=2.0), ORIGIN, 1.0, 9, smooth_bump([0.8, 0, 0], 1.2),
                                  f=0.5, collar=1.0)
    u = solve_linear_p2(pr, 1e-13).u
    for _ in range(20):
        psi = np.zeros(u.grid.num_cells)
        psi[pr.omega_mask] = rng.uniform(-1, 1, pr.omega_mask.sum())
        assert abs(weak_residual(u, psi, pr.f, pr.params)) <= 1e-8 * np.linalg.norm(psi)


def test_maximum_principle(rng):
    for _ in range(10):
        p = float(rng.choice([1.5, 2.0, 3.0]))
        s = float(rng.uniform(0.2, 0.9))
        g = smooth_bump(rng.normal(size=3) * 0.5, rng.uniform(0.8, 1.5), rng.uniform(0.1, 2))
        pr = DirichletProblem.on_ball(KernelParams(s=s, p=p), ORIGIN, 1.0, 8, g, collar=1.0)
        assert solve_energy_descent(pr).u.values[pr.omega_mask].min() >= -1e-10


def test_perturbation_optimality(rng):
    pr = DirichletProblem.on_ball(KernelParams(s=0.6, p=3.0), ORIGIN, 1.0, 8, smooth_bump([0.8, 0, 0], 1.2),
                                  f=0.5, collar=1.0)
    u = solve_energy_descent(pr).u
    E = fractional_energy(u, pr.f, pr.params)
    for _ in range(100):
        d = rng.normal(size=u.values.size) * pr.omega_mask
        assert E <= fractional_energy(u.with_values(u.values + 1e-3 * d), pr.f, pr.params) + 1e-10
