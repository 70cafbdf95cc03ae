import math

import numpy as np
import pytest

from weakkam.errors import ConfigError
from weakkam.model import HamiltonianModel, benchmark_potential
from weakkam.variational import GridSpec
from weakkam.viscous import (lipschitz_constant, regularity_report, residual_check,
                             semiconvexity_constant, solve_cell, step_operator)

RNG = np.random.default_rng(99)


def test_free_case_constants():
    m = HamiltonianModel(family="mechanical")
    sol = solve_cell(m, 0.01, GridSpec(100, 16))
    assert sol.c_eps == pytest.approx(0.0, abs=1e-14)
    assert np.max(np.abs(sol.phi)) <= 1e-12
    assert residual_check(m, sol) <= 1e-12


def test_shifted_kinetic_constant_profile():
    m = HamiltonianModel(family="shifted_kinetic", momentum_shift=0.7)
    for eps in (0.05, 0.01):
        sol = solve_cell(m, eps, GridSpec(100, 16))
        assert sol.c_eps == pytest.approx(0.245, abs=1e-12)
        assert np.max(np.abs(sol.phi)) <= 1e-12


def test_benchmark_bracket(bench_model, bench_potential):
    sol = solve_cell(bench_model, 0.01, GridSpec(200, 32), normalize_node=100)
    assert bench_potential.min_on_grid() - 1e-6 <= sol.c_eps <= 1e-6
    assert sol.phi[100, 0] == 0.0


def test_translation_invariance(bench_model):
    a = solve_cell(bench_model, 0.02, GridSpec(128, 16))
    b = solve_cell(bench_model, 0.02, GridSpec(128, 16), initial_offset=5.0)
    assert a.c_eps == pytest.approx(b.c_eps, abs=1e-12)
    np.testing.assert_allclose(a.phi, b.phi, atol=1e-9)


def test_monotone_update_spot_check(bench_model):
    # bumping any neighboring value never decreases the update
    grid = GridSpec(64, 8)
    eps = 0.02
    from weakkam.viscous import cfl_timestep

    ds = cfl_timestep(grid, eps, 4.0)
    # monotonicity holds on the a-priori gradient range |D chi| <= lip_cap
    xs = np.arange(grid.nx) / grid.nx
    chi = 0.3 * np.sin(2 * np.pi * xs) + 0.1 * np.cos(6 * np.pi * xs)
    base = step_operator(bench_model, chi, 0.3, ds, grid, eps)
    bump = 0.4 * grid.dx   # keeps the bumped gradient inside the range
    for trial in range(40):
        i = int(RNG.integers(0, grid.nx))
        bumped = chi.copy()
        bumped[i] += bump
        out = step_operator(bench_model, bumped, 0.3, ds, grid, eps)
        others = np.arange(grid.nx) != i
        assert np.min(out[others] - base[others]) >= -1e-13


def test_regularity_report_trivial_and_injected():
    m = HamiltonianModel(family="mechanical")
    sol = solve_cell(m, 0.01, GridSpec(128, 8))
    lip, semi = regularity_report(sol)
    assert lip == 0.0 and semi == 0.0

    nx = 400
    xs = np.arange(nx) / nx
    field = np.repeat(np.cos(2 * np.pi * xs)[:, None], 4, axis=1)
    assert lipschitz_constant(field, 1.0 / nx) == pytest.approx(2 * np.pi, rel=1e-3)
    assert semiconvexity_constant(field, 1.0 / nx) == pytest.approx(4 * np.pi ** 2,
                                                                    rel=1e-3)


def test_residual_check_scales_with_cell_tol(bench_model):
    res = {}
    for tol in (1e-4, 5e-5):
        sol = solve_cell(bench_model, 0.02, GridSpec(128, 16), cell_tol=tol)
        res[tol] = residual_check(bench_model, sol)
        assert res[tol] <= 10 * tol
    assert res[5e-5] <= res[1e-4] + 1e-12


def test_cfl_guard():
    m = HamiltonianModel(family="mechanical")
    with pytest.raises(ConfigError):
        solve_cell(m, 500.0, GridSpec(4096, 64))


def test_traveling_wave_profile_drifts_backward(tw_model):
    # regression pin for the time-reversal sign: the profile crest follows the
    # orbit x_I - t/k in forward time
    sol = solve_cell(tw_model, 0.02, GridSpec(128, 16))
    nx, nt = 128, 16
    for j in (0, 4, 8, 12):
        crest = np.argmax(sol.phi[:, j])
        expected = (-(j / nt) / 2.0) % 0.5   # profile inherits the 1/2 cell period
        gap = abs(crest / nx % 0.5 - expected)
        gap = min(gap, 0.5 - gap)
        assert gap <= 6.0 / nx


def test_benchmark_c_eps_negative_and_scaling(bench_model):
    # c(eps) ~ -lambda_bar * eps for small eps
    s1 = solve_cell(bench_model, 0.02, GridSpec(200, 32), normalize_node=100)
    s2 = solve_cell(bench_model, 0.01, GridSpec(200, 32), normalize_node=100)
    assert s1.c_eps < 0 and s2.c_eps < 0
    ratio = s1.c_eps / s2.c_eps
    assert 1.7 <= ratio <= 2.3
