import math

import numpy as np
import pytest

from weakkam.errors import ConfigError
from weakkam.model import HamiltonianModel
from weakkam.stochastic import (DriftField, StaticCenter, exit_time_scaling,
                                exit_times, lax_residual, simulate_paths)
from weakkam.variational import GridSpec
from weakkam.viscous import solve_cell

FREE = HamiltonianModel(family="mechanical")


def test_zero_noise_zero_drift_paths_constant():
    ens = simulate_paths(FREE, DriftField.zero(), 0.0, 16, 1e-2, 3, 1.0,
                         start_x=0.37)
    assert np.max(np.abs(ens.paths - 0.37)) == 0.0


def test_zero_noise_optimal_drift_follows_orbit(tw_model):
    # the deterministic flow of the interpolated optimal drift tracks the
    # orbit x_I - t/k; oracle = RK4 on the same interpolated field
    sol = solve_cell(tw_model, 0.02, GridSpec(128, 16))
    drift = DriftField.from_viscous(tw_model, sol)
    dt = 5e-4
    ens = simulate_paths(tw_model, drift, 0.0, 1, dt, 1, 2.0, start_x=0.0)
    xs = ens.paths[0]
    # RK4 oracle on the interpolated drift
    x, path = 0.0, [0.0]
    for n in range(len(xs) - 1):
        s = n * dt
        k1 = float(drift(np.array([x]), s)[0])
        k2 = float(drift(np.array([x + dt * k1 / 2]), s + dt / 2)[0])
        k3 = float(drift(np.array([x + dt * k2 / 2]), s + dt / 2)[0])
        k4 = float(drift(np.array([x + dt * k3]), s + dt)[0])
        x += dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        path.append(x)
    np.testing.assert_allclose(xs, path, atol=5e-3)
    # and the whole trajectory hugs the traveling crest
    gap = np.abs((xs + ens.times / 2 + 0.25) % 0.5 - 0.25)
    assert np.max(gap) <= 0.06


def test_martingale_mean_displacement():
    eps, t_end, n = 0.02, 1.0, 4000
    ens = simulate_paths(FREE, DriftField.zero(), eps, n, 1e-3, 11, t_end)
    disp = ens.paths[:, -1] - ens.paths[:, 0]
    assert abs(np.mean(disp)) <= 3 * math.sqrt(2 * eps * t_end / n)


def test_bit_reproducibility_and_resize_stability():
    a = exit_times(FREE, DriftField.zero(), StaticCenter(0.0), 0.01, 0.1,
                   400, 3e-5, 42, 4.0)
    b = exit_times(FREE, DriftField.zero(), StaticCenter(0.0), 0.01, 0.1,
                   400, 3e-5, 42, 4.0)
    c = exit_times(FREE, DriftField.zero(), StaticCenter(0.0), 0.01, 0.1,
                   700, 3e-5, 42, 4.0)
    assert np.array_equal(a.tau_samples, b.tau_samples)
    assert np.array_equal(a.tau_samples, c.tau_samples[:400])


def test_flat_case_exit_oracle():
    # oracle: eps u'' = -1 on (-delta, delta), u(+-delta) = 0 -> E tau = delta^2/(2 eps)
    delta = 0.1
    for eps in (0.01, 0.005):
        ens = exit_times(FREE, DriftField.zero(), StaticCenter(0.0), eps, delta,
                         5000, 1.5e-5, 11, 10.0)
        oracle = delta ** 2 / (2 * eps)
        assert abs(ens.mean_tau - oracle) <= 3 * ens.tau_ci95
        assert ens.capped_fraction == 0.0


def test_exit_time_monotone_in_radius():
    eps = 0.02
    small = exit_times(FREE, DriftField.zero(), StaticCenter(0.0), eps, 0.05,
                       2000, 2e-5, 5, 10.0)
    large = exit_times(FREE, DriftField.zero(), StaticCenter(0.0), eps, 0.10,
                       2000, 2e-5, 5, 10.0)
    assert large.mean_tau > small.mean_tau


def test_exit_requires_resolved_scale():
    with pytest.raises(ConfigError):
        exit_times(FREE, DriftField.zero(), StaticCenter(0.0), 0.5, 0.05,
                   10, 1e-2, 1, 1.0)


def test_kappa_too_small_flagged():
    with pytest.raises(ConfigError):
        exit_time_scaling(FREE, StaticCenter(0.0), DriftField.zero(),
                          [0.001], 0.2, 200, kappa=0.05, dt=1e-4, seed=9)


def test_exit_scaling_trend_confined():
    # an attracting drift produces the increasing eps log E(tau) staircase
    grid = GridSpec(200, 4)
    xs = grid.nodes()
    U = -2 * np.pi * ((xs[:, None] - 0.5) * np.ones((1, grid.nt)))
    drift = DriftField(kind="barrier_drift", grid=grid, values=U)
    rep = exit_time_scaling(FREE, StaticCenter(0.5), drift, [0.08, 0.04, 0.02],
                            0.1, 3000, kappa=20.0, dt=5e-4, seed=3)
    vals = [r.eps_log_mean_tau for r in rep.records]
    assert rep.nondecreasing
    assert vals[2] > vals[0]
    assert all(r.capped_fraction <= 0.5 for r in rep.records)


def test_lax_trivial_case():
    sol = solve_cell(FREE, 0.02, GridSpec(100, 8))
    drift = DriftField.from_viscous(FREE, sol)
    probes = lax_residual(FREE, sol, drift, kappa=1.0, n_paths=500, dt=1e-3,
                          seed=3, probes=[(0.2, 0.0)])
    assert probes[0].residual <= max(1e-12, 2 * probes[0].se)


def test_lax_benchmark_and_suboptimal_bound(bench_model):
    sol = solve_cell(bench_model, 0.02, GridSpec(200, 32), normalize_node=100)
    opt = DriftField.from_viscous(bench_model, sol)
    probes = lax_residual(bench_model, sol, opt, kappa=2.0, n_paths=3000,
                          dt=1e-3, seed=7, probes=[(0.25, 0.0), (0.5, 0.0)])
    for p in probes:
        assert p.residual <= max(0.02, 2 * p.se) + 0.01

    # any admissible drift stays below the optimal value (supremum property)
    grid = sol.grid
    const = DriftField(kind="zero", grid=grid,
                       values=np.full((grid.nx, grid.nt), 0.3))
    const.kind = "constant"
    sub = lax_residual(bench_model, sol, const, kappa=2.0, n_paths=3000,
                       dt=1e-3, seed=13, probes=[(0.25, 0.0), (0.5, 0.0)])
    for p_opt, p_sub in zip(probes, sub):
        assert p_sub.rhs <= p_opt.lhs + 2 * p_sub.se + 0.01
