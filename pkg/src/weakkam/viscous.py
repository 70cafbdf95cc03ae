"""Viscous cell problem: the ergodic constant c(eps) and periodic profile.

The equation phi_t + eps Lap(phi) + H(x, D phi, t) = c(eps) carries a backward
heat term in forward time; substituting s = -t yields a forward parabolic
evolution

    psi_s = eps Lap(psi) + H(x, D psi, -s)

which is marched with centered second differences for the Laplacian and a
monotone local Lax-Friedrichs Hamiltonian whose dissipation coefficient is the
stencil-local max of |H_p| (capped by the a-priori gradient bound).  After the
profile locks onto the time-periodic regime, the per-period mean increment is
c(eps) and the drift-corrected profile, mapped back to forward time, is the
solution normalized at a configured anchor node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigError, ConvergenceError, NumericalQualityError
from .variational import GridSpec

MAX_SUBSTEPS = 200_000


@dataclass
class ViscousSolution:
    """Converged pair (c(eps), phi) on the forward (x-node, substep) grid."""

    epsilon: float
    c_eps: float
    phi: np.ndarray                 # (nx, nt), phi[anchor_node, 0] = 0
    lip_x: float
    semiconvexity_const: float
    periodicity_residual: float
    grid: GridSpec
    anchor_node: int
    n_periods: int
    ds: float
    m_sub: int
    residual_history: list = field(default_factory=list)
    reversed_snaps: np.ndarray | None = None   # final-period state at substep phases
    final_period_index: int = 0
    lip_cap: float = 4.0


def _step(model, chi: np.ndarray, tau: float, ds: float, dx: float,
          eps: float, xs: np.ndarray, b: float, alpha_cap: float) -> np.ndarray:
    """One explicit monotone update of psi_s = eps Lap(psi) + H(x, D psi, tau)."""
    left = np.roll(chi, 1)
    right = np.roll(chi, -1)
    pm = (chi - left) / dx
    pp = (right - chi) / dx
    lap = (left + right - 2.0 * chi) / (dx * dx)
    alpha = np.minimum(np.maximum(np.abs(pm + b), np.abs(pp + b)), alpha_cap)
    # the +H sign of the evolution flips the usual dissipation sign: with
    # alpha >= |H_p| this upwinds correctly (H = a p picks p_plus for a > 0)
    h_num = model.hamiltonian(xs, 0.5 * (pm + pp), tau) + 0.5 * alpha * (pp - pm)
    return chi + ds * (eps * lap + h_num)


def step_operator(model, chi, tau, ds, grid: GridSpec, eps, lip_cap=4.0):
    """Public single-step wrapper (used by monotonicity spot checks)."""
    b = model.momentum_offset
    return _step(model, np.asarray(chi, dtype=float), tau, ds, grid.dx, eps,
                 grid.nodes(), b, lip_cap + abs(b))


def cfl_timestep(grid: GridSpec, eps: float, alpha_max: float,
                 safety: float = 0.45) -> float:
    dx = grid.dx
    return safety * min(dx * dx / (2.0 * eps), dx / alpha_max)


def solve_cell(model, epsilon: float, grid: GridSpec, cell_tol: float = 1e-6,
               max_periods: int = 600, lip_cap: float = 4.0, safety: float = 0.45,
               normalize_node: int = 0, initial_offset: float = 0.0,
               min_periods: int = 3) -> ViscousSolution:
    """Long-time integration of the reversed evolution until time-periodicity.

    Convergence is measured on consecutive-period snapshot fields after
    removing the uniform drift; the drift itself is the ergodic constant.
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive", field="sweep.eps_list")
    nx, nt = grid.nx, grid.nt
    dx = grid.dx
    b = model.momentum_offset
    alpha_max = lip_cap + abs(b)
    ds_cfl = cfl_timestep(grid, epsilon, alpha_max, safety)
    m_sub = max(1, int(math.ceil((1.0 / nt) / ds_cfl)))
    if m_sub * nt > MAX_SUBSTEPS:
        raise ConfigError(
            f"CFL-infeasible grid: {m_sub * nt} steps per period exceed the cap "
            f"(eps={epsilon}, nx={nx})", field="grid")
    ds = 1.0 / (nt * m_sub)
    xs = grid.nodes()

    chi = np.full(nx, float(initial_offset))
    prev_snaps = None
    snaps = np.empty((nx, nt))
    residual_history: list[float] = []
    c_est = 0.0
    converged = False
    period = 0
    for period in range(max_periods):
        for j in range(nt):
            snaps[:, j] = chi
            for mstep in range(m_sub):
                s = period + j / nt + mstep * ds
                chi = _step(model, chi, -s, ds, dx, epsilon, xs, b, alpha_max)
        if prev_snaps is not None:
            diff = snaps - prev_snaps
            c_est = float(np.mean(diff))
            res = float(np.max(np.abs(diff - c_est)))
            residual_history.append(res)
            if res <= cell_tol and period >= min_periods:
                converged = True
                prev_snaps = snaps.copy()
                break
        prev_snaps = snaps.copy()
    if not converged:
        raise ConvergenceError(
            f"cell problem did not reach periodicity in {max_periods} periods "
            f"(eps={epsilon}, last residual {residual_history[-1]:.3e})",
            trace=residual_history)

    # hard ergodic-constant bracket: inf_x,t H(x,0,t) <= c(eps) <= sup H(x,0,t)
    tprobe = np.arange(4 * nt) / (4 * nt)
    h0 = np.array([model.hamiltonian(xs, np.zeros_like(xs), t) for t in tprobe])
    c_tol = 1e-6
    if not (h0.min() - c_tol <= c_est <= h0.max() + c_tol):
        raise NumericalQualityError(
            f"c(eps)={c_est:.8f} violates the resting-Hamiltonian bracket "
            f"[{h0.min():.8f}, {h0.max():.8f}]")

    # map the final reversed period back to forward time and normalize
    S = period  # snapshots taken at s = S + j/nt
    phi = np.empty((nx, nt))
    for jprime in range(nt):
        jfwd = (nt - jprime) % nt
        phi[:, jfwd] = prev_snaps[:, jprime] - c_est * (S + jprime / nt)
    phi -= phi[normalize_node, 0]

    lip = lipschitz_constant(phi, dx)
    semi = semiconvexity_constant(phi, dx)
    return ViscousSolution(
        epsilon=epsilon, c_eps=c_est, phi=phi, lip_x=lip,
        semiconvexity_const=semi,
        periodicity_residual=residual_history[-1],
        grid=grid, anchor_node=normalize_node, n_periods=period + 1,
        ds=ds, m_sub=m_sub, residual_history=residual_history,
        reversed_snaps=prev_snaps, final_period_index=period,
        lip_cap=lip_cap)


def lipschitz_constant(phi: np.ndarray, dx: float) -> float:
    """Max discrete spatial gradient magnitude over the field."""
    return float(np.max(np.abs(np.roll(phi, -1, axis=0) - phi) / dx))


def semiconvexity_constant(phi: np.ndarray, dx: float) -> float:
    """Smallest C >= 0 with phi(x+y) - 2 phi(x) + phi(x-y) >= -C y^2 at |y| = dx."""
    second = (np.roll(phi, -1, axis=0) - 2.0 * phi + np.roll(phi, 1, axis=0)) / (dx * dx)
    return float(max(0.0, -np.min(second)))


def regularity_report(sol: ViscousSolution) -> tuple[float, float]:
    """(lip_x, semiconvexity_const) of the converged profile."""
    return (lipschitz_constant(sol.phi, sol.grid.dx),
            semiconvexity_constant(sol.phi, sol.grid.dx))


def residual_check(model, sol: ViscousSolution) -> float:
    """Advance the converged state one more period; sup deviation from c(eps)-drift.

    A perfectly periodic converged profile reproduces itself shifted by
    exactly c(eps) per period; the reported residual is the sup-norm defect
    against the stored substep snapshots.
    """
    grid = sol.grid
    nt = grid.nt
    xs = grid.nodes()
    b = model.momentum_offset
    alpha_max = sol.lip_cap + abs(b)
    chi = sol.reversed_snaps[:, 0].copy()
    S = float(sol.final_period_index)
    worst = 0.0
    for period in range(2):
        for j in range(nt):
            if period == 1:
                expected = sol.reversed_snaps[:, j] + sol.c_eps
                worst = max(worst, float(np.max(np.abs(chi - expected))))
            for mstep in range(sol.m_sub):
                s = S + period + j / nt + mstep * sol.ds
                chi = _step(model, chi, -s, sol.ds, grid.dx, sol.epsilon, xs,
                            b, alpha_max)
    expected = sol.reversed_snaps[:, 0] + 2.0 * sol.c_eps
    worst = max(worst, float(np.max(np.abs(chi - expected))))
    return worst
