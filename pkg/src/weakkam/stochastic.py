"""Monte Carlo verification layer: controlled SDE ensembles and exit times.

Paths follow dX = U(X, s) ds + sqrt(2 eps) dW on the circle via Euler-Maruyama.
Per-path noise streams come from counter-based generators keyed by (root seed,
path index), so path i is bit-reproducible and independent of the ensemble
size.  Exit times are always reported capped, tau ^ kappa, together with the
capped fraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigError, WeakKamError
from .variational import BarrierField, GridSpec
from .viscous import ViscousSolution

BLOCK_PATHS = 4096
CHUNK_STEPS = 2048

ZERO = "zero"
OPTIMAL_FROM_VISCOUS = "optimal_from_viscous"
BARRIER_DRIFT = "barrier_drift"


@dataclass
class DriftField:
    """Drift U(x, t) on the (node, substep) grid with bilinear interpolation."""

    kind: str
    grid: GridSpec | None = None
    values: np.ndarray | None = None   # (nx, nt)

    @classmethod
    def zero(cls) -> "DriftField":
        return cls(kind=ZERO)

    @classmethod
    def from_viscous(cls, model, sol: ViscousSolution) -> "DriftField":
        """Optimal control U = H_p(x, D phi_eps, t) from the converged profile."""
        grid = sol.grid
        dx = grid.dx
        grad = (np.roll(sol.phi, -1, axis=0) - np.roll(sol.phi, 1, axis=0)) / (2 * dx)
        xs = grid.nodes()
        U = np.empty_like(grad)
        for j in range(grid.nt):
            U[:, j] = model.h_p_of_gradient(xs, grad[:, j], j / grid.nt)
        return cls(kind=OPTIMAL_FROM_VISCOUS, grid=grid, values=U)

    @classmethod
    def from_barrier(cls, model, fld: BarrierField, smooth_passes: int = 2) -> "DriftField":
        """Drift of the descending barrier profile -h, lightly mollified in x."""
        grid = fld.grid
        h = fld.h.copy()
        kernel = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
        for _ in range(smooth_passes):
            acc = np.zeros_like(h)
            for k, w in zip(range(-2, 3), kernel):
                acc += w * np.roll(h, k, axis=0)
            h = acc
        dx = grid.dx
        grad = (np.roll(-h, -1, axis=0) - np.roll(-h, 1, axis=0)) / (2 * dx)
        xs = grid.nodes()
        U = np.empty_like(grad)
        for j in range(grid.nt):
            U[:, j] = model.h_p_of_gradient(xs, grad[:, j], j / grid.nt)
        return cls(kind=BARRIER_DRIFT, grid=grid, values=U)

    def __call__(self, x, s):
        """Evaluate the drift at positions x (array) and scalar time s."""
        if self.kind == ZERO:
            return np.zeros_like(np.asarray(x, dtype=float))
        nx, nt = self.grid.nx, self.grid.nt
        xv = np.asarray(x, dtype=float) % 1.0
        pos = xv * nx
        i0 = np.floor(pos).astype(int) % nx
        wx = pos - np.floor(pos)
        tpos = (s % 1.0) * nt
        j0 = int(math.floor(tpos)) % nt
        wt = tpos - math.floor(tpos)
        j1 = (j0 + 1) % nt
        v00 = self.values[i0, j0]
        v10 = self.values[(i0 + 1) % nx, j0]
        v01 = self.values[i0, j1]
        v11 = self.values[(i0 + 1) % nx, j1]
        return (1 - wt) * ((1 - wx) * v00 + wx * v10) + wt * ((1 - wx) * v01 + wx * v11)


@dataclass
class SdeEnsemble:
    epsilon: float
    drift_kind: str
    n_paths: int
    dt: float
    seed: int
    kappa: float
    delta: float | None = None
    tau_samples: np.ndarray | None = None
    capped_fraction: float = 0.0
    paths: np.ndarray | None = None
    times: np.ndarray | None = None

    @property
    def mean_tau(self) -> float:
        return float(np.mean(self.tau_samples))

    @property
    def tau_ci95(self) -> float:
        n = len(self.tau_samples)
        return 1.96 * float(np.std(self.tau_samples, ddof=1)) / math.sqrt(n)


def _path_generators(seed: int, lo: int, hi: int):
    return [np.random.Generator(np.random.Philox(key=np.array([seed, i], dtype=np.uint64)))
            for i in range(lo, hi)]


def simulate_paths(model, drift: DriftField, epsilon: float, n_paths: int,
                   dt: float, seed: int, kappa: float, start_x: float = 0.0,
                   start_t: float = 0.0, store_paths: bool = True) -> SdeEnsemble:
    """Euler-Maruyama ensemble from a common start; paths stored when requested."""
    if dt <= 0:
        raise ConfigError("dt must be positive", field="stochastic.dt")
    n_steps = int(round(kappa / dt))
    sigma = math.sqrt(2.0 * epsilon * dt)
    paths = np.empty((n_paths, n_steps + 1)) if store_paths else None
    x_final = np.empty(n_paths)
    for lo in range(0, n_paths, BLOCK_PATHS):
        hi = min(lo + BLOCK_PATHS, n_paths)
        gens = _path_generators(seed, lo, hi)
        X = np.full(hi - lo, float(start_x))
        if store_paths:
            paths[lo:hi, 0] = X
        done = 0
        step = 0
        while step < n_steps:
            chunk = min(CHUNK_STEPS, n_steps - step)
            noise = np.stack([g.standard_normal(chunk) for g in gens])
            for m in range(chunk):
                s = start_t + (step + m) * dt
                X = X + drift(X, s) * dt + sigma * noise[:, m]
                if store_paths:
                    paths[lo:hi, step + m + 1] = X
            step += chunk
        x_final[lo:hi] = X
    times = start_t + dt * np.arange(n_steps + 1)
    return SdeEnsemble(epsilon=epsilon, drift_kind=drift.kind, n_paths=n_paths,
                       dt=dt, seed=seed, kappa=kappa, paths=paths, times=times)


def exit_times(model, drift: DriftField, center, epsilon: float, delta: float,
               n_paths: int, dt: float, seed: int, kappa: float) -> SdeEnsemble:
    """Capped exit times from the moving delta-tube around ``center``.

    ``center`` must provide position(s) -> lifted coordinate; distances are
    measured on the circle at matching times.  Requires dt <= delta^2/(8 eps)
    so the exit scale is resolved.
    """
    if delta >= 0.5:
        raise ConfigError("exit radius must be below half the circle", field="stochastic.delta")
    if dt > delta * delta / (8.0 * epsilon):
        raise ConfigError(
            f"dt={dt} too coarse for the exit scale (need <= delta^2/(8 eps) = "
            f"{delta * delta / (8 * epsilon):.3e})", field="stochastic.dt")
    n_steps = int(round(kappa / dt))
    sigma = math.sqrt(2.0 * epsilon * dt)
    taus = np.full(n_paths, kappa)
    for lo in range(0, n_paths, BLOCK_PATHS):
        hi = min(lo + BLOCK_PATHS, n_paths)
        gens = _path_generators(seed, lo, hi)
        nb = hi - lo
        # compacted alive set; dead paths stop consuming their noise stream,
        # which leaves every surviving path's stream position untouched
        alive_idx = np.arange(nb)
        X = np.full(nb, float(center.position(0.0)))
        block_tau = np.full(nb, kappa)
        step = 0
        while step < n_steps and alive_idx.size:
            chunk = min(CHUNK_STEPS, n_steps - step)
            noise = np.stack([gens[i].standard_normal(chunk) for i in alive_idx])
            exited = np.zeros(alive_idx.size, dtype=bool)
            for m in range(chunk):
                s = (step + m) * dt
                live = ~exited
                Xl = X[live]
                Xl = Xl + drift(Xl, s) * dt + sigma * noise[live, m]
                X[live] = Xl
                g_pos = float(center.position(s + dt))
                dist = np.abs((Xl - g_pos + 0.5) % 1.0 - 0.5)
                out = dist >= delta
                if np.any(out):
                    local = np.where(live)[0][out]
                    block_tau[alive_idx[local]] = (step + m + 1) * dt
                    exited[local] = True
            keep = ~exited
            alive_idx = alive_idx[keep]
            X = X[keep]
            step += chunk
        taus[lo:hi] = block_tau
    capped = float(np.mean(taus >= kappa))
    return SdeEnsemble(epsilon=epsilon, drift_kind=drift.kind, n_paths=n_paths,
                       dt=dt, seed=seed, kappa=kappa, delta=delta,
                       tau_samples=taus, capped_fraction=capped)


@dataclass
class FwRecord:
    epsilon: float
    mean_tau: float
    ci_low: float
    ci_high: float
    eps_log_mean_tau: float
    capped_fraction: float


@dataclass
class FwReport:
    records: list[FwRecord]
    all_positive: bool
    nondecreasing: bool

    @property
    def ok(self) -> bool:
        return self.all_positive and self.nondecreasing


def exit_time_scaling(model, center, drift: DriftField, eps_list, delta: float,
                      n_paths: int, kappa: float, dt: float, seed: int,
                      capped_cap: float = 0.5) -> FwReport:
    """Freidlin-Wentzell diagnostics: eps log E(tau ^ kappa) across eps.

    PASS requires every value positive and the sequence nondecreasing as eps
    decreases, within confidence-interval overlap.  A capped fraction above
    ``capped_cap`` at the largest eps flags kappa as too small.
    """
    eps_arr = [float(e) for e in eps_list]
    records = []
    for i, eps in enumerate(eps_arr):
        ens = exit_times(model, drift, center, eps, delta, n_paths, dt,
                         seed + i, kappa)
        mean = ens.mean_tau
        ci = ens.tau_ci95
        rec = FwRecord(epsilon=eps, mean_tau=mean,
                       ci_low=mean - ci, ci_high=mean + ci,
                       eps_log_mean_tau=eps * math.log(max(mean, 1e-300)),
                       capped_fraction=ens.capped_fraction)
        records.append(rec)
    if records and records[0].capped_fraction > capped_cap:
        raise ConfigError(
            f"kappa too small: {records[0].capped_fraction:.0%} of paths capped "
            f"at the largest viscosity", field="stochastic.kappa")
    all_positive = all(r.eps_log_mean_tau > 0 for r in records)
    nondecreasing = True
    for a, b in zip(records, records[1:]):
        # CI-overlap slack: compare b against a with both intervals honored
        slack = (a.epsilon * (math.log(max(a.ci_high, 1e-300)) - math.log(max(a.mean_tau, 1e-300)))
                 + b.epsilon * (math.log(max(b.mean_tau, 1e-300)) - math.log(max(b.ci_low, 1e-300))))
        if b.eps_log_mean_tau < a.eps_log_mean_tau - slack:
            nondecreasing = False
    return FwReport(records=records, all_positive=all_positive,
                    nondecreasing=nondecreasing)


@dataclass
class StaticCenter:
    """Fixed-point stand-in for orbit centers (flat-case oracles)."""

    x: float

    def position(self, s):
        return np.broadcast_to(np.float64(self.x), np.shape(s)) if np.ndim(s) else float(self.x)


@dataclass
class LaxProbe:
    x: float
    t: float
    lhs: float
    rhs: float
    se: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


def lax_residual(model, sol: ViscousSolution, drift: DriftField, kappa: float,
                 n_paths: int, dt: float, seed: int,
                 probes=None) -> list[LaxProbe]:
    """Monte Carlo check of the stochastic representation of the viscous profile.

    With the optimal drift and the deterministic horizon kappa,
    phi(x, t) = E[ phi(X_kappa, kappa) - int L(X, U(X,s), s) ds ] - c(eps) kappa
    holds up to discretization and sampling error; each probe reports the
    two sides and the standard error of the estimator.
    """
    grid = sol.grid
    if probes is None:
        probes = [(x, 0.0) for x in (0.1, 0.3, 0.5, 0.7, 0.9)]
    out = []
    n_steps = int(round(kappa / dt))
    sigma = math.sqrt(2.0 * sol.epsilon * dt)
    for k_probe, (x0, t0) in enumerate(probes):
        acc = np.empty(n_paths)
        for lo in range(0, n_paths, BLOCK_PATHS):
            hi = min(lo + BLOCK_PATHS, n_paths)
            gens = _path_generators(seed + 7919 * k_probe, lo, hi)
            nb = hi - lo
            X = np.full(nb, float(x0))
            cost = np.zeros(nb)
            u_now = drift(X, t0)
            l_now, _ = model.lagrangian(X, u_now, t0)
            step = 0
            while step < n_steps:
                chunk = min(CHUNK_STEPS, n_steps - step)
                noise = np.stack([g.standard_normal(chunk) for g in gens])
                for m in range(chunk):
                    s = t0 + (step + m) * dt
                    X = X + u_now * dt + sigma * noise[:, m]
                    u_next = drift(X, s + dt)
                    l_next, _ = model.lagrangian(X, u_next, s + dt)
                    cost += 0.5 * (l_now + l_next) * dt
                    u_now, l_now = u_next, l_next
                step += chunk
            terminal = _interp_phi(sol, X, (t0 + kappa) % 1.0)
            acc[lo:hi] = terminal - cost
        rhs = float(np.mean(acc)) - sol.c_eps * kappa
        se = float(np.std(acc, ddof=1)) / math.sqrt(n_paths)
        lhs = float(_interp_phi(sol, np.array([x0]), t0 % 1.0)[0])
        out.append(LaxProbe(x=x0, t=t0, lhs=lhs, rhs=rhs, se=se))
    return out


def _interp_phi(sol: ViscousSolution, x, t: float):
    """Bilinear interpolation of the profile at positions x, scalar time t."""
    grid = sol.grid
    nx, nt = grid.nx, grid.nt
    xv = np.asarray(x, dtype=float) % 1.0
    pos = xv * nx
    i0 = np.floor(pos).astype(int) % nx
    wx = pos - np.floor(pos)
    tpos = (t % 1.0) * nt
    j0 = int(math.floor(tpos)) % nt
    wt = tpos - math.floor(tpos)
    j1 = (j0 + 1) % nt
    # crossing the period boundary re-enters the profile with zero offset:
    # phi is 1-periodic in time by construction
    v00 = sol.phi[i0, j0]
    v10 = sol.phi[(i0 + 1) % nx, j0]
    v01 = sol.phi[i0, j1]
    v11 = sol.phi[(i0 + 1) % nx, j1]
    return (1 - wt) * ((1 - wx) * v00 + wx * v10) + wt * ((1 - wx) * v01 + wx * v11)
