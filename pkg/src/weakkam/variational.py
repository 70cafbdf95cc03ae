"""Discrete Lax-Oleinik machinery on a space-time grid.

A period of the flow is discretized into ``nt`` substeps; within a substep a
path moves along a straight segment between grid nodes, paying the Lagrangian
quoted at the segment midpoint in space and time.  Everything downstream is
min-plus algebra over these substep kernels:

* the critical value is minus the minimum mean (per period) over closed cycles
  of the chained kernels, computed independently by Karp's algorithm on the
  one-period composed graph and by min-plus power iteration;
* anchored Peierls barriers come from backward value iteration seeded at an
  orbit anchor, with the liminf realized as the minimum over a trailing window
  of whole periods;
* the action potential is the running minimum over all finite iterates.

Unreached states are explicit ``inf`` entries of the value fields (the neutral
element of (min, +)); kernel tables themselves contain only finite costs for
the allowed displacements.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigError, ConvergenceError, NumericalQualityError, WeakKamError

INF = np.inf


@dataclass(frozen=True)
class GridSpec:
    """nx spatial nodes on [0,1), nt substeps per unit time."""

    nx: int
    nt: int

    def __post_init__(self):
        if self.nx < 2 or self.nt < 1:
            raise ConfigError(f"grid must have nx >= 2, nt >= 1, got {self.nx}x{self.nt}",
                              field="grid")

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    def nodes(self) -> np.ndarray:
        return np.arange(self.nx) / self.nx

    def substep_times(self) -> np.ndarray:
        return np.arange(self.nt) / self.nt


@dataclass
class ActionKernelSet:
    """Substep cost tables K_j[d, a] for moves node a -> a + offsets[d]."""

    grid: GridSpec
    vmax: float
    offsets: np.ndarray              # integer node displacements, shape (ndisp,)
    costs: list[np.ndarray]          # nt tables, each (ndisp, nx), all finite
    time_independent: bool = False

    @property
    def dmax(self) -> int:
        return int(self.offsets[-1])

    def target_index(self) -> np.ndarray:
        """(ndisp, nx) table of arrival nodes (a + d) mod nx."""
        nx = self.grid.nx
        return (np.arange(nx)[None, :] + self.offsets[:, None]) % nx


def build_kernels(model, grid: GridSpec, vmax: float = 4.0,
                  space_quote: str = "midpoint") -> ActionKernelSet:
    """Cost tables K_j(a -> b) = L(x_quote, v, t_mid)/nt for |v| <= vmax.

    ``space_quote`` selects where the potential is sampled along the segment:
    ``"midpoint"`` (default, second-order without a telescoping boundary bias)
    or ``"start"`` (first-order endpoint rule).
    """
    nx, nt = grid.nx, grid.nt
    dmax = int(math.floor(vmax * nx / nt))
    if dmax < 2:
        raise ConfigError(
            f"velocity cap {vmax} resolves fewer than two neighbors per substep "
            f"on a {nx}x{nt} grid (need vmax/nt >= 2/nx)", field="numerics.vmax")
    if dmax > nx // 2:
        dmax = nx // 2
    if space_quote not in ("midpoint", "start"):
        raise ConfigError(f"unknown space_quote {space_quote!r}")
    offsets = np.arange(-dmax, dmax + 1)
    velocities = offsets * (nt / nx)
    xa = grid.nodes()
    costs = []
    time_independent = getattr(model, "family", None) in ("mechanical", "shifted_kinetic")
    for j in range(nt if not time_independent else 1):
        t_mid = (j + 0.5) / nt
        if space_quote == "midpoint":
            xq = xa[None, :] + offsets[:, None] / (2.0 * nx)
        else:
            xq = np.broadcast_to(xa, (offsets.size, nx)).copy()
        lval, _ = model.lagrangian(xq, np.broadcast_to(velocities[:, None], xq.shape), t_mid)
        costs.append(np.ascontiguousarray(lval / nt))
    if time_independent:
        costs = costs * nt
    return ActionKernelSet(grid=grid, vmax=vmax, offsets=offsets, costs=costs,
                           time_independent=time_independent)


def _backward_apply(cost: np.ndarray, tgt: np.ndarray, u_next: np.ndarray) -> np.ndarray:
    """(min,+) application u(a) = min_d cost[d,a] + u_next[(a+d) mod nx]."""
    return np.min(cost + u_next[tgt], axis=0)


def _dense_from_kernel(cost: np.ndarray, offsets: np.ndarray, nx: int) -> np.ndarray:
    cols = np.arange(nx)
    W = np.full((nx, nx), INF)
    for i, d in enumerate(offsets):
        tgt = (cols + d) % nx
        W[cols, tgt] = np.minimum(W[cols, tgt], cost[i, :])
    return W


def _minplus_product(A: np.ndarray, B: np.ndarray, row_chunk: int = 16) -> np.ndarray:
    """(min,+) matrix product with bounded temporaries."""
    n = A.shape[0]
    out = np.empty((n, n))
    with np.errstate(invalid="ignore"):
        for lo in range(0, n, row_chunk):
            hi = min(lo + row_chunk, n)
            out[lo:hi] = np.min(A[lo:hi, :, None] + B[None, :, :], axis=1)
    return out


def compose_period(kernels: ActionKernelSet) -> np.ndarray:
    """Dense one-period cost matrix W[a, b] = min path cost a -> b over nt substeps."""
    nx, nt = kernels.grid.nx, kernels.grid.nt
    offsets = kernels.offsets
    cols = np.arange(nx)
    if kernels.time_independent:
        # all substeps share one kernel: binary exponentiation of the dense matrix
        base = _dense_from_kernel(kernels.costs[0], offsets, nx)
        result = None
        power = base
        n = nt
        while n:
            if n & 1:
                result = power if result is None else _minplus_product(result, power)
            n >>= 1
            if n:
                power = _minplus_product(power, power)
        return result
    W = _dense_from_kernel(kernels.costs[0], offsets, nx)
    for j in range(1, nt):
        cj = kernels.costs[j]
        W_new = np.full((nx, nx), INF)
        for i, d in enumerate(offsets):
            src = (cols - d) % nx
            cand = W[:, src] + cj[i, src][None, :]
            np.minimum(W_new, cand, out=W_new)
        W = W_new
    return W


@dataclass
class CriticalValueResult:
    """Critical value with both independent estimates attached."""

    c: float
    c_karp: float
    c_power: float
    power_cycle_length: int
    power_iterations: int
    exact_regime: bool

    @property
    def agreement(self) -> float:
        return abs(self.c_karp - self.c_power)


def _karp_min_mean(W: np.ndarray) -> float:
    """Karp's minimum mean cycle on a dense (min,+) weight matrix."""
    nx = W.shape[0]
    n = nx
    D = np.full((n + 1, nx), INF)
    D[0, 0] = 0.0
    for k in range(n):
        with np.errstate(invalid="ignore"):
            D[k + 1] = np.min(D[k][:, None] + W, axis=0)
    if not np.all(np.isfinite(D[n])):
        raise ConfigError("reachability graph is disconnected at this vmax/grid",
                          field="numerics.vmax")
    ks = np.arange(n)
    with np.errstate(invalid="ignore"):
        ratios = (D[n][None, :] - D[:n]) / (n - ks)[:, None]
    ratios = np.where(np.isfinite(D[:n]), ratios, -INF)
    per_node = np.max(ratios, axis=0)
    return float(np.min(per_node))


def _power_min_mean(W: np.ndarray, max_iters: int, sigma_max: int = 128,
                    check_every: int = 4, tol: float = 1e-10):
    """Min-plus power iteration; detects the exact eventually-periodic regime.

    Returns (mean, cycle_length, iterations, exact) where exact=False marks
    the Cesaro fallback.
    """
    nx = W.shape[0]
    sigma_max = min(sigma_max, max_iters - 1)
    hist = np.zeros((sigma_max + 1, nx))
    v = np.zeros(nx)
    hist[0] = v
    for n in range(1, max_iters + 1):
        v = np.min(W + v[None, :], axis=1)
        hist[n % (sigma_max + 1)] = v
        if n >= sigma_max and n % check_every == 0:
            scale = max(1.0, float(np.max(np.abs(v))))
            for sigma in range(1, sigma_max + 1):
                r = v - hist[(n - sigma) % (sigma_max + 1)]
                if float(np.ptp(r)) <= tol * scale:
                    return float(np.mean(r)) / sigma, sigma, n, True
    # Cesaro fallback over the longest available stride
    r = v - hist[(n - sigma_max) % (sigma_max + 1)]
    return float(np.mean(r)) / sigma_max, sigma_max, n, False


def critical_value(kernels: ActionKernelSet, power_max_iters: int = 4000,
                   agreement_tol: float = 1e-6) -> CriticalValueResult:
    """Critical value c = -(minimum mean cycle) of the one-period composed graph.

    Karp's algorithm and min-plus power iteration must agree within
    ``agreement_tol``; disagreement raises NumericalQualityError.
    """
    W = compose_period(kernels)
    lam_karp = _karp_min_mean(W)
    lam_power, sigma, iters, exact = _power_min_mean(W, power_max_iters)
    if abs(lam_karp - lam_power) > agreement_tol:
        raise NumericalQualityError(
            f"critical value estimates disagree: Karp {-lam_karp:.9g} vs "
            f"power iteration {-lam_power:.9g}")
    return CriticalValueResult(c=-lam_karp, c_karp=-lam_karp, c_power=-lam_power,
                               power_cycle_length=sigma, power_iterations=iters,
                               exact_regime=exact)


@dataclass
class BarrierField:
    """Anchored barrier h(., ., anchor) and action potential on the grid.

    ``h[a, j]`` approximates the barrier from node a at substep j to the
    anchor point (anchor_x, [0]); ``phi_pot`` is the minimum over all finite
    transfer times.
    """

    anchor_x: float
    anchor_node: int
    anchor_offset: float
    grid: GridSpec
    c_used: float
    window: int
    h: np.ndarray
    phi_pot: np.ndarray
    window_osc: float
    n_sweeps: int
    osc_trace: list = field(default_factory=list)
    orbit_ref: int = -1

    def value_at(self, x, j: int, which: str = "h"):
        """Linear interpolation of the field along x at substep column j."""
        arr = self.h if which == "h" else self.phi_pot
        nx = self.grid.nx
        pos = (np.asarray(x, dtype=float) % 1.0) * nx
        i0 = np.floor(pos).astype(int) % nx
        w = pos - np.floor(pos)
        return (1.0 - w) * arr[i0, j] + w * arr[(i0 + 1) % nx, j]


def anchored_barrier(kernels: ActionKernelSet, c: float, anchor_x: float,
                     window: int, barrier_tol: float = 1e-7,
                     max_sweeps: int = 400, min_sweeps: int | None = None,
                     patience: int | None = None, orbit_ref: int = -1) -> BarrierField:
    """Backward value iteration from an indicator seed at the anchor.

    Each sweep propagates the cost-to-anchor field through one more whole
    period (adding c per period); the barrier is the minimum over the trailing
    ``window`` sweeps, iterated until that window minimum stops moving.
    """
    grid = kernels.grid
    nx, nt = grid.nx, grid.nt
    if window < 1:
        raise WeakKamError("window must be >= 1")
    anchor_node = int(round((anchor_x % 1.0) * nx)) % nx
    anchor_offset = abs((anchor_x % 1.0) - anchor_node / nx)
    anchor_offset = min(anchor_offset, 1.0 - anchor_offset)
    tgt = kernels.target_index()
    c_sub = c / nt

    w_cur = np.full(nx, INF)
    w_cur[anchor_node] = 0.0
    phi = np.full((nx, nt), INF)
    phi[anchor_node, 0] = 0.0

    recent: list[np.ndarray] = []
    h_prev = None
    window_osc = INF
    osc_trace: list[float] = []
    if min_sweeps is None:
        min_sweeps = max(2 * window + 4, 12)
    if patience is None:
        patience = max(2 * window, 6)
    stable = 0
    n_sweeps = 0
    g = np.empty((nx, nt))
    for sweep in range(1, max_sweeps + 1):
        u = w_cur
        for j in range(nt - 1, -1, -1):
            u = _backward_apply(kernels.costs[j], tgt, u) + c_sub
            g[:, j] = u
        w_cur = g[:, 0].copy()
        np.minimum(phi, g, out=phi)
        recent.append(g.copy())
        if len(recent) > window:
            recent.pop(0)
        h_now = np.minimum.reduce(recent) if len(recent) > 1 else recent[0].copy()
        n_sweeps = sweep
        if h_prev is not None:
            both_inf = np.isinf(h_prev) & np.isinf(h_now)
            diff = np.where(both_inf, 0.0, np.abs(h_now - h_prev))
            window_osc = float(np.max(diff)) if np.all(np.isfinite(diff)) else INF
            osc_trace.append(window_osc)
            if sweep >= min_sweeps and np.all(np.isfinite(h_now)) \
                    and window_osc <= barrier_tol:
                stable += 1
                if stable >= patience:
                    h_prev = h_now
                    break
            else:
                stable = 0
        h_prev = h_now
    else:
        raise ConvergenceError(
            f"barrier iteration did not settle in {max_sweeps} sweeps "
            f"(last window oscillation {window_osc:.3e})", trace=osc_trace)

    return BarrierField(anchor_x=anchor_x, anchor_node=anchor_node,
                        anchor_offset=anchor_offset, grid=grid, c_used=c,
                        window=window, h=h_prev, phi_pot=phi,
                        window_osc=window_osc, n_sweeps=n_sweeps,
                        osc_trace=osc_trace, orbit_ref=orbit_ref)


def action_potential_pair(field_i: BarrierField, field_j: BarrierField,
                          max_offset_cells: float = 1.0):
    """Barrier matrix entries (h(x_i, x_j), Phi(x_i, x_j)) read off field_j.

    field_j is anchored at x_j; its value at the node nearest x_i gives the
    cost from (x_i, [0]) to (x_j, [0]).  Anchors more than one cell off-grid
    are refused.
    """
    nx = field_j.grid.nx
    if not math.isfinite(field_i.anchor_x):
        raise WeakKamError(f"non-finite anchor {field_i.anchor_x!r}")
    xi = field_i.anchor_x % 1.0
    node = int(round(xi * nx)) % nx
    offset = abs(xi - node / nx)
    offset = min(offset, 1.0 - offset)
    if offset > max_offset_cells / nx:
        raise WeakKamError(
            f"anchor {xi} is {offset * nx:.2f} cells off the grid of field {field_j.anchor_x}")
    return float(field_j.h[node, 0]), float(field_j.phi_pot[node, 0])


def barrier_matrix(fields: list[BarrierField]):
    """All pairwise entries h[i, j] = h(anchor_i, anchor_j), and Phi likewise."""
    m = len(fields)
    H = np.empty((m, m))
    Phi = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            H[i, j], Phi[i, j] = action_potential_pair(fields[i], fields[j])
    return H, Phi


@dataclass
class AubryResidual:
    orbit_ref: int
    residual: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.residual <= self.tol


def aubry_verify(fields: list[BarrierField], orbits, aubry_tol: float = 0.02):
    """Barrier diagonal along each candidate orbit's own trace.

    For orbit i the residual is max over substep samples (x(t), [t]) of
    |h_i(x(t), [t])|; it vanishes (to grid error) exactly on the Aubry set.
    """
    out = []
    for fld, orbit in zip(fields, orbits):
        nt = fld.grid.nt
        vals = []
        for j in range(nt * orbit.period):
            t = j / nt
            x = float(orbit.position(t) % 1.0)
            vals.append(abs(float(fld.value_at(x, j % nt))))
        out.append(AubryResidual(orbit_ref=fld.orbit_ref, residual=max(vals),
                                 tol=aubry_tol))
    return out


def min_cycle_residual(kernels: ActionKernelSet, c: float) -> float:
    """Minimum mean cycle of the kernels with c/nt added per arc (should be ~0)."""
    shifted = ActionKernelSet(
        grid=kernels.grid, vmax=kernels.vmax, offsets=kernels.offsets,
        costs=[cost + c / kernels.grid.nt for cost in kernels.costs],
        time_independent=kernels.time_independent)
    W = compose_period(shifted)
    return _karp_min_mean(W)
