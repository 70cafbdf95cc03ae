"""Vanishing-viscosity analysis: sweeps, the selection limit, and rescaling checks.

The selected limit profile is built from the anchored barriers of the orbits
minimizing the averaged barrier Laplacian: phi0 = max_i (phi0(anchor_i) - h_i)
over the minimizing set, and the eps-sweep compares each normalized viscous
profile against it.  The period-rescaling check verifies that barriers and
averaged Laplacians transform consistently when one period of the rescaled
flow H_N(x, p, t) = H(x, Np, Nt) packs N original periods.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import CompatibilityError, WeakKamError
from .dynamics import PeriodicOrbit, aubry_orbits, find_periodic_orbit, PhasePoint
from .model import MECHANICAL, TRAVELING_WAVE, HamiltonianModel, PotentialSpec
from .orbit_hessian import (HessianCurve, LambdaReport, fd_crosscheck,
                            lambda_averages, unstable_hessian_curve)
from .variational import (BarrierField, GridSpec, anchored_barrier, aubry_verify,
                          barrier_matrix, build_kernels, critical_value)
from .viscous import ViscousSolution, solve_cell


@dataclass(frozen=True)
class RescaledModel:
    """Evaluation rule H_N(x, p, t) = H(x, Np, Nt) wrapping a base model.

    Quacks like a HamiltonianModel for the flow, kernel and Hessian machinery;
    the rescaled Lagrangian is L_N(x, v, t) = L(x, v/N, Nt).
    """

    base: HamiltonianModel
    N: int

    @property
    def family(self) -> str:
        return self.base.family

    @property
    def wind(self) -> int:
        return self.base.wind

    @property
    def potential(self):
        return self.base.potential

    @property
    def momentum_offset(self) -> float:
        return self.base.momentum_offset / self.N

    @property
    def energy_offset(self) -> float:
        return self.base.energy_offset

    def hamiltonian(self, x, p, t=0.0):
        return self.base.hamiltonian(x, self.N * np.asarray(p, dtype=float),
                                     self.N * np.asarray(t, dtype=float))

    def jet(self, x, p, t=0.0):
        from .model import Jet
        N = self.N
        j = self.base.jet(x, N * np.asarray(p, dtype=float), N * np.asarray(t, dtype=float))
        return Jet(H=j.H, H_p=N * j.H_p, H_x=j.H_x, H_t=N * j.H_t,
                   H_pp=N * N * j.H_pp, H_xp=N * j.H_xp, H_xx=j.H_xx)

    def lagrangian(self, x, v, t=0.0):
        N = self.N
        lval, lv = self.base.lagrangian(x, np.asarray(v, dtype=float) / N,
                                        N * np.asarray(t, dtype=float))
        return lval, lv / N


def orbit_window(orbits: list[PeriodicOrbit]) -> int:
    """Least common multiple of the orbit periods."""
    window = 1
    for orbit in orbits:
        window = window * orbit.period // math.gcd(window, orbit.period)
    return window


def predicted_limit(anchor_values, fields: list[BarrierField], argmin: list[int],
                    H: np.ndarray, grid_tol: float = 0.02) -> np.ndarray:
    """phi0 = max over minimizing orbits of (anchor value - barrier field).

    Anchor values must satisfy the compatibility bound
    value_j - value_i <= h(anchor_i, anchor_j) + grid_tol for all pairs.
    """
    values = np.asarray(anchor_values, dtype=float)
    m = len(fields)
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            if values[j] - values[i] > H[i, j] + grid_tol:
                raise CompatibilityError(
                    f"anchor values incompatible: value[{j}] - value[{i}] = "
                    f"{values[j] - values[i]:.6f} > h({i},{j}) = {H[i, j]:.6f} + tol",
                    pair=(i, j))
    stack = [values[i] - fields[i].h for i in argmin]
    return np.maximum.reduce(stack)


def local_max_set(anchor_values, H: np.ndarray, grid_tol: float = 0.02) -> list[int]:
    """Indices whose orbit is a local maximum of the represented solution.

    Orbit i qualifies when value_i > value_j - h(anchor_i, anchor_j) holds
    strictly (with grid slack) for every j != i.
    """
    values = np.asarray(anchor_values, dtype=float)
    out = []
    for i in range(len(values)):
        ok = all(values[i] > values[j] - H[i, j] - grid_tol
                 for j in range(len(values)) if j != i)
        if ok:
            out.append(i)
    return out


@dataclass
class SweepReport:
    eps_list: list[float]
    c_records: list[float]
    c0: float
    slope_secants: list[float]
    slope_fit: float
    lambda_bar: float
    lambdas: list[float]
    selected: list[int]
    anchors: list[float]
    limit_errors: list[float]
    grad_errors: list[float]
    lip_records: list[float]
    semiconvexity_records: list[float]
    anchor_values: list[float]
    solutions: list[ViscousSolution] = field(default_factory=list)
    fields: list[BarrierField] = field(default_factory=list)
    orbits: list[PeriodicOrbit] = field(default_factory=list)
    curves: list[HessianCurve] = field(default_factory=list)
    barrier_h: np.ndarray | None = None
    predicted: np.ndarray | None = None


@dataclass
class SlopeVerdict:
    slope_fit: float
    lambda_bar: float
    secants: list[float]
    lower_bound_ok: bool
    fit_ok: bool
    worst_secant_margin: float

    @property
    def ok(self) -> bool:
        return self.lower_bound_ok and self.fit_ok


def slope_fit(report: SweepReport, slope_tol: float = 0.15) -> SlopeVerdict:
    """Fitted right-derivative of c(eps) at zero against -lambda_bar.

    Verdict: every secant obeys the -lambda_bar(1 + tol) lower bound, and the
    linear fit over the smallest half of the eps list lands within tol of
    -lambda_bar.
    """
    if len(report.eps_list) < 3:
        raise WeakKamError("slope_fit needs at least three viscosity values")
    lam = report.lambda_bar
    secants = report.slope_secants
    lower_ok = all(s >= -lam * (1.0 + slope_tol) for s in secants)
    margin = min(s + lam * (1.0 + slope_tol) for s in secants)
    fit = report.slope_fit
    fit_ok = abs(fit + lam) <= slope_tol * lam
    return SlopeVerdict(slope_fit=fit, lambda_bar=lam, secants=list(secants),
                        lower_bound_ok=lower_ok, fit_ok=fit_ok,
                        worst_secant_margin=margin)


def _fit_smallest_half(eps_list, c_records):
    eps = np.asarray(eps_list, dtype=float)
    cs = np.asarray(c_records, dtype=float)
    order = np.argsort(eps)
    k = max(2, len(eps) // 2)
    sel = order[:k]
    coef = np.polyfit(eps[sel], cs[sel], 1)
    return float(coef[0])


def sweep(model, eps_list, grid: GridSpec, vmax: float = 4.0,
          cell_tol: float = 1e-6, barrier_tol: float = 1e-7,
          shoot_tol: float = 1e-10, grid_tol: float = 0.02,
          aubry_tol: float = 0.02, lip_cap: float = 4.0,
          max_periods: int = 600, max_sweeps: int = 400,
          grad_band_cells: int = 5, orbits=None) -> SweepReport:
    """Full pipeline: orbits -> c(0) -> barriers -> lambdas -> eps solves -> limits."""
    eps_arr = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_arr, eps_arr[1:])):
        raise WeakKamError("eps_list must be strictly decreasing")

    if orbits is None:
        orbits = aubry_orbits(model, shoot_tol=shoot_tol)
    kernels = build_kernels(model, grid, vmax=vmax)
    c0 = critical_value(kernels).c
    window = orbit_window(orbits)
    fields = [anchored_barrier(kernels, c0, o.anchor.x, window=window,
                               barrier_tol=barrier_tol, max_sweeps=max_sweeps,
                               orbit_ref=i)
              for i, o in enumerate(orbits)]
    residuals = aubry_verify(fields, orbits, aubry_tol=aubry_tol)
    bad = [r.orbit_ref for r in residuals if not r.ok]
    if bad:
        raise WeakKamError(f"orbits {bad} failed the barrier-diagonal check")

    curves = [unstable_hessian_curve(model, o, orbit_ref=i)
              for i, o in enumerate(orbits)]
    lam_rep = lambda_averages(curves)
    selected = lam_rep.argmin
    sel_anchor = orbits[selected[0]].anchor.x
    norm_node = int(round((sel_anchor % 1.0) * grid.nx)) % grid.nx

    solutions = [solve_cell(model, eps, grid, cell_tol=cell_tol,
                            max_periods=max_periods, lip_cap=lip_cap,
                            normalize_node=norm_node)
                 for eps in eps_arr]

    H, _ = barrier_matrix(fields)
    # anchor values of the limit: zero at the selected orbit, the rest read
    # off the smallest-viscosity profile
    finest = solutions[-1]
    anchor_values = []
    for o in orbits:
        node = int(round((o.anchor.x % 1.0) * grid.nx)) % grid.nx
        anchor_values.append(float(finest.phi[node, 0]))
    anchor_values[selected[0]] = 0.0
    predicted = predicted_limit(anchor_values, fields, selected, H, grid_tol=grid_tol)

    limit_errors = [float(np.max(np.abs(s.phi - predicted))) for s in solutions]

    # gradient mismatch on a band around the selected orbit
    nx, nt = grid.nx, grid.nt
    dx = grid.dx
    def centered_grad(f):
        return (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2 * dx)
    gpred = centered_grad(predicted)
    sel_orbit = orbits[selected[0]]
    grad_errors = []
    for s in solutions:
        gsol = centered_grad(s.phi)
        worst = 0.0
        for j in range(nt):
            xo = float(sel_orbit.position(j / nt) % 1.0)
            i0 = int(round(xo * nx)) % nx
            idx = (i0 + np.arange(-grad_band_cells, grad_band_cells + 1)) % nx
            worst = max(worst, float(np.max(np.abs(gsol[idx, j] - gpred[idx, j]))))
        grad_errors.append(worst)

    secants = [(s.c_eps - c0) / s.epsilon for s in solutions]
    fit = _fit_smallest_half(eps_arr, [s.c_eps for s in solutions])

    return SweepReport(
        eps_list=eps_arr,
        c_records=[s.c_eps for s in solutions],
        c0=c0,
        slope_secants=secants,
        slope_fit=fit,
        lambda_bar=lam_rep.lambda_bar,
        lambdas=lam_rep.lambdas,
        selected=selected,
        anchors=[o.anchor.x for o in orbits],
        limit_errors=limit_errors,
        grad_errors=grad_errors,
        lip_records=[s.lip_x for s in solutions],
        semiconvexity_records=[s.semiconvexity_const for s in solutions],
        anchor_values=anchor_values,
        solutions=solutions,
        fields=fields,
        orbits=orbits,
        curves=curves,
        barrier_h=H,
        predicted=predicted,
    )


@dataclass
class RescaleReport:
    N: int
    vacuous: bool
    barrier_identity_error: float
    worst_node: tuple
    lambda_errors: list[float]
    c_original: float
    c_rescaled: float

    def ok(self, barrier_tol: float = 0.02, lambda_tol: float = 1e-6) -> bool:
        if self.vacuous:
            return True
        return (self.barrier_identity_error <= barrier_tol
                and all(e <= lambda_tol for e in self.lambda_errors))


def rescale_check(model, orbits: list[PeriodicOrbit], grid: GridSpec,
                  vmax: float = 4.0, barrier_tol: float = 1e-7,
                  shoot_tol: float = 1e-5, max_sweeps: int = 400) -> RescaleReport:
    """Compare anchored barriers and averaged Laplacians across period rescaling.

    With N the lcm of the orbit periods, one period of H_N packs N periods of
    H: the original barrier must equal N times the minimum over the rescaled
    barriers anchored at the N_i time-translates of each orbit, and the
    rescaled averaged Laplacian (compensated by the packing factor N) must
    reproduce lambda_i.
    """
    N = orbit_window(orbits)
    if N == 1:
        return RescaleReport(N=1, vacuous=True, barrier_identity_error=0.0,
                             worst_node=(), lambda_errors=[], c_original=0.0,
                             c_rescaled=0.0)
    rmodel = RescaledModel(model, N)
    kernels = build_kernels(model, grid, vmax=vmax)
    c = critical_value(kernels).c

    rgrid = GridSpec(grid.nx, grid.nt * N)
    rkernels = build_kernels(rmodel, rgrid, vmax=vmax * N)
    c_r = critical_value(rkernels).c

    worst_err = 0.0
    worst_node = ()
    lambda_errors = []
    for orbit in orbits:
        field0 = anchored_barrier(kernels, c, orbit.anchor.x, window=N,
                                  barrier_tol=barrier_tol, max_sweeps=max_sweeps)
        curve0 = unstable_hessian_curve(model, orbit)
        rfields = []
        for j in range(1, orbit.period + 1):
            anchor_j = float(orbit.position(-float(j)) % 1.0)
            p_j = float(orbit.momentum(-float(j))) / N
            rorbit = find_periodic_orbit(
                rmodel, PhasePoint(anchor_j, p_j, 0.0), 1,
                winding=orbit.winding * (N // orbit.period),
                shoot_tol=shoot_tol)
            rfields.append(anchored_barrier(rkernels, c_r, rorbit.anchor.x,
                                            window=1, barrier_tol=barrier_tol,
                                            max_sweeps=max_sweeps))
            rcurve = unstable_hessian_curve(rmodel, rorbit)
            lambda_errors.append(abs(N * rcurve.lambda_i - curve0.lambda_i))
        stack = np.stack([f.h for f in rfields])
        rescaled_min = N * np.min(stack, axis=0)
        # original substep s maps to rescaled substep s (rescaled grid is N x finer in phase)
        for s in range(grid.nt):
            err_col = np.abs(field0.h[:, s] - rescaled_min[:, s])
            m = float(np.max(err_col))
            if m > worst_err:
                worst_err = m
                worst_node = (int(np.argmax(err_col)), s)
    return RescaleReport(N=N, vacuous=False, barrier_identity_error=worst_err,
                         worst_node=worst_node, lambda_errors=lambda_errors,
                         c_original=c, c_rescaled=c_r)


@dataclass
class ExampleReport:
    k: int
    maxima: list[float]
    orbit_count_ok: bool
    translate_residual: float
    riccati_errors: list[float]
    fd_deviations: list[float]
    shift_consistency_error: float
    expected_curvatures: list[float]

    def ok(self, riccati_tol: float = 1e-3, fd_tol: float = 0.05,
           shift_tol: float = 0.02) -> bool:
        return (self.orbit_count_ok
                and all(e <= riccati_tol for e in self.riccati_errors)
                and all(d <= fd_tol for d in self.fd_deviations)
                and self.shift_consistency_error <= shift_tol)


def example_verify(k: int, potential: PotentialSpec, grid: GridSpec,
                   vmax: float = 4.0, shoot_tol: float = 1e-5,
                   barrier_tol: float = 1e-7, max_sweeps: int = 400) -> ExampleReport:
    """Traveling-wave verification: orbits, curvature law, barrier transport.

    Checks that (a) the orbits are the k-translates of the cell maxima,
    (b) the curvature of -h along each orbit equals -sqrt(-V'') there, via
    both the propagated-subspace average and the grid second difference,
    (c) the barrier is carried by the wave: h(x, [t], anchor) equals the
    autonomous barrier to the nearest of the k translate anchors evaluated at
    x + t/k.
    """
    model = HamiltonianModel(family=TRAVELING_WAVE, potential=potential, wind=k)
    orbits = aubry_orbits(model, shoot_tol=shoot_tol, confirm=False)
    from .dynamics import potential_maxima
    maxima = potential_maxima(model)
    orbit_count_ok = len(orbits) == len(maxima) and all(o.period == k for o in orbits)

    kernels = build_kernels(model, grid, vmax=vmax)
    c = critical_value(kernels).c
    window = orbit_window(orbits)

    # autonomous companion on the same grid
    auto = HamiltonianModel(family=MECHANICAL, potential=potential)
    akernels = build_kernels(auto, grid, vmax=vmax)
    c_a = critical_value(akernels).c

    translate_residual = 0.0
    riccati_errors = []
    fd_deviations = []
    shift_err = 0.0
    expected = []
    nx, nt = grid.nx, grid.nt
    nodes = grid.nodes()
    for i, orbit in enumerate(orbits):
        lam_true = math.sqrt(-potential.d2(maxima[i]))
        expected.append(lam_true)
        # (a) integer-time positions hit the translates
        for j in range(k):
            pos = float(orbit.position(float(j)) % 1.0)
            want = (maxima[i] - j / k) % 1.0
            gap = abs(pos - want)
            translate_residual = max(translate_residual, min(gap, 1.0 - gap))
        # (b) curvature along the orbit
        curve = unstable_hessian_curve(model, orbit)
        riccati_errors.append(abs(curve.lambda_i - lam_true))
        fld = anchored_barrier(kernels, c, orbit.anchor.x, window=window,
                               barrier_tol=barrier_tol, max_sweeps=max_sweeps,
                               orbit_ref=i)
        rep = fd_crosscheck(fld, orbit, curve)
        fd_deviations.append(abs(rep.fd_value - lam_true) / lam_true)
        # (c) transport consistency against the autonomous field
        afld = anchored_barrier(akernels, c_a, maxima[i], window=1,
                                barrier_tol=barrier_tol, max_sweeps=max_sweeps)
        for j in range(nt):
            t = j / nt
            y = (nodes + t / k) % 1.0
            vals = [afld.value_at((y - jj / k) % 1.0, 0) for jj in range(k)]
            oracle = np.minimum.reduce(vals)
            shift_err = max(shift_err, float(np.max(np.abs(fld.h[:, j] - oracle))))
    return ExampleReport(k=k, maxima=maxima, orbit_count_ok=orbit_count_ok,
                         translate_residual=translate_residual,
                         riccati_errors=riccati_errors,
                         fd_deviations=fd_deviations,
                         shift_consistency_error=shift_err,
                         expected_curvatures=expected)
