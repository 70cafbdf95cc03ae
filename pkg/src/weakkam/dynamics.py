"""Hamiltonian flow integration, periodic-orbit shooting and Floquet analysis.

The flow is x' = H_p, p' = -H_x, integrated with a fixed-step classical RK4
scheme, optionally together with the variational (tangent) dynamics

    dx' = H_xp dx + H_pp dp,      dp' = -H_xx dx - H_xp dp,

from the identity matrix.  Orbits of integer period are found by Newton
iteration on the return-map residual; hyperbolicity is read off the
monodromy's eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import math

import numpy as np
from scipy.optimize import brentq

from .errors import IntegrationError, NumericalQualityError, OrbitNotFoundError, WeakKamError
from .model import MECHANICAL, SHIFTED_KINETIC, TRAVELING_WAVE, HamiltonianModel

DEFAULT_MAX_STEP = 1e-3


@dataclass(frozen=True)
class PhasePoint:
    """Point (x, p) at time t; x is a circle coordinate, lifts are tracked separately."""

    x: float
    p: float
    t: float = 0.0


@dataclass
class Trajectory:
    """Dense output of one integration; ``x`` is the lifted (unwrapped) coordinate."""

    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    fundamental: np.ndarray | None = None  # shape (n, 2, 2) when requested
    det_product: float = 1.0               # product of per-step tangent determinants

    @property
    def end(self) -> tuple[float, float]:
        return float(self.x[-1]), float(self.p[-1])


@dataclass
class PeriodicOrbit:
    """Integer-period orbit with monodromy and Floquet data attached."""

    period: int
    anchor: PhasePoint
    times: np.ndarray
    x: np.ndarray                    # lifted samples over one period, closed
    p: np.ndarray
    winding: int
    monodromy: np.ndarray
    floquet_exponents: np.ndarray
    hyperbolic: bool
    residual: float
    det_product: float = 1.0
    newton_iterations: int = 0

    def position(self, t) -> np.ndarray:
        """Lifted orbit position at times t (periodically extended)."""
        t = np.asarray(t, dtype=float)
        wraps = np.floor(t / self.period)
        tau = t - wraps * self.period
        xs = np.interp(tau, self.times, self.x)
        return xs + wraps * self.winding

    def momentum(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        tau = t - np.floor(t / self.period) * self.period
        return np.interp(tau, self.times, self.p)


def _rhs(model: HamiltonianModel, x: float, p: float, t: float):
    jet = model.jet(x, p, t)
    return jet.H_p, -jet.H_x


def _rhs_jac(model: HamiltonianModel, x: float, p: float, t: float):
    jet = model.jet(x, p, t)
    J = np.array([[jet.H_xp, jet.H_pp], [-jet.H_xx, -jet.H_xp]])
    return jet.H_p, -jet.H_x, J


def integrate(model: HamiltonianModel, start: PhasePoint, duration: float,
              steps: int | None = None, with_variational: bool = False,
              max_step: float = DEFAULT_MAX_STEP) -> Trajectory:
    """RK4 integration of the Hamiltonian flow from ``start`` over ``duration``.

    The variational flow, when requested, is advanced with the same RK4 stages
    so the fundamental matrix is consistent with the trajectory to the same
    order.  Raises IntegrationError on non-finite state.
    """
    if steps is None:
        steps = max(1, int(math.ceil(abs(duration) / max_step)))
    h = duration / steps
    times = start.t + h * np.arange(steps + 1)
    xs = np.empty(steps + 1)
    ps = np.empty(steps + 1)
    xs[0], ps[0] = start.x, start.p
    fund = None
    det_product = 1.0
    if with_variational:
        fund = np.empty((steps + 1, 2, 2))
        fund[0] = np.eye(2)
    x, p = float(start.x), float(start.p)
    M = np.eye(2)
    eye = np.eye(2)
    for n in range(steps):
        t = times[n]
        if with_variational:
            # the tangent flow is linear in M: build the one-step propagator S
            # from identity (well conditioned) and accumulate M = S M
            k1x, k1p, J1 = _rhs_jac(model, x, p, t)
            k2x, k2p, J2 = _rhs_jac(model, x + 0.5 * h * k1x, p + 0.5 * h * k1p, t + 0.5 * h)
            k3x, k3p, J3 = _rhs_jac(model, x + 0.5 * h * k2x, p + 0.5 * h * k2p, t + 0.5 * h)
            k4x, k4p, J4 = _rhs_jac(model, x + h * k3x, p + h * k3p, t + h)
            A1 = J1
            A2 = J2 @ (eye + 0.5 * h * A1)
            A3 = J3 @ (eye + 0.5 * h * A2)
            A4 = J4 @ (eye + h * A3)
            S = eye + (h / 6.0) * (A1 + 2.0 * A2 + 2.0 * A3 + A4)
            det_product *= S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
            M = S @ M
        else:
            k1x, k1p = _rhs(model, x, p, t)
            k2x, k2p = _rhs(model, x + 0.5 * h * k1x, p + 0.5 * h * k1p, t + 0.5 * h)
            k3x, k3p = _rhs(model, x + 0.5 * h * k2x, p + 0.5 * h * k2p, t + 0.5 * h)
            k4x, k4p = _rhs(model, x + h * k3x, p + h * k3p, t + h)
        x += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        p += (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        if not (math.isfinite(x) and math.isfinite(p)):
            raise IntegrationError(f"state blew up at t={times[n + 1]:.6g}",
                                   last_valid_time=float(times[n]))
        xs[n + 1], ps[n + 1] = x, p
        if with_variational:
            fund[n + 1] = M
    return Trajectory(times=times, x=xs, p=ps, fundamental=fund, det_product=det_product)


def find_periodic_orbit(model: HamiltonianModel, seed: PhasePoint, period: int,
                        winding: int = 0, shoot_tol: float = 1e-10,
                        max_newton: int = 25, segments_per_unit: int = 8,
                        max_step: float = DEFAULT_MAX_STEP,
                        hyperbolicity_margin: float = 0.1) -> PeriodicOrbit:
    """Newton shooting for an orbit of integer ``period`` and spatial ``winding``.

    The corrected quantity is the time-N return-map residual
    (x(N) - x(0) - winding, p(N) - p(0)) on the lift.  The Newton system is
    condensed from a multiple-shooting split of the period: strong
    hyperbolicity makes the single-segment return map's Newton basin
    impractically small, while the split keeps each segment's amplification
    moderate without changing the converged orbit.
    """
    if period < 1:
        raise WeakKamError("orbit period must be a positive integer")
    n_seg = max(1, segments_per_unit) * period
    seg_len = period / n_seg
    seg_steps = max(1, int(math.ceil(seg_len / max_step)))
    target = np.array([float(winding), 0.0])

    # initial segment states along the uniform-drift predictor; following the
    # integrated seed trajectory instead can leave the target orbit's basin
    # (well oscillations resonant with the period form solution circles)
    Z = np.empty((n_seg, 2))
    taus = np.arange(n_seg) * seg_len
    Z[:, 0] = seed.x + winding * taus / period
    Z[:, 1] = seed.p

    internal_tol = min(shoot_tol, 1e-12)
    iterations = 0
    for iteration in range(max_newton + 1):
        iterations = iteration
        ends = np.empty((n_seg, 2))
        mats = np.empty((n_seg, 2, 2))
        for i in range(n_seg):
            traj = integrate(model, PhasePoint(Z[i][0], Z[i][1], i * seg_len),
                             seg_len, steps=seg_steps, with_variational=True)
            ends[i] = traj.end
            mats[i] = traj.fundamental[-1]
        res = np.empty((n_seg, 2))
        res[:-1] = ends[:-1] - Z[1:]
        res[-1] = ends[-1] - Z[0] - target
        residual = float(np.max(np.abs(res)))
        if residual <= internal_tol:
            break
        if iteration == max_newton:
            raise OrbitNotFoundError(
                f"Newton shooting did not converge in {max_newton} iterations",
                residual=residual)
        # condense: dz_{i+1} = M_i dz_i + r_i, closure (A - I) dz_0 = -b
        A = np.eye(2)
        b = np.zeros(2)
        for i in range(n_seg):
            A = mats[i] @ A
            b = mats[i] @ b + res[i]
        try:
            dz0 = np.linalg.solve(A - np.eye(2), -b)
        except np.linalg.LinAlgError as exc:
            raise OrbitNotFoundError(f"singular shooting matrix: {exc}",
                                     residual=residual)
        dz = dz0
        Z[0] = Z[0] + dz
        for i in range(n_seg - 1):
            dz = mats[i] @ dz + res[i]
            Z[i + 1] = Z[i + 1] + dz
        if not np.all(np.isfinite(Z)):
            raise OrbitNotFoundError("Newton step produced non-finite state",
                                     residual=residual)

    # verification pass: one whole period from z_0 with the tangent flow
    steps = max(int(math.ceil(period / max_step)), n_seg * seg_steps)
    traj = integrate(model, PhasePoint(Z[0][0], Z[0][1], 0.0), float(period),
                     steps=steps, with_variational=True)
    r = np.array(traj.end) - Z[0] - target
    residual = float(np.max(np.abs(r)))
    if residual > shoot_tol:
        raise OrbitNotFoundError(
            f"return-map residual {residual:.3e} exceeds shoot_tol {shoot_tol:.1e} "
            "after Newton convergence (hyperbolic amplification of rounding)",
            residual=residual)
    orbit = PeriodicOrbit(
        period=period,
        anchor=PhasePoint(float(Z[0][0] % 1.0), float(Z[0][1]), 0.0),
        times=traj.times,
        x=traj.x,
        p=traj.p,
        winding=winding,
        monodromy=traj.fundamental[-1].copy(),
        floquet_exponents=np.zeros(2, dtype=complex),
        hyperbolic=False,
        residual=residual,
        det_product=traj.det_product,
        newton_iterations=iterations,
    )
    return classify_orbit(model, orbit, hyperbolicity_margin=hyperbolicity_margin)


def classify_orbit(model: HamiltonianModel, orbit: PeriodicOrbit,
                   hyperbolicity_margin: float = 0.1,
                   det_tol: float = 1e-6) -> PeriodicOrbit:
    """Attach Floquet exponents and the hyperbolicity flag; check symplecticity.

    The determinant check uses the accumulated product of per-step transition
    determinants: for strongly expanding orbits det(monodromy) evaluated from
    the final matrix alone loses all significance to cancellation.
    """
    det = orbit.det_product
    if abs(det - 1.0) > det_tol:
        raise NumericalQualityError(
            f"monodromy determinant drifted from 1 by {abs(det - 1.0):.3e}")
    mult = np.linalg.eigvals(orbit.monodromy).astype(complex)
    order = np.argsort(-np.abs(mult))
    mult = mult[order]
    if abs(mult[0]) > 1.0 + 1e-9:
        # symplectic pairing: the contracting multiplier as computed from the
        # raw matrix loses all digits once the expanding one is large
        mult[1] = det / mult[0]
    exponents = np.log(mult) / orbit.period
    hyperbolic = bool(np.all(np.abs(np.abs(mult) - 1.0) > hyperbolicity_margin))
    return replace(orbit, floquet_exponents=exponents, hyperbolic=hyperbolic)


def potential_maxima(model: HamiltonianModel, n_scan: int = 4096) -> list[float]:
    """Nondegenerate maxima of the potential in [0, cell) via sign changes of V'."""
    cell = 1.0 / model.wind if model.family == TRAVELING_WAVE else 1.0
    xs = np.linspace(0.0, cell, n_scan, endpoint=False)
    d1 = model.potential.d1(xs)
    maxima = []
    for i in range(n_scan):
        a, b = xs[i], xs[(i + 1) % n_scan] if i + 1 < n_scan else cell
        fa, fb = d1[i], model.potential.d1(b)
        if fa == 0.0:
            root = float(a)
        elif fa * fb < 0.0:
            root = float(brentq(model.potential.d1, a, b, xtol=1e-14))
        else:
            continue
        if model.potential.d2(root) < -1e-8:
            if not any(abs(root - m) < 1e-9 or abs(abs(root - m) - cell) < 1e-9
                       for m in maxima):
                maxima.append(root)
    return sorted(maxima)


def aubry_orbits(model: HamiltonianModel, shoot_tol: float = 1e-10,
                 max_step: float = DEFAULT_MAX_STEP, extra_seeds=None,
                 confirm: bool = True, confirm_grid: tuple[int, int] = (256, 32),
                 confirm_tol: float = 0.05,
                 hyperbolicity_margin: float = 0.1) -> list[PeriodicOrbit]:
    """Candidate orbits of the projected Aubry set for the built-in families.

    Mechanical / shifted-kinetic models (time-independent potential): one
    fixed-point orbit per nondegenerate potential maximum, with the momentum
    solving x' = H_p = 0.  Traveling-wave models: one orbit of period k and
    winding -1 per maximum of the 1/k-periodic cell.  Candidates are confirmed
    by the vanishing of their own anchored barrier diagonal unless ``confirm``
    is disabled.
    """
    maxima = potential_maxima(model)
    seeds: list[tuple[PhasePoint, int, int]] = []
    if model.family in (MECHANICAL, SHIFTED_KINETIC):
        p_rest = -model.momentum_offset  # makes x' = H_p vanish
        for xm in maxima:
            seeds.append((PhasePoint(xm, p_rest, 0.0), 1, 0))
    elif model.family == TRAVELING_WAVE:
        for xm in maxima:
            seeds.append((PhasePoint(xm, 0.0, 0.0), model.wind, -1))
    if extra_seeds:
        for entry in extra_seeds:
            seeds.append((PhasePoint(float(entry[0]), float(entry[1]), 0.0),
                          int(entry[2]) if len(entry) > 2 else 1,
                          int(entry[3]) if len(entry) > 3 else 0))

    orbits: list[PeriodicOrbit] = []
    for seed, period, winding in seeds:
        try:
            orbit = find_periodic_orbit(model, seed, period, winding,
                                        shoot_tol=shoot_tol, max_step=max_step,
                                        hyperbolicity_margin=hyperbolicity_margin)
        except (OrbitNotFoundError, IntegrationError):
            continue
        duplicate = False
        for kept in orbits:
            if abs(kept.anchor.x - orbit.anchor.x) < 1e-6 and \
               abs(kept.anchor.p - orbit.anchor.p) < 1e-6:
                duplicate = True
                if orbit.residual < kept.residual:
                    orbits[orbits.index(kept)] = orbit
                break
        if not duplicate:
            orbits.append(orbit)

    if confirm and orbits:
        orbits = _confirm_by_barrier_diagonal(model, orbits, confirm_grid, confirm_tol)
    if not orbits:
        raise WeakKamError("no Aubry orbit candidates survived")
    return orbits


def _confirm_by_barrier_diagonal(model, orbits, grid_shape, tol):
    """Keep candidates whose anchored barrier vanishes along their own trace."""
    from .variational import GridSpec, anchored_barrier, aubry_verify, build_kernels, critical_value

    grid = GridSpec(*grid_shape)
    kernels = build_kernels(model, grid)
    c = critical_value(kernels).c
    window = 1
    for orbit in orbits:
        window = window * orbit.period // math.gcd(window, orbit.period)
    confirmed = []
    for orbit in orbits:
        fld = anchored_barrier(kernels, c, orbit.anchor.x, window=window)
        res = aubry_verify([fld], [orbit], aubry_tol=tol)[0]
        if res.ok:
            confirmed.append(orbit)
    return confirmed
