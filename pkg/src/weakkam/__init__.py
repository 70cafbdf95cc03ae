"""Numerical weak-KAM toolkit for space-time periodic Hamilton-Jacobi equations."""

__version__ = "0.1.0"

from .model import (
    HamiltonianModel,
    PotentialSpec,
    benchmark_potential,
    model_from_config,
    verify_hypotheses,
)
from .dynamics import PhasePoint, PeriodicOrbit, aubry_orbits, find_periodic_orbit, integrate
from .variational import (
    ActionKernelSet,
    BarrierField,
    GridSpec,
    anchored_barrier,
    build_kernels,
    critical_value,
)
from .orbit_hessian import HessianCurve, fd_crosscheck, lambda_averages, unstable_hessian_curve
