"""Closed-form Hamiltonian families on the circle with exact derivative jets.

Three families are supported, all with quadratic kinetic energy so that the
Legendre transform is closed-form and kernels stay exact:

* ``mechanical``       H(x,p)   = p^2/2 + V(x)
* ``shifted_kinetic``  H(x,p)   = (p+P)^2/2 + V(x)
* ``traveling_wave``   H(x,p,t) = p^2/2 - p/k + V(x + t/k),  V required 1/k-periodic

Potentials are finite trigonometric series, so every spatial derivative is
exact and 1-periodicity holds to rounding error.  All evaluators broadcast
over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigError

MECHANICAL = "mechanical"
SHIFTED_KINETIC = "shifted_kinetic"
TRAVELING_WAVE = "traveling_wave"

FAMILIES = (MECHANICAL, SHIFTED_KINETIC, TRAVELING_WAVE)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PotentialSpec:
    """Finite trig series V(x) = sum_k c_k cos(2 pi k x) + s_k sin(2 pi k x)."""

    terms: tuple[tuple[int, float, float], ...] = ()

    def __post_init__(self):
        for term in self.terms:
            if len(term) != 3:
                raise ConfigError(f"potential term must be (freq, cos, sin): {term!r}",
                                  field="model.potential.terms")
            k = term[0]
            if int(k) != k or k < 0:
                raise ConfigError(f"potential frequency must be a nonnegative integer: {k!r}",
                                  field="model.potential.terms")

    @classmethod
    def from_terms(cls, terms) -> "PotentialSpec":
        return cls(tuple((int(k), float(c), float(s)) for k, c, s in terms))

    @classmethod
    def zero(cls) -> "PotentialSpec":
        return cls(())

    def _arrays(self):
        if not self.terms:
            return np.zeros(1), np.zeros(1), np.zeros(1)
        k = np.array([t[0] for t in self.terms], dtype=float)
        c = np.array([t[1] for t in self.terms], dtype=float)
        s = np.array([t[2] for t in self.terms], dtype=float)
        return k, c, s

    def derivative(self, x, order: int = 0):
        """Exact order-th derivative of V at x (broadcasts over arrays)."""
        x = np.asarray(x, dtype=float)
        k, c, s = self._arrays()
        w = TWO_PI * k
        ang = np.multiply.outer(x, w)
        # d^n cos = w^n cos(ang + n pi/2), same phase shift for sin
        phase = order * math.pi / 2.0
        wn = w ** order
        val = np.cos(ang + phase) @ (c * wn) + np.sin(ang + phase) @ (s * wn)
        return val if val.shape else float(val)

    def value(self, x):
        return self.derivative(x, 0)

    def d1(self, x):
        return self.derivative(x, 1)

    def d2(self, x):
        return self.derivative(x, 2)

    def min_on_grid(self, n: int = 8192) -> float:
        """Minimum of V over a dense uniform sample of the circle."""
        xs = np.arange(n) / n
        return float(np.min(self.value(xs)))

    def max_on_grid(self, n: int = 8192) -> float:
        xs = np.arange(n) / n
        return float(np.max(self.value(xs)))

    def is_subperiodic(self, k: int) -> bool:
        """True when every active frequency is a multiple of k (V is 1/k-periodic)."""
        return all(f % k == 0 for f, c, s in self.terms if c != 0.0 or s != 0.0)


@dataclass(frozen=True)
class Jet:
    """Pointwise derivative data of H; entries broadcast with array inputs."""

    H: object
    H_p: object
    H_x: object
    H_t: object
    H_pp: object
    H_xp: object
    H_xx: object


@dataclass(frozen=True)
class HamiltonianModel:
    """One of the closed-form families plus its standing-hypothesis constants."""

    family: str
    potential: PotentialSpec = field(default_factory=PotentialSpec.zero)
    momentum_shift: float = 0.0
    wind: int = 1
    growth_constant: float = 8.0
    dimension: int = 1
    convexity_floor: float = 1e-8

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown Hamiltonian family {self.family!r}", field="model.family")
        if self.family == TRAVELING_WAVE:
            if self.wind < 1:
                raise ConfigError("traveling_wave wind k must be a positive integer",
                                  field="model.wind")
            if not self.potential.is_subperiodic(self.wind):
                raise ConfigError(
                    f"traveling_wave potential must be 1/{self.wind}-periodic "
                    "(all frequencies multiples of the wind)",
                    field="model.potential")
        if self.growth_constant <= 0:
            raise ConfigError("growth_constant must be positive", field="model.growth_constant")

    # Every family is (p + b)^2/2 + e0 + W(x, t) with W a shifted copy of V.
    @property
    def momentum_offset(self) -> float:
        if self.family == SHIFTED_KINETIC:
            return self.momentum_shift
        if self.family == TRAVELING_WAVE:
            return -1.0 / self.wind
        return 0.0

    @property
    def energy_offset(self) -> float:
        if self.family == TRAVELING_WAVE:
            return -0.5 / self.wind ** 2
        return 0.0

    def _space_arg(self, x, t):
        if self.family == TRAVELING_WAVE:
            return np.asarray(x, dtype=float) + np.asarray(t, dtype=float) / self.wind
        return np.asarray(x, dtype=float)

    def potential_value(self, x, t=0.0):
        return self.potential.value(self._space_arg(x, t))

    def hamiltonian(self, x, p, t=0.0):
        p = np.asarray(p, dtype=float)
        q = p + self.momentum_offset
        return 0.5 * q * q + self.energy_offset + self.potential.value(self._space_arg(x, t))

    def jet(self, x, p, t=0.0) -> Jet:
        """Full first/second derivative jet of H at (x, p, t)."""
        scalar = np.ndim(x) == 0 and np.ndim(p) == 0 and np.ndim(t) == 0
        y, p = np.broadcast_arrays(self._space_arg(x, t), np.asarray(p, dtype=float))
        q = p + self.momentum_offset
        v0 = self.potential.value(y)
        v1 = self.potential.d1(y)
        v2 = self.potential.d2(y)
        h = 0.5 * q * q + self.energy_offset + v0
        h_t = v1 / self.wind if self.family == TRAVELING_WAVE else np.zeros_like(v1 + 0.0)
        one = np.ones_like(q)
        zero = np.zeros_like(q)
        out = Jet(H=h, H_p=q, H_x=v1, H_t=h_t, H_pp=one, H_xp=zero, H_xx=v2)
        if scalar:
            out = Jet(*(float(np.asarray(f)) for f in
                        (out.H, out.H_p, out.H_x, out.H_t, out.H_pp, out.H_xp, out.H_xx)))
        return out

    def lagrangian(self, x, v, t=0.0):
        """Legendre pair (L, L_v); the maximizing momentum is p* = v - b."""
        y = self._space_arg(x, t)
        v = np.asarray(v, dtype=float)
        b = self.momentum_offset
        lval = 0.5 * v * v - b * v - self.energy_offset - self.potential.value(y)
        return lval, v - b

    def h_p_of_gradient(self, x, p, t=0.0):
        """Drift H_p(x, p, t); affine in p for all built-in families."""
        return np.asarray(p, dtype=float) + self.momentum_offset


@dataclass(frozen=True)
class HypothesisReport:
    """Sampled verification of convexity, growth and periodicity."""

    min_h_pp: float
    growth_min: float
    space_period_residual: float
    time_period_residual: float
    cell_period_residual: float
    convexity_ok: bool
    growth_ok: bool
    periodicity_ok: bool

    @property
    def ok(self) -> bool:
        return self.convexity_ok and self.growth_ok and self.periodicity_ok


def verify_hypotheses(model: HamiltonianModel, n_x: int = 128, n_p: int = 64,
                      n_t: int = 32, band: tuple[float, float] = (1.0, 3.0),
                      period_tol: float = 1e-12) -> HypothesisReport:
    """Check the standing hypotheses on a sample lattice.

    The growth inequality (H_p.p - H + inf H(.,0,.)) K - |H_x| >= 0 is sampled
    for |p| in [band[0]*K, band[1]*K]; the unbounded tail is structural for
    quadratic kinetic energy and is not sampled.
    """
    K = model.growth_constant
    xs = np.arange(n_x) / n_x
    ts = np.arange(n_t) / n_t
    ps = np.concatenate([np.linspace(band[0] * K, band[1] * K, n_p),
                         -np.linspace(band[0] * K, band[1] * K, n_p)])

    xg, tg = np.meshgrid(xs, ts, indexing="ij")
    h0 = model.hamiltonian(xg, np.zeros_like(xg), tg)
    inf_h0 = float(np.min(h0))

    growth_min = math.inf
    min_hpp = math.inf
    for t in ts:
        xg2, pg2 = np.meshgrid(xs, ps, indexing="ij")
        jet = model.jet(xg2, pg2, t)
        expr = (jet.H_p * pg2 - jet.H + inf_h0) * K - np.abs(jet.H_x)
        growth_min = min(growth_min, float(np.min(expr)))
        min_hpp = min(min_hpp, float(np.min(jet.H_pp)))

    # periodicity residuals at scattered probe points
    rng = np.random.default_rng(0)
    xp = rng.random(256)
    pp = rng.normal(0.0, 2.0, 256)
    tp = rng.random(256)
    hs = model.hamiltonian(xp, pp, tp)
    res_space = float(np.max(np.abs(model.hamiltonian(xp + 1.0, pp, tp) - hs)))
    res_time = float(np.max(np.abs(model.hamiltonian(xp, pp, tp + 1.0) - hs)))
    if model.family == TRAVELING_WAVE:
        k = model.wind
        res_cell = float(np.max(np.abs(
            model.potential.value(xp + 1.0 / k) - model.potential.value(xp))))
    else:
        res_cell = 0.0

    return HypothesisReport(
        min_h_pp=min_hpp,
        growth_min=growth_min,
        space_period_residual=res_space,
        time_period_residual=res_time,
        cell_period_residual=res_cell,
        convexity_ok=min_hpp >= model.convexity_floor,
        growth_ok=growth_min >= -1e-12,
        periodicity_ok=max(res_space, res_time, res_cell) <= period_tol,
    )


def model_from_config(block: dict) -> HamiltonianModel:
    """Build a model from the ``model`` block of an experiment config."""
    if not isinstance(block, dict):
        raise ConfigError("model block must be an object", field="model")
    family = block.get("family")
    if family not in FAMILIES:
        raise ConfigError(f"model.family must be one of {FAMILIES}, got {family!r}",
                          field="model.family")
    pot_block = block.get("potential", {"terms": []})
    terms = pot_block.get("terms", []) if isinstance(pot_block, dict) else None
    if terms is None:
        raise ConfigError("model.potential must be {'terms': [[k, cos, sin], ...]}",
                          field="model.potential")
    potential = PotentialSpec.from_terms(terms)
    return HamiltonianModel(
        family=family,
        potential=potential,
        momentum_shift=float(block.get("momentum_shift", 0.0)),
        wind=int(block.get("wind", 1)),
        growth_constant=float(block.get("growth_constant", 8.0)),
    )


def benchmark_potential() -> PotentialSpec:
    """V(x) = -sin^2(2 pi x) (1 + cos(2 pi x)/2) as an exact trig series.

    Expansion: -1/2 - cos(2 pi x)/8 + cos(4 pi x)/2 + cos(6 pi x)/8, with
    nondegenerate maxima V=0 at x=0 (V''=-12 pi^2) and x=1/2 (V''=-4 pi^2).
    """
    return PotentialSpec.from_terms([(0, -0.5, 0.0), (1, -0.125, 0.0),
                                     (2, 0.5, 0.0), (3, 0.125, 0.0)])
