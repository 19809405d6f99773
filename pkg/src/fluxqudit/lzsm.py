"""Analytic layer: LZSM probabilities, ramp-speed design, adiabatic-impulse chains.

The reset ramp passes the avoided crossings one at a time. At crossing
``n`` the diabatic passage probability is ``exp(-pi Delta_n^2 / 2 hbar v_n)``;
between crossings the populations relax down the ladder at a uniform
rate, which has a closed-form (Poisson/Erlang) solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import UNITS, UnitSystem
from .density import Trajectory
from .errors import DomainError, ValidationError


def lzsm_probability(delta, v, units: UnitSystem = UNITS):
    """Diabatic passage probability for gap ``delta`` (K) and sweep rate ``v`` (K/ns)."""
    v = np.asarray(v, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if np.any(v <= 0):
        raise DomainError(f"sweep rate must be positive, got {v!r}")
    if np.any(delta < 0):
        raise DomainError(f"gap must be non-negative, got {delta!r}")
    out = np.exp(-math.pi * delta**2 / (2.0 * units.hbar_over_kB * v))
    return float(out) if out.ndim == 0 else out


def min_speed_for_target(delta_max, p_target, units: UnitSystem = UNITS):
    """Slowest sweep rate (K/ns) that still passes ``delta_max`` with probability ``p_target``."""
    if not 0.0 < p_target < 1.0:
        raise DomainError(f"target probability must lie in (0, 1), got {p_target!r}")
    if delta_max < 0:
        raise DomainError(f"gap must be non-negative, got {delta_max!r}")
    return math.pi * delta_max**2 / (2.0 * units.hbar_over_kB * math.log(1.0 / p_target))


@dataclass(frozen=True)
class FluxSpeed:
    wb_per_s: float
    phi0_per_us: float

    def ramp_duration_us(self, flux_span):
        """Time (microseconds) to sweep ``flux_span`` flux quanta."""
        return abs(flux_span) / self.phi0_per_us


def flux_speed(v, I_p, units: UnitSystem = UNITS) -> FluxSpeed:
    """Convert an energy sweep rate (K/ns) to an external-flux rate via ``dPhi_e/dt = v / 2 I_p``."""
    if not I_p > 0:
        raise DomainError(f"persistent current must be positive, got {I_p!r}")
    watts = v * units.boltzmann * 1e9
    wb_per_s = watts / (2.0 * I_p)
    return FluxSpeed(wb_per_s=wb_per_s, phi0_per_us=wb_per_s / units.flux_quantum * 1e-6)


@dataclass(frozen=True)
class LzsmDesign:
    I_p: float
    target_probability: float
    delta_max: float
    v: float
    speed: FluxSpeed

    @property
    def dphi_dt_wb_per_s(self):
        return self.speed.wb_per_s

    @property
    def dphi_dt_phi0_per_us(self):
        return self.speed.phi0_per_us


def design_ramp_speed(delta_max, p_target, I_p, units: UnitSystem = UNITS) -> LzsmDesign:
    v = min_speed_for_target(delta_max, p_target, units)
    return LzsmDesign(I_p=I_p, target_probability=p_target, delta_max=delta_max, v=v, speed=flux_speed(v, I_p, units))


@dataclass
class CrossingChain:
    """Ordered crossings along a linear flux ramp.

    Parameters
    ----------
    deltas : minimal gaps (K), one per crossing, in ramp order
    slope_diffs : diabatic slope differences (K per flux quantum)
    x_stars : crossing positions (flux quanta)
    v_e : ramp speed (flux quanta per ns)
    gamma : relaxation rate (1/ns)
    x_e0, x_e_end : ramp start and stop
    speeds : optional explicit energy sweep rates (K/ns); default ``slope_diffs * v_e``
    """

    deltas: np.ndarray
    slope_diffs: np.ndarray
    x_stars: np.ndarray
    v_e: float
    gamma: float
    x_e0: float
    x_e_end: float
    speeds: np.ndarray | None = None
    units: UnitSystem = field(default=UNITS, repr=False)

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=float)
        self.slope_diffs = np.asarray(self.slope_diffs, dtype=float)
        self.x_stars = np.asarray(self.x_stars, dtype=float)
        n = len(self.deltas)
        if n == 0:
            raise ValidationError("crossing chain is empty")
        if len(self.slope_diffs) != n or len(self.x_stars) != n:
            raise ValidationError("deltas, slope_diffs and x_stars must have equal length")
        if np.any(self.deltas <= 0):
            raise ValidationError("all gaps must be positive")
        if not self.v_e > 0:
            raise DomainError(f"ramp speed must be positive, got {self.v_e!r}")
        if self.gamma < 0:
            raise DomainError(f"relaxation rate must be non-negative, got {self.gamma!r}")
        t = self.crossing_times
        if np.any(t <= 0) or np.any(np.diff(t) <= 0) or t[-1] >= self.t_end:
            raise ValidationError("crossings must be strictly ordered inside the ramp")

    @classmethod
    def from_crossings(cls, crossings, v_e, gamma, x_e0, x_e_end, deltas=None):
        """Build from :class:`~fluxqudit.spectral.AvoidedCrossing` objects.

        ``deltas`` replaces the computed gaps (e.g. with tabulated values)
        while keeping the computed positions and slopes.
        """
        return cls(
            deltas=[c.delta for c in crossings] if deltas is None else deltas,
            slope_diffs=[c.slope_diff for c in crossings],
            x_stars=[c.x_star for c in crossings],
            v_e=v_e,
            gamma=gamma,
            x_e0=x_e0,
            x_e_end=x_e_end,
        )

    @property
    def n_crossings(self):
        return len(self.deltas)

    @property
    def dim(self):
        return self.n_crossings + 1

    @property
    def crossing_times(self):
        return np.abs(self.x_stars - self.x_e0) / self.v_e

    @property
    def t_end(self):
        return abs(self.x_e_end - self.x_e0) / self.v_e

    @property
    def sweep_rates(self):
        return self.slope_diffs * self.v_e if self.speeds is None else np.asarray(self.speeds, dtype=float)

    @property
    def probabilities(self):
        return np.atleast_1d(lzsm_probability(self.deltas, self.sweep_rates, self.units))

    def flux_at(self, t):
        return self.x_e0 + math.copysign(1.0, self.x_e_end - self.x_e0) * self.v_e * np.asarray(t)

    def time_at(self, x_e):
        return np.abs(np.asarray(x_e, dtype=float) - self.x_e0) / self.v_e


def aim_final_occupations(chain_or_probabilities):
    """Dissipation-free final occupations of the sequential adiabatic-impulse model.

    Level 1 keeps ``1 - P_1``; level ``k`` keeps ``P_1 ... P_{k-1} (1 - P_k)``;
    the top level receives the full product.
    """
    if isinstance(chain_or_probabilities, CrossingChain):
        probs = chain_or_probabilities.probabilities
    else:
        probs = np.asarray(chain_or_probabilities, dtype=float)
    if np.any((probs < 0) | (probs > 1)):
        raise DomainError("transition probabilities must lie in [0, 1]")
    reach = np.concatenate([[1.0], np.cumprod(probs)])
    stay = np.concatenate([1.0 - probs, [1.0]])
    return reach * stay


def cascade_propagate(pop, gamma_t):
    """Closed-form solution of the uniform relaxation cascade after time ``gamma * t``.

    Level ``j >= 2`` collects ``p_i e^{-gt} (gt)^(i-j)/(i-j)!`` from every
    level ``i >= j``; level 1 absorbs the rest.
    """
    pop = np.asarray(pop, dtype=float)
    n = len(pop)
    if gamma_t == 0.0:
        return pop.copy()
    poisson = np.exp(-gamma_t) * np.array([gamma_t**m / math.factorial(m) for m in range(n)])
    out = np.zeros(n)
    for j in range(1, n):
        out[j] = sum(pop[i] * poisson[i - j] for i in range(j, n))
    # level 1: its own weight plus the absorbed tail of every higher level
    cdf = np.cumsum(poisson)
    out[0] = pop[0] + sum(pop[i] * (1.0 - cdf[i - 1]) for i in range(1, n))
    return out


def crossing_split(pop, n, prob):
    """Population exchange at crossing ``n`` (levels n, n+1; 1-based) with passage probability ``prob``."""
    out = np.array(pop, dtype=float)
    lo, hi = pop[n - 1], pop[n]
    out[n - 1] = (1.0 - prob) * lo + prob * hi
    out[n] = prob * lo + (1.0 - prob) * hi
    return out


@dataclass
class RateEquationResult:
    trajectory: Trajectory
    final: np.ndarray
    probabilities: np.ndarray


def rate_equation_evolve(chain: CrossingChain, stamps=None, initial=None) -> RateEquationResult:
    """Piecewise adiabatic-impulse + rate-equation occupations along the ramp.

    ``stamps`` are flux values (default: 2001 points over the ramp plus the
    two sides of every crossing). The initial state is level 1 unless
    ``initial`` is given.
    """
    probs = chain.probabilities
    times = chain.crossing_times
    pop0 = np.zeros(chain.dim)
    pop0[0] = 1.0
    if initial is not None:
        pop0 = np.asarray(initial, dtype=float)
    # state right after each event (index 0 is the ramp start)
    event_t = np.concatenate([[0.0], times])
    after = [pop0]
    for n, (t_prev, t_n) in enumerate(zip(event_t[:-1], event_t[1:]), start=1):
        before = cascade_propagate(after[-1], chain.gamma * (t_n - t_prev))
        after.append(crossing_split(before, n, probs[n - 1]))
    if stamps is None:
        base = np.linspace(chain.x_e0, chain.x_e_end, 2001)
        eps = 1e-12 * np.sign(chain.x_e_end - chain.x_e0)
        stamps = np.sort(np.concatenate([base, chain.x_stars - eps, chain.x_stars]))
        if chain.x_e_end < chain.x_e0:
            stamps = stamps[::-1]
    stamps = np.asarray(stamps, dtype=float)
    t = chain.time_at(stamps)
    occ = np.empty((len(stamps), chain.dim))
    for i, ti in enumerate(t):
        k = int(np.searchsorted(event_t, ti, side="right")) - 1
        occ[i] = cascade_propagate(after[k], chain.gamma * (ti - event_t[k]))
    final = cascade_propagate(after[-1], chain.gamma * (chain.t_end - event_t[-1]))
    traj = Trajectory(
        stamps=stamps,
        occupations=occ,
        stamp_name="x_e",
        meta={"stage": "rate-equation", "probabilities": probs.tolist(), "x_stars": chain.x_stars.tolist()},
    )
    return RateEquationResult(trajectory=traj, final=final, probabilities=probs)


def reset_probability_estimate(chain: CrossingChain, dwell=None):
    """Return-probability estimate ``prod(P_n) * exp(-gamma * sum(dt_n))``.

    ``dwell`` lists the flux intervals spent on the excited diabatic path; by
    default the path is taken to be excited from the first crossing to the
    end of the ramp, i.e. ``sum(dt_n) = (t_end - t_1)``.
    """
    if dwell is None:
        total = chain.t_end - chain.crossing_times[0]
    else:
        total = float(np.sum(np.abs(dwell))) / chain.v_e
    return float(np.prod(chain.probabilities) * math.exp(-chain.gamma * total))


def lzsm_report(chain: CrossingChain, numeric=None, dwell=None):
    """JSON-ready summary of the chain estimate, optionally against a numeric value."""
    probs = chain.probabilities
    total = (chain.t_end - chain.crossing_times[0]) if dwell is None else float(np.sum(np.abs(dwell))) / chain.v_e
    estimate = reset_probability_estimate(chain, dwell)
    report = {
        "crossings": [
            {
                "levels": [n + 1, n + 2],
                "x_star": float(chain.x_stars[n]),
                "delta_K": float(chain.deltas[n]),
                "sweep_rate_K_per_ns": float(chain.sweep_rates[n]),
                "probability": float(probs[n]),
            }
            for n in range(chain.n_crossings)
        ],
        "chain_product": float(np.prod(probs)),
        "decay_time_ns": float(total),
        "decay_factor": float(math.exp(-chain.gamma * total)),
        "estimate": estimate,
    }
    if numeric is not None:
        report["numeric"] = float(numeric)
        report["difference"] = float(estimate - numeric)
    return report
