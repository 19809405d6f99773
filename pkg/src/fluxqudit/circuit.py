"""rf-SQUID circuit parameters and the double-well flux potential.

Internal units: energies in kelvins, times in nanoseconds, flux in units of
the flux quantum. Planck's constant only enters as ``hbar_over_kB`` (K ns).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants
from scipy.optimize import bisect

from .errors import DomainError

TWO_PI = 2.0 * math.pi

# nominal double-well window for beta_L quoted for this circuit family
BETA_DOUBLE_WELL_MIN = 1.0 / math.pi
BETA_DOUBLE_WELL_MAX = 2.48


@dataclass(frozen=True)
class UnitSystem:
    """Physical constants in the package's internal units."""

    hbar_over_kB: float = constants.hbar / constants.k * 1e9  # K ns
    flux_quantum: float = constants.h / (2 * constants.e)  # Wb
    kB_over_h_GHz_per_K: float = constants.k / constants.h * 1e-9  # GHz/K
    boltzmann: float = constants.k  # J/K
    hbar: float = constants.hbar  # J s

    def rate_from_energy(self, energy_K):
        """Angular rate (1/ns) for an energy-valued rate given in kelvins."""
        return energy_K / self.hbar_over_kB

    def energy_from_rate(self, rate_per_ns):
        return rate_per_ns * self.hbar_over_kB


UNITS = UnitSystem()


@dataclass(frozen=True)
class PhysicalCircuit:
    """SI description of the loop: inductance (H), capacitance (F), critical current (A)."""

    L: float
    C: float
    I_c: float

    def __post_init__(self):
        for name in ("L", "C", "I_c"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be strictly positive, got {getattr(self, name)!r}")

    @property
    def E_J(self):
        """Josephson energy in joules."""
        return UNITS.flux_quantum * self.I_c / TWO_PI


@dataclass(frozen=True)
class CircuitParams:
    """Dimensionless SQUID parameters.

    Parameters
    ----------
    U0 : float
        Magnetic energy (K).
    beta_L : float
        Dimensionless inductance ``2 pi L I_c / Phi_0``.
    M : float
        Effective mass (1/K).
    x_e : float
        External flux in units of the flux quantum.
    """

    U0: float
    beta_L: float
    M: float
    x_e: float = 0.5
    units: UnitSystem = field(default=UNITS, repr=False, compare=False)

    def __post_init__(self):
        for name in ("U0", "beta_L", "M"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be positive and finite, got {value!r}")
        if not np.isfinite(self.x_e):
            raise DomainError(f"x_e must be finite, got {self.x_e!r}")

    def is_double_well(self):
        """Nominal design window ``1/pi < beta_L < 2.48``.

        This is a rule of thumb for choosing beta_L. The actual
        critical-point structure at a given flux comes from
        :func:`classify_wells`.
        """
        return BETA_DOUBLE_WELL_MIN < self.beta_L < BETA_DOUBLE_WELL_MAX

    def with_flux(self, x_e):
        return replace(self, x_e=float(x_e))

    def with_beta(self, beta_L, U0=None):
        return replace(self, beta_L=float(beta_L), U0=self.U0 if U0 is None else float(U0))


def from_physical(circuit: PhysicalCircuit, x_e: float, units: UnitSystem = UNITS) -> CircuitParams:
    """Convert SI circuit elements to (U0, beta_L, M)."""
    phi0 = units.flux_quantum
    U0 = (phi0 / TWO_PI) ** 2 / (units.boltzmann * circuit.L)
    M = units.boltzmann * phi0**2 * circuit.C / units.hbar**2
    beta_L = TWO_PI * circuit.L * circuit.I_c / phi0
    return CircuitParams(U0=U0, beta_L=beta_L, M=M, x_e=x_e, units=units)


def to_physical(p: CircuitParams) -> PhysicalCircuit:
    """Inverse of :func:`from_physical`."""
    u = p.units
    phi0 = u.flux_quantum
    L = (phi0 / TWO_PI) ** 2 / (u.boltzmann * p.U0)
    C = p.M * u.hbar**2 / (u.boltzmann * phi0**2)
    I_c = p.beta_L * phi0 / (TWO_PI * L)
    return PhysicalCircuit(L=L, C=C, I_c=I_c)


def potential_energy(x, p: CircuitParams):
    """U(x) = U0 [-beta_L cos(2 pi x) + 2 pi^2 (x - x_e)^2] in kelvins."""
    x = np.asarray(x, dtype=float)
    return p.U0 * (-p.beta_L * np.cos(TWO_PI * x) + 2.0 * math.pi**2 * (x - p.x_e) ** 2)


def potential_gradient(x, p: CircuitParams):
    x = np.asarray(x, dtype=float)
    return p.U0 * (TWO_PI * p.beta_L * np.sin(TWO_PI * x) + 4.0 * math.pi**2 * (x - p.x_e))


def potential_curvature(x, p: CircuitParams):
    x = np.asarray(x, dtype=float)
    return p.U0 * 4.0 * math.pi**2 * (p.beta_L * np.cos(TWO_PI * x) + 1.0)


@dataclass(frozen=True)
class WellStructure:
    minima: tuple
    barrier: float | None
    barrier_height: float | None

    @property
    def is_double(self):
        return len(self.minima) == 2


def classify_wells(p: CircuitParams) -> WellStructure:
    """Locate the potential minima and the barrier top between them.

    Critical points are bracketed on a fine scan of dU/dx and refined by
    bisection. Bisection is used because the curvature changes sign inside
    brackets when beta_L approaches the multistability threshold.

    The search window is ``x_e +/- 1.5``, which holds every critical point
    while ``beta_L`` stays below roughly 7.
    """
    lo, hi = p.x_e - 1.5, p.x_e + 1.5
    xs = np.linspace(lo, hi, 30001)
    g = potential_gradient(xs, p)
    f = lambda x: float(potential_gradient(x, p))
    roots = []
    for i in np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) <= 0)[0]:
        a, b = xs[i], xs[i + 1]
        if g[i] == 0.0:
            roots.append(a)
            continue
        if g[i + 1] == 0.0:
            continue
        roots.append(bisect(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))
    roots = sorted(set(roots))
    minima = tuple(r for r in roots if potential_curvature(r, p) > 0)
    maxima = [r for r in roots if potential_curvature(r, p) <= 0]
    if len(minima) >= 2:
        # adjacent pair straddling the maximum nearest to x_e
        barrier = min(maxima, key=lambda r: abs(r - p.x_e))
        left = max(m for m in minima if m < barrier)
        right = min(m for m in minima if m > barrier)
        height = float(potential_energy(barrier, p) - max(potential_energy(left, p), potential_energy(right, p)))
        return WellStructure(minima=(left, right), barrier=barrier, barrier_height=height)
    return WellStructure(minima=minima, barrier=None, barrier_height=None)


def shielding_current_sign(mean_x) -> int:
    """Sign of the shielding current ``-I_c sin(2 pi x)`` near the half-flux point.

    Negative below 0.5, positive above, zero exactly at 0.5.
    """
    return int(np.sign(mean_x - 0.5))


def rate_conversion_note(units: UnitSystem = UNITS) -> str:
    g = units.rate_from_energy(0.1)
    return (
        "energy-valued rates gamma (K) enter as Gamma = gamma / (hbar/kB) in 1/ns; "
        f"e.g. 0.1 K -> {g:.2f} 1/ns ({g / TWO_PI:.2f} GHz cyclic)"
    )
