"""Capture and readout stages: driven qudit with relaxation and dephasing.

In the frame rotating with the drive, the semiclassical Hamiltonian is
diagonal except for the ``g*alpha`` coupling of the two working levels.
The master equation is

    d rho/dt = -(i/hbar)[H_c, rho] + Gamma D(L) rho + Gamma_phi D(N) rho

with ``L = sum_k |k><k+1|`` (uniform nearest-neighbour relaxation),
``N = diag(1, 2, ..., d)`` and ``D(O) rho = O rho O^+ - {O^+ O, rho}/2``.
Energy-valued rates (K) are converted to 1/ns by dividing by hbar/kB.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.signal import find_peaks

from .circuit import UNITS, UnitSystem
from .density import Trajectory, density_violations, pure_state, validate_density_matrix
from .errors import (
    DomainError,
    EstimateUnavailable,
    IntegrationError,
    StiffnessError,
    ValidationError,
)
from .spectral import Spectrum

CAPTURE_LEVELS = 8


@dataclass(frozen=True)
class CaptureParams:
    """Drive and dissipation settings for the capture stage.

    ``omega_d`` is the angular drive frequency in 1/ns; ``None`` means
    resonant with the working pair. ``g``, ``gamma`` and ``gamma_phi`` are
    energies in kelvins. ``drive_amplitude`` and ``signal_shape`` describe
    the incoming pulse; they only multiply a scalar energy offset and are
    kept for bookkeeping.
    """

    g: float = 2.0
    alpha: float = 1.0
    omega_d: float | None = None
    gamma: float = 0.1
    gamma_phi: float = 0.0
    working_pair: tuple = (7, 8)
    n_levels: int = CAPTURE_LEVELS
    drive_amplitude: float = 0.0
    signal_shape: Callable[[float], float] | None = None

    def __post_init__(self):
        for name in ("g", "alpha", "gamma", "gamma_phi"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative, got {getattr(self, name)!r}")
        lo, hi = self.working_pair
        if not (1 <= lo < hi <= self.n_levels):
            raise ValidationError(f"working pair {self.working_pair} outside 1..{self.n_levels}")


def drive_energy(spec: Spectrum, cp: CaptureParams, units: UnitSystem = UNITS):
    """hbar * omega_d in kelvins."""
    if cp.omega_d is None:
        lo, hi = cp.working_pair
        return float(spec.energies[hi - 1] - spec.energies[lo - 1])
    return cp.omega_d * units.hbar_over_kB


def build_capture_hamiltonian(spec: Spectrum, cp: CaptureParams, units: UnitSystem = UNITS):
    """Rotating-frame Hamiltonian (K) on the lowest ``cp.n_levels`` levels."""
    d = cp.n_levels
    if spec.n_levels < d:
        raise ValidationError(f"capture needs {d} levels, spectrum has {spec.n_levels}")
    j = np.arange(1, d + 1)
    H = np.diag(spec.energies[:d] - drive_energy(spec, cp, units) * j)
    lo, hi = cp.working_pair
    H[lo - 1, hi - 1] = H[hi - 1, lo - 1] = cp.g * cp.alpha
    return H


def dissipator_masks(dim):
    """Index arrays used by the relaxation and dephasing terms."""
    k = np.arange(1, dim + 1)
    decays = (k > 1).astype(float)  # diagonal of L^+ L
    relax = 0.5 * (decays[:, None] + decays[None, :])
    dephase = 0.5 * (k[:, None] - k[None, :]) ** 2
    return relax, dephase


def relaxation_term(rho, relax_mask):
    """``D(L) rho`` for the uniform cascade ``L = sum_k |k><k+1|``."""
    out = -relax_mask * rho
    out[:-1, :-1] += rho[1:, 1:]
    return out


def lindblad_rhs(rho, H, cp: CaptureParams, units: UnitSystem = UNITS):
    """Time derivative of ``rho`` (1/ns)."""
    rho = np.asarray(rho, dtype=complex)
    H = np.asarray(H)
    if rho.shape != H.shape:
        raise ValidationError(f"rho {rho.shape} and H {H.shape} differ in dimension")
    relax, dephase = dissipator_masks(rho.shape[0])
    rate = units.rate_from_energy(cp.gamma)
    rate_phi = units.rate_from_energy(cp.gamma_phi)
    drho = (-1j / units.hbar_over_kB) * (H @ rho - rho @ H)
    if rate:
        drho += rate * relaxation_term(rho, relax)
    if rate_phi:
        drho -= rate_phi * dephase * rho
    return drho


def evolve_capture(
    rho0,
    spec: Spectrum,
    cp: CaptureParams,
    t_end: float,
    dt_max: float = np.inf,
    stride: float | None = None,
    store_matrices: bool = False,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    units: UnitSystem = UNITS,
) -> Trajectory:
    """Integrate the capture master equation from ``rho0`` up to ``t_end`` ns.

    Uses the embedded 8(5,3) Dormand-Prince pair with per-step relative
    error control ``rtol``. Samples every ``stride`` ns (default: 2000
    samples over the run).
    """
    if not t_end > 0:
        raise ValidationError(f"t_end must be positive, got {t_end!r}")
    if rho0 is None:
        rho0 = pure_state(cp.n_levels, cp.working_pair[0])
    rho0 = validate_density_matrix(rho0, cp.n_levels)
    H = build_capture_hamiltonian(spec, cp, units)
    d = cp.n_levels
    relax, dephase = dissipator_masks(d)
    rate = units.rate_from_energy(cp.gamma)
    rate_phi = units.rate_from_energy(cp.gamma_phi)
    coherent = -1j / units.hbar_over_kB

    def rhs(_t, y):
        rho = y.reshape(d, d)
        drho = coherent * (H @ rho - rho @ H)
        if rate:
            drho += rate * relaxation_term(rho, relax)
        if rate_phi:
            drho -= rate_phi * dephase * rho
        return drho.ravel()

    stride = stride or t_end / 2000
    stamps = np.arange(0.0, t_end, stride)
    stamps = np.append(stamps[stamps < t_end], t_end)
    sol = solve_ivp(
        rhs,
        (0.0, t_end),
        rho0.ravel(),
        method="DOP853",
        t_eval=stamps,
        rtol=rtol,
        atol=atol,
        max_step=dt_max,
    )
    if sol.status != 0:
        raise StiffnessError(f"capture integration stopped at t={sol.t[-1] if sol.t.size else 0.0!r} ns: "
                             f"{sol.message}; reduce Gamma*dt or the coupling")
    mats = sol.y.T.reshape(-1, d, d)
    occ = np.real(np.einsum("nkk->nk", mats))
    for i in (0, len(mats) // 2, len(mats) - 1):
        problems = density_violations(mats[i], trace_tol=1e-6)
        if problems:
            raise IntegrationError("; ".join(problems), last_good=float(sol.t[max(i - 1, 0)]))
    traj = Trajectory(
        stamps=sol.t,
        occupations=occ,
        stamp_name="t_ns",
        matrices=mats if store_matrices else None,
        meta={
            "stage": "capture",
            "hbar_omega_d_K": drive_energy(spec, cp, units),
            "g_K": cp.g,
            "alpha": cp.alpha,
            "gamma_K": cp.gamma,
            "gamma_phi_K": cp.gamma_phi,
            "working_pair": list(cp.working_pair),
            "dropped_scalar_term": {
                "form": "2 * A_d * alpha * f(t)",
                "A_d_K": cp.drive_amplitude,
                "signal_shape": getattr(cp.signal_shape, "__name__", None),
            },
        },
    )
    problems = traj.check_invariants()
    if problems:
        raise IntegrationError("; ".join(problems), last_good=float(sol.t[-1]))
    return traj


def rabi_frequency(traj: Trajectory, pair=(7, 8), min_extrema: int = 3) -> float:
    """Angular frequency (1/ns) of the population exchange within ``pair``.

    Taken from the mean spacing of the extrema of ``rho_aa - rho_bb``, with
    each extremum refined by a parabola through its three samples.
    """
    t = np.asarray(traj.stamps)
    d = traj.level(pair[0]) - traj.level(pair[1])
    span = d.max() - d.min()
    if span <= 0:
        raise EstimateUnavailable("no population exchange in the working pair")
    idx = np.concatenate([find_peaks(d, prominence=1e-4 * span)[0], find_peaks(-d, prominence=1e-4 * span)[0]])
    idx = np.sort(idx)
    if len(idx) < min_extrema:
        raise EstimateUnavailable(f"only {len(idx)} extrema found, need {min_extrema}")
    times = []
    for i in idx:
        y0, y1, y2 = d[i - 1], d[i], d[i + 1]
        h = t[i + 1] - t[i]
        denom = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
        times.append(t[i] + shift * h)
    return float(np.pi / np.mean(np.diff(times)))
