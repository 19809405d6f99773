"""Reset stage: adiabatic-frame master equation under a linear flux ramp.

The external flux moves as ``x_e(t) = x_e0 - v_e t``. In the instantaneous
eigenbasis ``|E_k(t)>`` the density matrix obeys

    d rho/dt = (B* rho) + (B rho*)^T - (i/hbar)[E, rho] + Gamma D(L) rho

where ``B_km = <E_m | d/dt E_k>`` is the nonadiabatic coupling and ``L``
the uniform nearest-neighbour relaxation in the adiabatic ladder. ``B``
is only well defined once the eigenvector signs are fixed continuously
along the ramp, so the ramp is first tracked on an adaptive flux mesh
that is refined wherever the frame rotates quickly (near avoided
crossings, down to ~1e-12 flux quanta).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from .capture import dissipator_masks, relaxation_term
from .circuit import UNITS, CircuitParams, UnitSystem
from .density import Trajectory, density_violations, pure_state, validate_density_matrix
from .errors import (
    DomainError,
    IntegrationError,
    ResolutionError,
    StiffnessError,
    TrackingError,
    ValidationError,
)
from .spectral import FluxFamily, Grid, _local_minima, refine_gap_minimum

logger = logging.getLogger(__name__)

RESET_LEVELS = 7


@dataclass(frozen=True)
class RampSchedule:
    """Linear downward flux ramp, ``x_e(t) = x_e0 - v_e t`` (v_e in flux quanta per ns)."""

    x_e0: float = 0.5001
    v_e: float = 0.454
    x_e_end: float = 0.4913

    def __post_init__(self):
        if not self.v_e > 0:
            raise DomainError(f"ramp speed must be positive, got {self.v_e!r}")
        if not self.x_e_end <= self.x_e0:
            raise ValidationError(f"the ramp runs downward: need x_e_end <= x_e0, got {self.x_e_end} > {self.x_e0}")

    @property
    def duration(self):
        return (self.x_e0 - self.x_e_end) / self.v_e

    def flux(self, t):
        return self.x_e0 - self.v_e * np.asarray(t)

    def time(self, x_e):
        return (self.x_e0 - np.asarray(x_e)) / self.v_e


@dataclass(frozen=True)
class StepControl:
    """Adaptive flux mesh used to follow the eigenbasis.

    Steps start at ``base_step``, are halved until the frame rotates by
    less than ``max_rotation`` radians, and grow back by doubling.
    """

    base_step: float = 1e-4
    max_rotation: float = 0.05
    min_step: float = 1e-13
    ambiguity: float = 1e-3


@dataclass
class AdiabaticFrame:
    """Tracked instantaneous eigenbasis along a ramp.

    ``A[i]`` holds the overlaps ``A_kk' = <E_k'(0)|E_k(t_i)>`` against the
    complete reduced reference basis at ``t = 0``, so each ``A[i]`` has
    orthonormal rows and ``A[0]`` starts with an identity block.
    ``coeffs[i]`` are the eigenvectors in the :class:`FluxFamily` basis.
    """

    x_e: np.ndarray
    t: np.ndarray
    energies: np.ndarray
    A: np.ndarray
    coeffs: np.ndarray | None = None
    family: FluxFamily | None = field(default=None, repr=False)
    ramp: RampSchedule | None = None

    @property
    def n_steps(self):
        return len(self.t)

    @property
    def n_levels(self):
        return self.A.shape[1]

    @property
    def A_square(self):
        """The ``n_levels x n_levels`` block against the lowest reference states."""
        return self.A[:, :, : self.n_levels]

    def orthogonality_defect(self):
        eye = np.eye(self.n_levels)
        return float(max(np.abs(a @ a.T - eye).max() for a in self.A))

    def gauge_defect(self):
        """Smallest ``diag(A_i A_{i-1}^T)`` entry; positive when signs are continuous."""
        if self.n_steps < 2:
            return 1.0
        return float(min(np.einsum("kj,kj->k", a, b).min() for a, b in zip(self.A[1:], self.A[:-1])))


def _align(prev, cur):
    """Flip columns of ``cur`` to overlap positively with ``prev``; return rotation and ambiguity."""
    ov = prev.T @ cur
    diag = np.diag(ov).copy()
    flip = diag < 0
    cur = cur.copy()
    cur[:, flip] *= -1.0
    diag = np.abs(diag)
    rotation = float(np.arccos(np.clip(diag.min(), -1.0, 1.0)))
    absov = np.sort(np.abs(ov), axis=0)
    gap = absov[-1] - (absov[-2] if ov.shape[0] > 1 else 0.0)
    return cur, rotation, float(gap.min())


def track_eigenbasis(
    p: CircuitParams,
    ramp: RampSchedule,
    grid: Grid | None = None,
    n_levels: int = RESET_LEVELS,
    step_control: StepControl | None = None,
    n_basis: int = 48,
    family: FluxFamily | None = None,
) -> AdiabaticFrame:
    """Follow the lowest ``n_levels`` adiabatic states along the ramp."""
    ctl = step_control or StepControl()
    family = family or FluxFamily(p, grid, n_basis=n_basis, x_ref=0.5 * (ramp.x_e0 + ramp.x_e_end))
    _, ref = sla.eigh(family.hamiltonian(ramp.x_e0))
    w, c = family.solve(ramp.x_e0, n_levels)
    c, _, _ = _align(ref[:, :n_levels], c)
    xs, es, cs = [ramp.x_e0], [w], [c]
    x, step = ramp.x_e0, ctl.base_step
    forced = 0
    while x > ramp.x_e_end:
        step = min(step, x - ramp.x_e_end)
        while True:
            x_new = x - step if step < x - ramp.x_e_end else ramp.x_e_end
            w_new, c_new = family.solve(x_new, n_levels)
            c_new, rotation, separation = _align(cs[-1], c_new)
            if rotation <= ctl.max_rotation and separation > ctl.ambiguity:
                break
            if step <= ctl.min_step:
                if separation <= ctl.ambiguity:
                    raise TrackingError(f"eigenvector overlaps ambiguous at x_e={x_new!r} even at the minimal step")
                forced += 1
                break
            step *= 0.5
        xs.append(x_new)
        es.append(w_new)
        cs.append(c_new)
        x = x_new
        step = min(2.0 * step, ctl.base_step)
    if forced:
        logger.warning("%d steps accepted at the minimal flux step with rotation above %.2g rad", forced, ctl.max_rotation)
    coeffs = np.array(cs)
    A = np.einsum("kj,ikl->ilj", ref, coeffs)  # A[i, l, j] = <ref_j|E_l(t_i)>
    xs = np.array(xs)
    return AdiabaticFrame(
        x_e=xs,
        t=ramp.time(xs),
        energies=np.array(es),
        A=A,
        coeffs=coeffs,
        family=family,
        ramp=ramp,
    )


def nonadiabatic_coupling(frame: AdiabaticFrame, at_step: int, asymmetry_tol: float = 1e-3):
    """``B = (dA/dt) A^+`` at a tracked step from centred finite differences.

    Uses the three-point formula for non-uniform spacing (one-sided at the
    ends). Raises :class:`ResolutionError` when the raw result is not
    antisymmetric to ``asymmetry_tol * |B|``, which signals that the mesh
    is too coarse there; otherwise returns the antisymmetric part.
    """
    if frame.n_steps < 2:
        raise ValidationError("need at least two tracked steps")
    i = int(at_step) % frame.n_steps
    t, A = frame.t, frame.A
    if 0 < i < frame.n_steps - 1:
        h1, h2 = t[i] - t[i - 1], t[i + 1] - t[i]
        dA = (-h2 / (h1 * (h1 + h2))) * A[i - 1] + ((h2 - h1) / (h1 * h2)) * A[i] + (h1 / (h2 * (h1 + h2))) * A[i + 1]
    elif i == 0:
        dA = (A[1] - A[0]) / (t[1] - t[0])
    else:
        dA = (A[i] - A[i - 1]) / (t[i] - t[i - 1])
    B = dA @ A[i].T
    norm = np.abs(B).max()
    asym = np.abs(B + B.T).max()
    # differences of nearly equal A carry roundoff of order eps / step
    lo, hi = max(i - 1, 0), min(i + 1, frame.n_steps - 1)
    floor = 64 * np.finfo(float).eps / np.diff(t[lo : hi + 1]).min()
    if asym > asymmetry_tol * norm + floor:
        raise ResolutionError(f"finite-difference coupling at step {i} is asymmetric ({asym / norm:.2e} of |B|); refine the mesh")
    return 0.5 * (B - B.T)


def coupling_from_derivative(energies, coeffs, dH_dt):
    """Exact ``B_km = <E_m|dE_k/dt> = <E_m|dH/dt|E_k> / (E_k - E_m)`` (Hellmann-Feynman)."""
    V = coeffs.T @ dH_dt @ coeffs
    dE = energies[None, :] - energies[:, None]  # dE[m, k] = E_k - E_m
    np.fill_diagonal(dE, 1.0)
    Bmk = V / dE
    np.fill_diagonal(Bmk, 0.0)
    B = Bmk.T
    return 0.5 * (B - B.T)


def frame_rotation_term(B, rho):
    """``(B* rho)_kk' + (B rho*)_k'k``; equals ``[B, rho]`` for real antisymmetric B."""
    return B.conj() @ rho + (B @ rho.conj()).T


def reset_rhs(rho, energies, B, gamma, units: UnitSystem = UNITS):
    """Right-hand side of the adiabatic-frame equation (1/ns); ``gamma`` in 1/ns."""
    relax, _ = dissipator_masks(rho.shape[0])
    drho = frame_rotation_term(B, rho)
    drho -= (1j / units.hbar_over_kB) * (energies[:, None] - energies[None, :]) * rho
    if gamma:
        drho += gamma * relaxation_term(rho, relax)
    return drho


def frame_crossings(frame: AdiabaticFrame):
    """Avoided crossings among the tracked levels, refined on the reduced model."""
    fam = frame.family
    n = frame.n_levels
    fn = lambda x: fam.energies(x, n)
    found = []
    for k in range(1, n):
        g = frame.energies[:, k] - frame.energies[:, k - 1]
        for j in _local_minima(g):
            xa, xb = frame.x_e[j - 1], frame.x_e[j + 1]
            h = max(abs(frame.x_e[j] - xa), abs(xb - frame.x_e[j]))
            slope = max(abs(g[j + 1] - g[j]) / abs(xb - frame.x_e[j]), abs(g[j - 1] - g[j]) / abs(frame.x_e[j] - xa))
            try:
                c = refine_gap_minimum(fn, (k, k + 1), (xb, xa), slope, flank_limit=max(100 * h, 1e-5), xtol=min(1e-10, h))
            except Exception as exc:  # noqa: BLE001 - crossing metadata is best effort
                logger.info("skipping gap minimum near x_e=%g: %s", frame.x_e[j], exc)
                continue
            found.append(c)
    found.sort(key=lambda c: -c.x_star)
    return found


def evolve_reset(
    rho0,
    p: CircuitParams,
    ramp: RampSchedule,
    gamma: float,
    grid: Grid | None = None,
    n_levels: int = RESET_LEVELS,
    step_control: StepControl | None = None,
    n_basis: int = 48,
    rtol: float = 1e-9,
    atol: float = 1e-11,
    store_matrices: bool = False,
    frame: AdiabaticFrame | None = None,
    units: UnitSystem = UNITS,
) -> Trajectory:
    """Integrate the reset stage along ``ramp``; ``gamma`` is a rate in 1/ns.

    The occupations are sampled on the tracked flux mesh, which is dense
    around every avoided crossing. Only ``p.U0``, ``p.beta_L`` and ``p.M``
    are used; the flux comes from the ramp.
    """
    if gamma < 0:
        raise DomainError(f"gamma must be non-negative, got {gamma!r}")
    if rho0 is None:
        rho0 = pure_state(n_levels, 1)
    rho0 = validate_density_matrix(rho0, n_levels)
    if frame is None:
        frame = track_eigenbasis(p, ramp, grid, n_levels, step_control, n_basis)
    fam = frame.family
    v_e = ramp.v_e
    relax, _ = dissipator_masks(n_levels)
    hbar = units.hbar_over_kB

    def make_rhs(c_ref):
        def rhs(t, y):
            x = ramp.x_e0 - v_e * t
            w, c = fam.solve(x, n_levels)
            c *= np.where(np.einsum("kj,kj->j", c_ref, c) < 0, -1.0, 1.0)
            B = coupling_from_derivative(w, c, -v_e * fam.flux_derivative(x))
            rho = y.reshape(n_levels, n_levels)
            drho = B @ rho - rho @ B
            drho -= (1j / hbar) * (w[:, None] - w[None, :]) * rho
            if gamma:
                drho += gamma * relaxation_term(rho, relax)
            return drho.ravel()

        return rhs

    y = rho0.ravel().astype(complex)
    mats = [rho0]
    for i in range(frame.n_steps - 1):
        t0, t1 = frame.t[i], frame.t[i + 1]
        if t1 <= t0:
            continue
        sol = solve_ivp(
            make_rhs(frame.coeffs[i]),
            (t0, t1),
            y,
            method="DOP853",
            rtol=rtol,
            atol=atol,
            first_step=(t1 - t0) / 4,
        )
        if sol.status != 0:
            raise StiffnessError(f"reset integration failed near x_e={frame.x_e[i]!r}: {sol.message}")
        y = sol.y[:, -1]
        rho = y.reshape(n_levels, n_levels)
        problems = density_violations(rho, herm_tol=1e-8, trace_tol=1e-6)
        if problems:
            raise IntegrationError("; ".join(problems), last_good=float(frame.x_e[i]))
        mats.append(rho.copy())
    mats = np.array(mats)
    occ = np.real(np.einsum("nkk->nk", mats))
    crossings = frame_crossings(frame)
    traj = Trajectory(
        stamps=frame.x_e.copy(),
        occupations=occ,
        stamp_name="x_e",
        matrices=mats if store_matrices else None,
        meta={
            "stage": "reset",
            "t_ns": frame.t.tolist(),
            "gamma_per_ns": gamma,
            "v_e": v_e,
            "x_e0": ramp.x_e0,
            "x_e_end": ramp.x_e_end,
            "crossings": [
                {
                    "levels": [c.lower_level, c.upper_level],
                    "x_star": c.x_star,
                    "delta_K": c.delta,
                    "slope_K_per_flux": c.slope_diff,
                }
                for c in crossings
            ],
        },
    )
    problems = traj.check_invariants()
    if problems:
        raise IntegrationError("; ".join(problems), last_good=float(frame.x_e[-1]))
    return traj


@dataclass(frozen=True)
class TransitionWidth:
    lower_level: int
    upper_level: int
    x_star: float
    width: float
    jump: float
    switching_level: int


def _first_reach(xs, f, level):
    """Flux where ``f`` first reaches ``level`` (samples in time order, linear interpolation)."""
    above = np.nonzero(f >= level)[0]
    if len(above) == 0:
        return None
    j = above[0]
    if j == 0:
        return xs[0]
    f0, f1 = f[j - 1], f[j]
    if f1 == f0:
        return xs[j]
    return xs[j - 1] + (level - f0) / (f1 - f0) * (xs[j] - xs[j - 1])


def transition_widths(traj: Trajectory, crossings=None, min_jump: float = 1e-3, window: float = 30.0):
    """10%-90% widths (flux quanta) of the population switches at each crossing.

    ``crossings`` defaults to ``traj.meta["crossings"]``. Each entry needs
    ``levels``, ``x_star`` and either ``delta_K``/``slope_K_per_flux`` or a
    ``window`` half-width. Crossings whose occupation jump is below
    ``min_jump`` are skipped and logged.
    """
    if crossings is None:
        crossings = traj.meta.get("crossings")
    if not crossings:
        raise ValidationError("no crossings given and none recorded in the trajectory")
    xs = np.asarray(traj.stamps, dtype=float)
    out = []
    for c in crossings:
        lo, hi = c["levels"]
        xc = c["x_star"]
        if "window" in c:
            half = c["window"]
        else:
            half = window * c["delta_K"] / c["slope_K_per_flux"]
        # only crossings sharing a level can overlap in the occupations
        others = [abs(q["x_star"] - xc) for q in crossings if q is not c and set(q["levels"]) & {lo, hi}]
        others = [d for d in others if d > 0]
        if others:
            half = min(half, 0.5 * min(others))
        inside = np.nonzero(np.abs(xs - xc) <= half)[0]
        if len(inside) < 2:
            logger.warning("crossing %s at x_e=%.10g is not resolved by the trajectory samples", c["levels"], xc)
            continue
        i0, i1 = inside[0], inside[-1]
        best = None
        for level in (hi, lo):
            occ = traj.level(level)
            jump = occ[i1] - occ[i0]
            if best is None or abs(jump) > abs(best[1]):
                best = (level, jump)
        level, jump = best
        if abs(jump) < min_jump:
            logger.info("crossing %s at x_e=%.10g: jump %.1e below %.0e, skipped", c["levels"], xc, abs(jump), min_jump)
            continue
        seg = slice(i0, i1 + 1)
        frac = (traj.level(level)[seg] - traj.level(level)[i0]) / jump
        x10 = _first_reach(xs[seg], frac, 0.1)
        x90 = _first_reach(xs[seg], frac, 0.9)
        out.append(
            TransitionWidth(
                lower_level=lo,
                upper_level=hi,
                x_star=xc,
                width=float(abs(x90 - x10)),
                jump=float(jump),
                switching_level=level,
            )
        )
    return out
