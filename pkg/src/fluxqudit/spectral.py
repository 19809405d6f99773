"""Stationary spectrum of the flux qudit and avoided-crossing analysis.

The kinetic operator ``-(1/2M) d^2/dx^2`` is discretized in the sine basis
of the box ``[x_min, x_max]`` (Dirichlet walls) and transformed to the grid
points, so the potential stays diagonal. Convergence is exponential in the
number of points, which is what resolving a ~3e-8 K tunnel splitting on top
of ~40 K level energies requires.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .circuit import CircuitParams, classify_wells, potential_energy
from .errors import (
    CrossingNotFoundError,
    GridTooSmallError,
    NumericError,
    ResolutionError,
    ValidationError,
)

logger = logging.getLogger(__name__)

BOUNDARY_DECAY = 1e-10
CONVERGENCE_TOL = 1e-9  # K
LOCALIZATION_THRESHOLD = 0.8
INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Grid:
    """Uniform grid of interior sine-DVR points on ``(x_min, x_max)``."""

    x_min: float = -0.3
    x_max: float = 1.3
    n_points: int = 1024

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValidationError(f"grid needs x_min < x_max, got [{self.x_min}, {self.x_max}]")
        if self.n_points < 64:
            raise ValidationError(f"grid needs at least 64 points, got {self.n_points}")

    @property
    def spacing(self):
        return (self.x_max - self.x_min) / (self.n_points + 1)

    @property
    def points(self):
        return self.x_min + self.spacing * np.arange(1, self.n_points + 1)

    def refined(self, factor=2):
        return Grid(self.x_min, self.x_max, self.n_points * factor)

    def widened(self, margin):
        scale = (self.x_max - self.x_min + 2 * margin) / (self.x_max - self.x_min)
        return Grid(self.x_min - margin, self.x_max + margin, int(math.ceil(self.n_points * scale)))


DEFAULT_GRID = Grid()


@lru_cache(maxsize=8)
def _sine_transform(n_points):
    idx = np.arange(1, n_points + 1)
    return math.sqrt(2.0 / (n_points + 1)) * np.sin(np.pi * np.outer(idx, idx) / (n_points + 1))


@lru_cache(maxsize=16)
def kinetic_matrix(grid: Grid, M: float):
    """Sine-DVR matrix of ``-(1/2M) d^2/dx^2`` on the grid points (K)."""
    S = _sine_transform(grid.n_points)
    k = np.arange(1, grid.n_points + 1) * np.pi / (grid.x_max - grid.x_min)
    T = (S * (k**2 / (2.0 * M))) @ S
    T = 0.5 * (T + T.T)
    T.setflags(write=False)
    return T


def hamiltonian_matrix(p: CircuitParams, grid: Grid):
    H = kinetic_matrix(grid, p.M).copy()
    H[np.diag_indices_from(H)] += potential_energy(grid.points, p)
    return H


class Localization(str, enum.Enum):
    LEFT = "Left"
    RIGHT = "Right"
    DELOCALIZED = "Delocalized"

    def __str__(self):
        return self.value


@dataclass
class Spectrum:
    """Lowest eigenpairs of the flux Hamiltonian.

    ``wavefunctions[:, j]`` is level ``j + 1`` sampled on ``x``, normalized so
    that ``sum(psi**2) * dx == 1``.
    """

    energies: np.ndarray
    wavefunctions: np.ndarray
    x: np.ndarray
    params: CircuitParams
    grid: Grid
    localization: list = field(default_factory=list)
    mean_flux: np.ndarray | None = None
    left_mass: np.ndarray | None = None
    barrier_x: float | None = None

    @property
    def n_levels(self):
        return len(self.energies)

    @property
    def dx(self):
        return self.grid.spacing

    def overlap(self, other: "Spectrum"):
        """Matrix of quadrature overlaps ``<self_i|other_j>``."""
        return self.wavefunctions.T @ other.wavefunctions * self.dx

    def localized_levels(self):
        return [j + 1 for j, lab in enumerate(self.localization) if lab is not Localization.DELOCALIZED]

    def levels_below(self, energy):
        return int(np.count_nonzero(self.energies < energy))


def _fix_signs(vectors):
    # largest-magnitude component positive
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _eigh_lowest(H, n):
    w, v = sla.eigh(H, subset_by_index=(0, n - 1), driver="evr")
    return w, v


def solve_spectrum(
    p: CircuitParams,
    grid: Grid | None = None,
    n_levels: int = 9,
    check_convergence: bool = True,
    localization_threshold: float = LOCALIZATION_THRESHOLD,
) -> Spectrum:
    """Solve for the lowest ``n_levels`` eigenpairs.

    With ``grid=None`` the default grid is used and widened automatically
    if the boundary-decay check fails; an explicit grid raises
    :class:`GridTooSmallError` instead. The convergence check compares
    against a half-resolution solve and raises :class:`ResolutionError`
    if any energy moves by more than 1e-9 K.
    """
    auto = grid is None
    grid = DEFAULT_GRID if auto else grid
    if n_levels < 1 or n_levels > grid.n_points // 8:
        raise ValidationError(f"n_levels={n_levels} must be in [1, n_points/8={grid.n_points // 8}]")
    for attempt in range(4):
        w, v = _eigh_lowest(hamiltonian_matrix(p, grid), n_levels)
        edge = np.maximum(np.abs(v[0]), np.abs(v[-1])) / np.abs(v).max(axis=0)
        if np.all(edge < BOUNDARY_DECAY):
            break
        if not auto or attempt == 3:
            raise GridTooSmallError(
                f"eigenfunctions reach {edge.max():.1e} of their peak at the grid edge "
                f"[{grid.x_min}, {grid.x_max}]; widen the grid"
            )
        grid = grid.widened(0.5)
        logger.info("widening grid to [%g, %g]", grid.x_min, grid.x_max)
    if check_convergence:
        coarse = Grid(grid.x_min, grid.x_max, grid.n_points // 2)
        if coarse.n_points >= 64:
            wc, _ = _eigh_lowest(hamiltonian_matrix(p, coarse), n_levels)
            drift = np.abs(wc - w).max()
            if drift > CONVERGENCE_TOL:
                raise ResolutionError(
                    f"energies moved by {drift:.2e} K between {coarse.n_points} and "
                    f"{grid.n_points} points; refine the grid"
                )
    psi = _fix_signs(v) / math.sqrt(grid.spacing)
    spec = Spectrum(energies=w, wavefunctions=psi, x=grid.points, params=p, grid=grid)
    wells = classify_wells(p)
    barrier = wells.barrier if wells.barrier is not None else 0.5
    labels, mean_flux, left = localize(spec, barrier, localization_threshold)
    spec.localization, spec.mean_flux, spec.left_mass, spec.barrier_x = labels, mean_flux, left, barrier
    return spec


def localize(spec: Spectrum, barrier_x: float, threshold: float = LOCALIZATION_THRESHOLD):
    """Label each level Left/Right/Delocalized by its probability mass.

    Returns ``(labels, mean_flux, left_mass)``.
    """
    density = spec.wavefunctions**2 * spec.dx
    weight = np.where(spec.x < barrier_x, 1.0, 0.0)
    weight[spec.x == barrier_x] = 0.5
    left = weight @ density
    total = density.sum(axis=0)
    left = left / total
    mean_flux = (spec.x @ density) / total
    labels = []
    for frac in left:
        if frac >= threshold:
            labels.append(Localization.LEFT)
        elif 1.0 - frac >= threshold:
            labels.append(Localization.RIGHT)
        else:
            labels.append(Localization.DELOCALIZED)
    return labels, mean_flux, left


class FluxFamily:
    """Reduced-basis model of the Hamiltonian as a function of external flux.

    Shifting ``x_e`` changes the potential by ``U0 [4 pi^2 (x_ref - x_e) x +
    2 pi^2 (x_e^2 - x_ref^2)]``, which is linear in ``x_e``. Projecting onto
    the lowest ``n_basis`` eigenstates at ``x_ref`` gives a small dense
    matrix per flux value. With the default 48 states the low-lying
    energies agree with full grid solves to ~1e-12 K within +/-0.01 flux
    quanta of the reference.
    """

    def __init__(self, p: CircuitParams, grid: Grid | None = None, n_basis: int = 48, x_ref: float | None = None):
        self.params = p if x_ref is None else p.with_flux(x_ref)
        self.x_ref = self.params.x_e
        self.grid = grid or DEFAULT_GRID
        self.n_basis = n_basis
        w, v = _eigh_lowest(hamiltonian_matrix(self.params, self.grid), n_basis)
        self.basis_energies = w
        self.basis = _fix_signs(v)
        x = self.grid.points
        self.position = self.basis.T @ (x[:, None] * self.basis)
        self.position = 0.5 * (self.position + self.position.T)
        self._tilt = 4.0 * math.pi**2 * self.params.U0

    def hamiltonian(self, x_e):
        shift = self._tilt * (self.x_ref - x_e)
        H = shift * self.position
        H[np.diag_indices_from(H)] += self.basis_energies + 0.5 * self._tilt * (x_e**2 - self.x_ref**2)
        return H

    def flux_derivative(self, x_e):
        """dH/dx_e in the reduced basis (K per flux quantum)."""
        D = -self._tilt * self.position
        D[np.diag_indices_from(D)] += self._tilt * x_e
        return D

    def solve(self, x_e, n_levels):
        """Energies and reduced-basis coefficient columns of the lowest levels."""
        w, c = sla.eigh(self.hamiltonian(x_e), subset_by_index=(0, n_levels - 1), driver="evr")
        return w, c

    def energies(self, x_e, n_levels):
        return sla.eigh(self.hamiltonian(x_e), eigvals_only=True, subset_by_index=(0, n_levels - 1), driver="evr")

    def spectrum(self, x_e, n_levels, localization_threshold=LOCALIZATION_THRESHOLD) -> Spectrum:
        w, c = self.solve(x_e, n_levels)
        psi = _fix_signs(self.basis @ c) / math.sqrt(self.grid.spacing)
        p = self.params.with_flux(x_e)
        spec = Spectrum(energies=w, wavefunctions=psi, x=self.grid.points, params=p, grid=self.grid)
        wells = classify_wells(p)
        barrier = wells.barrier if wells.barrier is not None else 0.5
        labels, mean_flux, left = localize(spec, barrier, localization_threshold)
        spec.localization, spec.mean_flux, spec.left_mass, spec.barrier_x = labels, mean_flux, left, barrier
        return spec


@dataclass
class SpectrumSweep:
    """Spectra along a one-parameter sweep, with eigenvector signs made continuous."""

    parameter: str
    values: np.ndarray
    spectra: list

    @property
    def energies(self):
        return np.array([s.energies for s in self.spectra])

    def localization_table(self):
        return [[str(lab) for lab in s.localization] for s in self.spectra]

    def localized_counts(self):
        return np.array([len(s.localized_levels()) for s in self.spectra])


def _solve_point(args):
    p, grid, n_levels, check = args
    return solve_spectrum(p, grid, n_levels, check_convergence=check)


def _enforce_continuity(spectra):
    for prev, cur in zip(spectra, spectra[1:]):
        if prev.wavefunctions.shape != cur.wavefunctions.shape:
            continue
        diag = np.einsum("ij,ij->j", prev.wavefunctions, cur.wavefunctions)
        flip = diag < 0
        if np.any(flip):
            cur.wavefunctions[:, flip] *= -1.0


def _run_points(jobs, workers):
    if workers is None or workers <= 1:
        return [_solve_point(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_solve_point, jobs))


def _sweep(parameter, values, param_list, grid, n_levels, workers, check_convergence):
    jobs = [(q, grid, n_levels, check_convergence) for q in param_list]
    try:
        spectra = _run_points(jobs, workers)
    except NumericError:
        # rerun sequentially to attach the failing step index
        for i, job in enumerate(jobs):
            try:
                _solve_point(job)
            except NumericError as exc:
                raise type(exc)(f"step {i} ({parameter}={values[i]!r}): {exc}") from exc
        raise
    _enforce_continuity(spectra)
    return SpectrumSweep(parameter=parameter, values=np.asarray(values, dtype=float), spectra=spectra)


def _sweep_values(value_range, n_steps):
    start, stop = (float(v) for v in value_range)
    if n_steps < 2:
        raise ValidationError(f"a sweep needs n_steps >= 2, got {n_steps}")
    if start == stop:
        raise ValidationError("sweep range is empty")
    return np.linspace(start, stop, n_steps)


def sweep_flux(
    p: CircuitParams,
    x_e_range,
    n_steps: int,
    n_levels: int = 9,
    grid: Grid | None = None,
    workers: int = 1,
    check_convergence: bool = False,
) -> SpectrumSweep:
    """Spectra over external flux; each point is an independent :func:`solve_spectrum`."""
    values = _sweep_values(x_e_range, n_steps)
    return _sweep("x_e", values, [p.with_flux(x) for x in values], grid, n_levels, workers, check_convergence)


def sweep_beta(
    U0_times_beta: float,
    beta_range,
    n_steps: int,
    n_levels: int = 9,
    M: float = 955.0,
    x_e: float = 0.5087,
    grid: Grid | None = None,
    workers: int = 1,
    check_convergence: bool = False,
) -> SpectrumSweep:
    """Spectra over beta_L at fixed Josephson energy ``U0 * beta_L``."""
    values = _sweep_values(beta_range, n_steps)
    if values.min() <= 0 or values.max() > 2.48:
        raise ValidationError("beta_L sweep must stay inside (0, 2.48]")
    params = [CircuitParams(U0=U0_times_beta / b, beta_L=b, M=M, x_e=x_e) for b in values]
    return _sweep("beta_L", values, params, grid, n_levels, workers, check_convergence)


def golden_section_minimize(f: Callable[[float], float], a: float, b: float, xtol: float, max_iter: int = 500):
    """Minimize a unimodal ``f`` on ``[a, b]`` until the bracket is narrower than ``xtol``.

    Returns ``(x_min, f(x_min))``.
    """
    a, b = min(a, b), max(a, b)
    c = b - INV_GOLDEN * (b - a)
    d = a + INV_GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= xtol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_GOLDEN * (b - a)
            fd = f(d)
        if c >= d:  # bracket below float resolution
            break
    return (c, fc) if fc <= fd else (d, fd)


@dataclass(frozen=True)
class AvoidedCrossing:
    """Minimal splitting between adiabatic levels ``lower_level`` and ``upper_level`` (1-based)."""

    lower_level: int
    upper_level: int
    x_star: float
    delta: float
    slope_diff: float
    slope_left: float = float("nan")
    slope_right: float = float("nan")

    @property
    def width(self):
        """Flux scale ``delta / slope_diff`` of the avoided crossing."""
        return self.delta / self.slope_diff


def _local_minima(g):
    return [j for j in range(1, len(g) - 1) if g[j] < g[j - 1] and g[j] <= g[j + 1]]


def refine_gap_minimum(
    energy_fn: Callable[[float], np.ndarray],
    pair,
    bracket,
    slope_hint: float,
    flank_limit: float,
    xtol: float = 1e-10,
) -> AvoidedCrossing:
    """Golden-section refinement of one gap minimum plus two-sided slope fits."""
    lo, hi = pair[0] - 1, pair[1] - 1

    def gap(x):
        e = energy_fn(x)
        return float(e[hi] - e[lo])

    x_star, delta = golden_section_minimize(gap, bracket[0], bracket[1], xtol)
    # sharp minima need a bracket well below the crossing width
    fine = 1e-3 * delta / max(slope_hint, 1e-300)
    if fine < xtol:
        fine = max(fine, 8 * np.finfo(float).eps * max(abs(x_star), 1.0))
        x_star, delta = golden_section_minimize(gap, x_star - xtol, x_star + xtol, fine)
    if delta <= 0:
        raise NumericError(f"levels {pair}: non-positive gap {delta:.3e} at x_e={x_star!r}")
    width = delta / max(slope_hint, 1e-300)
    d0 = min(100.0 * width, flank_limit / 3.0)
    dists = d0 * np.linspace(1.0, 3.0, 5)
    slopes = []
    for side in (-1.0, 1.0):
        xs = x_star + side * dists
        gs = np.array([gap(x) for x in xs])
        slopes.append(abs(np.polyfit(xs - x_star, gs, 1)[0]))
    return AvoidedCrossing(
        lower_level=pair[0],
        upper_level=pair[1],
        x_star=float(x_star),
        delta=float(delta),
        slope_diff=float(0.5 * (slopes[0] + slopes[1])),
        slope_left=float(slopes[0]),
        slope_right=float(slopes[1]),
    )


def gap_minima(
    energy_fn: Callable[[float], np.ndarray],
    x_e_range,
    level_pairs: Sequence,
    n_scan: int = 2001,
    which: str = "deepest",
    xtol: float = 1e-10,
) -> list:
    """Locate avoided crossings of an arbitrary level family ``energy_fn(x) -> sorted energies``.

    ``x_e_range`` is ``(start, stop)``; with ``which="first"`` the first gap
    minimum met going from start to stop is returned for each pair,
    otherwise the deepest one.
    """
    start, stop = (float(v) for v in x_e_range)
    if start == stop:
        raise ValidationError("crossing search range is empty")
    xs = np.linspace(start, stop, n_scan)
    energies = np.array([energy_fn(x) for x in xs])
    step = abs(xs[1] - xs[0])
    out = []
    for pair in level_pairs:
        pair = tuple(int(v) for v in pair)
        if pair[1] != pair[0] + 1 or pair[0] < 1:
            raise ValidationError(f"level pair {pair} is not adjacent (n, n+1)")
        if pair[1] > energies.shape[1]:
            raise ValidationError(f"level pair {pair} exceeds the {energies.shape[1]} levels available")
        g = energies[:, pair[1] - 1] - energies[:, pair[0] - 1]
        cands = _local_minima(g)
        if not cands:
            raise CrossingNotFoundError(pair)
        j = cands[0] if which == "first" else min(cands, key=lambda k: g[k])
        slope_hint = max(abs(g[j + 1] - g[j]), abs(g[j - 1] - g[j])) / step
        others = [abs(xs[k] - xs[j]) for k in cands if k != j]
        flank_limit = min(others + [abs(stop - start) / 4.0])
        out.append(refine_gap_minimum(energy_fn, pair, (xs[j - 1], xs[j + 1]), slope_hint, flank_limit, xtol))
    return out


def find_avoided_crossings(
    p: CircuitParams,
    x_e_range,
    level_pairs: Sequence,
    grid: Grid | None = None,
    n_scan: int = 2001,
    which: str = "deepest",
    n_basis: int = 48,
) -> list:
    """Avoided crossings of adjacent level pairs within a flux range.

    Energies come from a :class:`FluxFamily` built at the middle of the range.
    """
    family = FluxFamily(p, grid, n_basis=n_basis, x_ref=0.5 * (x_e_range[0] + x_e_range[1]))
    n_levels = max(int(q[1]) for q in level_pairs)
    return gap_minima(lambda x: family.energies(x, n_levels), x_e_range, level_pairs, n_scan, which)


def ramp_crossings(
    p: CircuitParams,
    x_start: float,
    x_stop: float,
    n_crossings: int = 6,
    grid: Grid | None = None,
    n_scan: int = 4001,
    n_basis: int = 48,
    family: FluxFamily | None = None,
) -> list:
    """Sequence of crossings met by a state that keeps passing diabatically.

    Starting in level 1 at ``x_start``, crossing ``n`` is the first minimum of
    the ``(n, n+1)`` gap beyond crossing ``n-1`` in the ramp direction.
    """
    family = family or FluxFamily(p, grid, n_basis=n_basis, x_ref=0.5 * (x_start + x_stop))
    n_levels = n_crossings + 1
    fn = lambda x: family.energies(x, n_levels)
    direction = math.copysign(1.0, x_stop - x_start)
    out = []
    current = x_start
    for n in range(1, n_crossings + 1):
        if out:
            current = out[-1].x_star + direction * 10.0 * out[-1].width
        span = abs(x_stop - current)
        if span <= 0 or direction * (x_stop - current) <= 0:
            raise CrossingNotFoundError((n, n + 1), "ramp ends before this crossing")
        scan = max(64, int(n_scan * span / abs(x_stop - x_start)))
        out.extend(gap_minima(fn, (current, x_stop), [(n, n + 1)], scan, which="first"))
    return out
