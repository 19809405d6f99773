"""Density-matrix validation and the trajectory container shared by both dynamic stages."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-8
POSITIVITY_TOL = 1e-8


def pure_state(dim: int, level: int):
    """Density matrix of a single level (1-based label)."""
    if not 1 <= level <= dim:
        raise ValidationError(f"level {level} outside 1..{dim}")
    rho = np.zeros((dim, dim), dtype=complex)
    rho[level - 1, level - 1] = 1.0
    return rho


def density_diagnostics(rho):
    """Return hermiticity defect, trace defect and smallest eigenvalue."""
    rho = np.asarray(rho)
    herm = float(np.abs(rho - rho.conj().T).max())
    trace = float(abs(np.trace(rho) - 1.0))
    min_eig = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())
    return {"hermiticity": herm, "trace": trace, "min_eigenvalue": min_eig}


def density_violations(rho, herm_tol=HERMITIAN_TOL, trace_tol=TRACE_TOL, pos_tol=POSITIVITY_TOL):
    d = density_diagnostics(rho)
    problems = []
    if d["hermiticity"] >= herm_tol:
        problems.append(f"not Hermitian (defect {d['hermiticity']:.2e})")
    if d["trace"] >= trace_tol:
        problems.append(f"trace off by {d['trace']:.2e}")
    if d["min_eigenvalue"] <= -pos_tol:
        problems.append(f"negative eigenvalue {d['min_eigenvalue']:.2e}")
    return problems


def validate_density_matrix(rho, dim=None):
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValidationError(f"density matrix must be square, got shape {rho.shape}")
    if dim is not None and rho.shape[0] != dim:
        raise ValidationError(f"density matrix must be {dim}x{dim}, got {rho.shape[0]}x{rho.shape[1]}")
    problems = density_violations(rho)
    if problems:
        raise ValidationError("invalid density matrix: " + "; ".join(problems))
    return rho


@dataclass
class Trajectory:
    """Occupations sampled along time (ns) or external flux.

    ``occupations[i, k]`` is the population of level ``k + 1`` at ``stamps[i]``.
    ``matrices`` optionally holds the full density matrices.
    """

    stamps: np.ndarray
    occupations: np.ndarray
    stamp_name: str = "t_ns"
    matrices: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.occupations.shape[1]

    def level(self, k):
        """Occupation history of level ``k`` (1-based)."""
        return self.occupations[:, k - 1]

    @property
    def final(self):
        return self.occupations[-1]

    def check_invariants(self, trace=1.0, occ_tol=1e-8, sum_tol=1e-6):
        occ = self.occupations
        problems = []
        if occ.min() < -occ_tol or occ.max() > 1.0 + occ_tol:
            problems.append(f"occupations leave [0, 1]: [{occ.min():.3e}, {occ.max():.6f}]")
        drift = np.abs(occ.sum(axis=1) - trace).max()
        if drift > sum_tol:
            problems.append(f"total occupation drifts by {drift:.2e}")
        return problems
