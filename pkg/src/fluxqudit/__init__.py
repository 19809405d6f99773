"""Flux-qudit microwave photon detector: spectrum, capture, reset and LZSM analysis."""

from .capture import CaptureParams, build_capture_hamiltonian, evolve_capture, lindblad_rhs, rabi_frequency
from .circuit import (
    UNITS,
    CircuitParams,
    PhysicalCircuit,
    UnitSystem,
    classify_wells,
    from_physical,
    potential_energy,
    shielding_current_sign,
    to_physical,
)
from .density import Trajectory, pure_state, validate_density_matrix
from .errors import (
    CrossingNotFoundError,
    DomainError,
    FluxQuditError,
    IntegrationError,
    NumericError,
    ValidationError,
)
from .lzsm import (
    CrossingChain,
    aim_final_occupations,
    design_ramp_speed,
    flux_speed,
    lzsm_probability,
    min_speed_for_target,
    rate_equation_evolve,
    reset_probability_estimate,
)
from .reset import RampSchedule, evolve_reset, nonadiabatic_coupling, track_eigenbasis, transition_widths
from .spectral import (
    FluxFamily,
    Grid,
    Localization,
    Spectrum,
    find_avoided_crossings,
    ramp_crossings,
    solve_spectrum,
    sweep_beta,
    sweep_flux,
)

__all__ = [name for name in dir() if not name.startswith("_")]
