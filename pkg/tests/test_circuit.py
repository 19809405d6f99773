import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluxqudit import UNITS, CircuitParams, DomainError, PhysicalCircuit, classify_wells, from_physical, to_physical
from fluxqudit.circuit import potential_curvature, potential_energy, potential_gradient, shielding_current_sign


def test_units_follow_codata():
    assert UNITS.hbar_over_kB == pytest.approx(7.6382e-3, rel=1e-4)
    assert UNITS.flux_quantum == pytest.approx(2.067833848e-15, rel=1e-9)
    assert UNITS.energy_from_rate(UNITS.rate_from_energy(0.37)) == pytest.approx(0.37)


@pytest.mark.parametrize("field,value", [("U0", 0.0), ("U0", -1.0), ("beta_L", 0.0), ("M", -3.0)])
def test_invalid_parameters_rejected(field, value):
    kwargs = dict(U0=32.68, beta_L=1.28, M=955.0, x_e=0.5)
    kwargs[field] = value
    with pytest.raises(DomainError):
        CircuitParams(**kwargs)


def test_physical_round_trip():
    p = CircuitParams(U0=32.68, beta_L=1.28, M=955.0, x_e=0.5087)
    q = from_physical(to_physical(p), p.x_e)
    assert (q.U0, q.beta_L, q.M) == pytest.approx((p.U0, p.beta_L, p.M), rel=1e-12)


def test_josephson_energy_independent_of_inductance():
    # U0 * beta_L = E_J / kB does not depend on L
    a = from_physical(PhysicalCircuit(L=200e-12, C=100e-15, I_c=1.748e-6), 0.5)
    b = from_physical(PhysicalCircuit(L=500e-12, C=100e-15, I_c=1.748e-6), 0.5)
    assert a.U0 * a.beta_L == pytest.approx(b.U0 * b.beta_L, rel=1e-12)
    assert a.U0 * a.beta_L == pytest.approx(41.67, rel=2e-3)


@given(x=st.floats(-0.5, 1.5), xe=st.floats(0.45, 0.55), beta=st.floats(0.5, 2.4))
@settings(max_examples=60, deadline=None)
def test_gradient_and_curvature_match_finite_differences(x, xe, beta):
    p = CircuitParams(U0=10.0, beta_L=beta, M=100.0, x_e=xe)
    h = 1e-5
    fd = (potential_energy(x + h, p) - potential_energy(x - h, p)) / (2 * h)
    assert potential_gradient(x, p) == pytest.approx(fd, rel=1e-6, abs=1e-5)
    fd2 = (potential_gradient(x + h, p) - potential_gradient(x - h, p)) / (2 * h)
    assert potential_curvature(x, p) == pytest.approx(fd2, rel=1e-6, abs=1e-4)


def test_symmetric_double_well_at_half_flux():
    w = classify_wells(CircuitParams(U0=32.68, beta_L=1.28, M=955.0, x_e=0.5))
    assert w.is_double
    assert w.barrier == pytest.approx(0.5, abs=1e-12)
    assert w.minima[0] + w.minima[1] == pytest.approx(1.0, abs=1e-10)


def test_working_point_barrier():
    w = classify_wells(CircuitParams(U0=32.68, beta_L=1.28, M=955.0, x_e=0.5087))
    assert w.is_double
    assert w.barrier == pytest.approx(0.468, abs=1e-3)
    assert w.barrier_height == pytest.approx(1.30, abs=0.01)


def test_single_well_below_multistability():
    assert not classify_wells(CircuitParams(U0=32.68, beta_L=0.9, M=955.0, x_e=0.5)).is_double


def test_large_beta_is_multistable_despite_nominal_window():
    # the nominal window check and the honest root count disagree above 2.48
    p = CircuitParams(U0=10.0, beta_L=3.0, M=955.0, x_e=0.5)
    assert not p.is_double_well()
    assert classify_wells(p).is_double


def test_shielding_current_sign():
    assert shielding_current_sign(0.3) == -1
    assert shielding_current_sign(0.7) == 1
    assert shielding_current_sign(0.5) == 0


def test_minima_have_zero_gradient():
    p = CircuitParams(U0=32.68, beta_L=1.28, M=955.0, x_e=0.5087)
    for m in classify_wells(p).minima:
        assert abs(potential_gradient(m, p)) < 1e-9 * p.U0 * 4 * math.pi**2
        assert potential_curvature(m, p) > 0
