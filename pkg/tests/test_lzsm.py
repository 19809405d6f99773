import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from fluxqudit import UNITS, CrossingChain, aim_final_occupations, flux_speed, lzsm_probability, min_speed_for_target
from fluxqudit.errors import DomainError, ValidationError
from fluxqudit.lzsm import (
    cascade_propagate,
    crossing_split,
    design_ramp_speed,
    lzsm_report,
    rate_equation_evolve,
    reset_probability_estimate,
)

HB = UNITS.hbar_over_kB


def test_zero_gap_passes_diabatically():
    assert lzsm_probability(0.0, 1.0) == 1.0


def test_half_probability():
    delta, v = 1e-3, 0.2
    v_half = math.pi * delta**2 / (2 * HB * math.log(2))
    assert lzsm_probability(delta, v_half) == pytest.approx(0.5, rel=1e-14)


def test_domain_errors():
    with pytest.raises(DomainError):
        lzsm_probability(1e-3, 0.0)
    with pytest.raises(DomainError):
        lzsm_probability(-1e-3, 1.0)
    with pytest.raises(DomainError):
        min_speed_for_target(1e-3, 1.0)
    with pytest.raises(DomainError):
        flux_speed(1.0, 0.0)


@given(d1=st.floats(1e-6, 1e-2), d2=st.floats(1e-6, 1e-2), v=st.floats(1e-3, 10.0))
@settings(max_examples=100)
def test_probability_monotone_in_gap_and_speed(d1, d2, v):
    lo, hi = sorted((d1, d2))
    if hi > lo * (1 + 1e-9):
        assert lzsm_probability(hi, v) <= lzsm_probability(lo, v)
        assert lzsm_probability(lo, v) <= lzsm_probability(lo, v * 1.5)


def test_target_speed_round_trip():
    v = min_speed_for_target(3e-3, 0.99)
    assert lzsm_probability(3e-3, v) == pytest.approx(0.99, rel=1e-12)
    assert min_speed_for_target(3e-3, math.exp(-1)) == pytest.approx(math.pi * 9e-6 / (2 * HB))
    assert min_speed_for_target(1.5e-3, 0.99) == pytest.approx(v / 4)


def test_flux_speed_scaling_and_design_values():
    v = min_speed_for_target(3e-3, 0.99)
    s = flux_speed(v, 3e-6)
    assert s.wb_per_s == pytest.approx(0.42e-9, rel=0.02)
    assert s.phi0_per_us == pytest.approx(0.205, rel=0.02)
    assert flux_speed(v, 6e-6).wb_per_s == pytest.approx(s.wb_per_s / 2)
    assert s.ramp_duration_us(0.5087 - 0.4913) == pytest.approx(0.1, rel=0.3)
    d = design_ramp_speed(3e-3, 0.99, 3e-6)
    assert d.dphi_dt_phi0_per_us == s.phi0_per_us


def test_aim_limits():
    assert np.array_equal(aim_final_occupations(np.ones(6)), [0, 0, 0, 0, 0, 0, 1])
    out = aim_final_occupations([0.0, 0.7, 0.2])
    assert out[0] == 1.0 and out[1:].sum() == 0.0


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=10))
@settings(max_examples=1000)
def test_aim_is_probability_vector(probs):
    out = aim_final_occupations(probs)
    assert np.all(out >= 0) and np.all(out <= 1)
    assert out.sum() == pytest.approx(1.0, abs=1e-12)


def synthetic_chain(gamma, n=3, seed=7):
    rng = np.random.default_rng(seed)
    x_stars = 0.5 - np.cumsum(rng.uniform(0.001, 0.002, n))
    return CrossingChain(
        deltas=rng.uniform(1e-4, 3e-3, n),
        slope_diffs=rng.uniform(300, 450, n),
        x_stars=x_stars,
        v_e=0.05,
        gamma=gamma,
        x_e0=0.5001,
        x_e_end=x_stars[-1] - 0.001,
    )


def cascade_generator(dim, gamma):
    Q = np.zeros((dim, dim))
    for k in range(1, dim):
        Q[k, k] -= gamma
        Q[k - 1, k] += gamma
    return Q


def expm_oracle(chain, t_query):
    """Brute force: matrix exponentials between crossings plus split matrices."""
    Q = cascade_generator(chain.dim, chain.gamma)
    p = np.zeros(chain.dim)
    p[0] = 1.0
    t = 0.0
    for n, (tn, prob) in enumerate(zip(chain.crossing_times, chain.probabilities), start=1):
        if tn > t_query:
            break
        p = expm(Q * (tn - t)) @ p
        S = np.eye(chain.dim)
        S[n - 1 : n + 1, n - 1 : n + 1] = [[1 - prob, prob], [prob, 1 - prob]]
        p = S @ p
        t = tn
    return expm(Q * (t_query - t)) @ p


@pytest.mark.parametrize("gamma", [0.0, 5.0, 22.7, 80.0])
def test_rate_equations_match_matrix_exponential_oracle(gamma):
    chain = synthetic_chain(gamma)
    res = rate_equation_evolve(chain)
    assert np.abs(res.final - expm_oracle(chain, chain.t_end)).max() < 1e-9
    times = chain.time_at(res.trajectory.stamps)
    for i in range(0, len(times), 97):
        assert np.abs(res.trajectory.occupations[i] - expm_oracle(chain, times[i])).max() < 1e-9


def test_cascade_closed_form_matches_expm():
    p0 = np.array([0.1, 0.2, 0.3, 0.15, 0.25])
    out = cascade_propagate(p0, 1.7)
    assert np.abs(out - expm(cascade_generator(5, 1.0) * 1.7) @ p0).max() < 1e-12


def test_gamma_zero_equals_aim_exactly():
    chain = synthetic_chain(0.0, n=6)
    assert np.array_equal(rate_equation_evolve(chain).final, aim_final_occupations(chain))


def test_probability_conserved_everywhere():
    res = rate_equation_evolve(synthetic_chain(30.0, n=5))
    assert np.abs(res.trajectory.occupations.sum(axis=1) - 1).max() < 1e-12
    assert crossing_split(np.array([0.3, 0.7, 0.0]), 1, 0.4).sum() == pytest.approx(1.0)


def test_single_crossing_interval_solution():
    chain = CrossingChain([1e-4], [400.0], [0.499], v_e=0.1, gamma=12.0, x_e0=0.5, x_e_end=0.495)
    t12 = chain.crossing_times[0]
    P = chain.probabilities[0]
    xs = np.linspace(0.4989, 0.4951, 7)
    res = rate_equation_evolve(chain, stamps=xs)
    t = chain.time_at(xs)
    assert np.allclose(res.trajectory.level(2), P * np.exp(-12.0 * (t - t12)), atol=1e-14)
    assert np.allclose(res.trajectory.level(1), 1 - P * np.exp(-12.0 * (t - t12)), atol=1e-14)


def test_final_top_level_closed_form():
    chain = synthetic_chain(17.0, n=6)
    expected = np.prod(chain.probabilities) * math.exp(-17.0 * (chain.t_end - chain.crossing_times[0]))
    assert rate_equation_evolve(chain).final[-1] == pytest.approx(expected, rel=1e-12)


def test_estimate_limits():
    chain = synthetic_chain(0.0, n=4)
    assert reset_probability_estimate(chain) == pytest.approx(np.prod(chain.probabilities))
    perfect = CrossingChain([1e-12] * 2, [400.0] * 2, [0.499, 0.498], v_e=1.0, gamma=math.log(2), x_e0=0.5, x_e_end=0.497)
    assert reset_probability_estimate(perfect, dwell=[1.0]) == pytest.approx(0.5, rel=1e-9)


def test_chain_validation():
    with pytest.raises(ValidationError):
        CrossingChain([], [], [], v_e=1.0, gamma=0.0, x_e0=0.5, x_e_end=0.4)
    with pytest.raises(ValidationError):
        CrossingChain([1e-4, 1e-4], [400, 400], [0.498, 0.499], v_e=1.0, gamma=0.0, x_e0=0.5, x_e_end=0.49)
    with pytest.raises(ValidationError):
        CrossingChain([0.0], [400], [0.499], v_e=1.0, gamma=0.0, x_e0=0.5, x_e_end=0.49)


def test_report_contents():
    chain = synthetic_chain(22.7, n=3)
    rep = lzsm_report(chain, numeric=0.6)
    assert len(rep["crossings"]) == 3
    assert rep["estimate"] == pytest.approx(rep["chain_product"] * rep["decay_factor"])
    assert rep["difference"] == pytest.approx(rep["estimate"] - 0.6)
