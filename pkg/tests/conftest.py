import numpy as np
import pytest

from fluxqudit import CircuitParams, RampSchedule, evolve_reset, ramp_crossings, solve_spectrum
from fluxqudit.reset import track_eigenbasis

# reference device: the nine-level double well used throughout the tests
U0, BETA, MASS, X_WORK = 32.68, 1.28, 955.0, 0.5087
RAMP_START, RAMP_SPEED, RAMP_END, RESET_GAMMA = 0.5001, 0.454, 0.4913, 22.7


@pytest.fixture(scope="session")
def device():
    return CircuitParams(U0=U0, beta_L=BETA, M=MASS, x_e=X_WORK)


@pytest.fixture(scope="session")
def work_spectrum(device):
    return solve_spectrum(device, n_levels=9)


@pytest.fixture(scope="session")
def path_crossings(device):
    return ramp_crossings(device, RAMP_START, RAMP_END, n_crossings=6)


@pytest.fixture(scope="session")
def reset_ramp():
    return RampSchedule(x_e0=RAMP_START, v_e=RAMP_SPEED, x_e_end=RAMP_END)


@pytest.fixture(scope="session")
def reset_frame(device, reset_ramp):
    return track_eigenbasis(device, reset_ramp)


@pytest.fixture(scope="session")
def reset_run(device, reset_ramp, reset_frame):
    return evolve_reset(None, device, reset_ramp, RESET_GAMMA, frame=reset_frame)


@pytest.fixture(scope="session")
def reset_run_coherent(device, reset_ramp, reset_frame):
    return evolve_reset(None, device, reset_ramp, 0.0, frame=reset_frame)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
