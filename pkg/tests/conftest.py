import numpy as np
import pytest

from seitphr.parameters import default_parameters, initial_state


@pytest.fixture(scope="session")
def params():
    return default_parameters()


@pytest.fixture(scope="session")
def x0(params):
    return initial_state(params)


def random_simplex_state(rng, n_g=3):
    """A strictly valid random state on the unit simplex."""
    from seitphr.model import StateVector
    raw = rng.random((n_g, 11))
    return StateVector(raw / raw.sum())


def random_control(rng, p, theta_max=1.0):
    from seitphr.model import ControlInput
    beta = rng.random((p.n_g, p.n_g)) * p.beta0
    theta = rng.random(p.n_g) * theta_max
    return ControlInput(beta, theta)
