import numpy as np
import pytest

from sgdchain.model import NoiseModel, make_spec


@pytest.fixture(scope="session")
def oracle_1d():
    """mu = 1, sigma^2 = 1, L_sigma = 0: every stationary quantity is explicit."""
    noise = NoiseModel.additive_gaussian([[1.0]])
    return make_spec("quadratic", [0.0], [[1.0]], noise), noise


@pytest.fixture(scope="session")
def quad_3d():
    sigma = np.diag([1.0, 0.5, 0.25])
    noise = NoiseModel.additive_gaussian(0.5 * np.eye(3))
    return make_spec("quadratic", [1.0, -1.0, 0.5], sigma, noise), noise


@pytest.fixture(scope="session")
def design_3d():
    sigma = np.diag([1.0, 0.5, 0.25])
    noise = NoiseModel.random_design(sigma, 0.5)
    return make_spec("least_squares_random_design", [1.0, -1.0, 0.5], sigma, noise, mc_draws=20_000), noise
