import numpy as np
import pytest

from hubmodel.core import ModelParams
from hubmodel.simulate import SimConfig, sample_parameters, simulate_trajectory


def random_params(rng, n, adjustments=True):
    u = rng.normal(0.0, 1.0, size=n)
    theta = rng.normal(-0.5, 1.0, size=(n, n))
    theta = (theta + theta.T) / 2.0
    if adjustments:
        alpha, beta, gamma = rng.normal(0.0, 1.0, size=3)
    else:
        alpha = beta = gamma = 0.0
    return ModelParams(u, theta, alpha, beta, gamma)


def simulated(n, T, seed, alpha=0.0, beta=0.0, gamma=0.0):
    cfg = SimConfig(n=n, T=T, alpha=alpha, beta=beta, gamma=gamma, seed=seed)
    rng = np.random.default_rng(seed)
    params = sample_parameters(cfg, rng)
    leaders, groups = simulate_trajectory(params, T, rng)
    return params, leaders, groups


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_params():
    theta = np.array(
        [
            [0.0, 0.5, -1.0],
            [0.5, 0.0, 0.2],
            [-1.0, 0.2, 0.0],
        ]
    )
    return ModelParams([0.3, -0.2, 0.1], theta, alpha=1.2, beta=0.8, gamma=-0.6)


@pytest.fixture
def small_groups():
    return np.array(
        [
            [1, 1, 0],
            [1, 1, 1],
            [0, 1, 1],
            [1, 0, 0],
            [1, 0, 1],
        ]
    )
