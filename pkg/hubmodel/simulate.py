"""
Parameter sampling and trajectory simulation for the temporal-dependent hub
model.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import GroupedData, LeaderSequence, ModelParams, link_probabilities
from .exceptions import InvalidParameterError

logger = logging.getLogger(__name__)

# symbolic leader-persistence settings; a leader stays with probability
# 1/3, 1/2 and 2/3 on average when u is centred
ALPHA_SETTINGS = {
    "log-half-n": lambda n: math.log((n - 1) / 2),
    "log-n": lambda n: math.log(n - 1),
    "log-2n": lambda n: math.log(2 * (n - 1)),
}


def resolve_alpha(value, n):
    """Turn a symbolic alpha token (``log-n`` etc.) or a number into a float."""
    if isinstance(value, str):
        token = value.strip()
        if token in ALPHA_SETTINGS:
            if n < 2:
                raise InvalidParameterError(f"{token} needs n >= 2, got {n}")
            return ALPHA_SETTINGS[token](n)
        try:
            return float(token)
        except ValueError:
            choices = ", ".join(sorted(ALPHA_SETTINGS))
            raise InvalidParameterError(
                f"alpha must be a number or one of {choices}, got {value!r}"
            ) from None
    return float(value)


@dataclass(frozen=True)
class SimConfig:
    n: int
    T: int
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    u_mean: float = 0.0
    u_sd: float = math.sqrt(2.0)
    theta_mean: float = -2.0
    theta_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise InvalidParameterError(f"n must be at least 2, got {self.n}")
        if self.T < 1:
            raise InvalidParameterError(f"T must be at least 1, got {self.T}")
        if self.u_sd <= 0 or self.theta_sd <= 0:
            raise InvalidParameterError("standard deviations must be positive")
        if not 0 <= self.seed < 2**64:
            raise InvalidParameterError("seed must be an unsigned 64-bit integer")


def make_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(seed))


def replicate_rng(seed, index):
    """Generator for replicate ``index``; the same stream SeedSequence.spawn gives."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def replicate_rngs(seed, count):
    return [replicate_rng(seed, r) for r in range(count)]


def sample_parameters(cfg, rng):
    n = cfg.n
    u = rng.normal(cfg.u_mean, cfg.u_sd, size=n)
    upper = np.triu_indices(n, k=1)
    draws = rng.normal(cfg.theta_mean, cfg.theta_sd, size=upper[0].size)
    theta = np.zeros((n, n))
    theta[upper] = draws
    theta[upper[1], upper[0]] = draws
    return ModelParams(u, theta, cfg.alpha, cfg.beta, cfg.gamma)


def simulate_trajectory(params, T, rng, node_labels=()):
    """
    Draw leaders and groups from the generative mechanism.

    The first group comes from the classical hub model. Afterwards the leader
    moves along column z_{t-1} of Phi; a leader from outside the previous
    group draws members with A, one from inside keeps previous members with
    B and recruits outsiders with C. The leader is always included because
    the diagonals of A, B and C are exactly 1.
    """
    if T < 1:
        raise InvalidParameterError(f"T must be at least 1, got {T}")
    probs = link_probabilities(params)
    n = params.n

    leaders = np.empty(T, dtype=np.int64)
    groups = np.empty((T, n), dtype=np.int8)

    leader = rng.choice(n, p=probs.rho)
    groups[0] = rng.random(n) < probs.A[leader]
    leaders[0] = leader
    for t in range(1, T):
        prev = groups[t - 1]
        leader = rng.choice(n, p=probs.Phi[:, leaders[t - 1]])
        if prev[leader] == 0:
            include = probs.A[leader]
        else:
            include = np.where(prev == 1, probs.B[leader], probs.C[leader])
        groups[t] = rng.random(n) < include
        leaders[t] = leader

    logger.debug(
        "Simulated %d groups over %d nodes, mean group size %.2f",
        T,
        n,
        groups.sum(axis=1).mean(),
    )
    return LeaderSequence(leaders), GroupedData(groups, node_labels=node_labels)
