"""
Parameters, probability transforms and likelihoods of the temporal-dependent
hub model.

Natural parameters (u, theta, alpha, beta, gamma) live on ``ModelParams``;
everything on the probability scale (rho, A, B, C, Phi and their logs) is
derived by ``link_probabilities`` and carried on ``LinkedProbs``.
"""

from dataclasses import dataclass, field
from datetime import datetime

import numpy as np
from scipy.special import expit, log_expit, logsumexp, softmax

from .exceptions import InvalidParameterError

THETA_MAX = 30.0


def _frozen(array):
    array.setflags(write=False)
    return array


def _time_key(tag):
    """A comparable value for a time tag, or None when it is free text."""
    try:
        return float(tag)
    except (TypeError, ValueError):
        pass
    try:
        return datetime.fromisoformat(str(tag))
    except ValueError:
        return None


@dataclass(frozen=True, eq=False)
class ModelParams:
    u: np.ndarray
    theta: np.ndarray
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    theta_max: float = THETA_MAX

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64)
        theta = np.array(self.theta, dtype=np.float64)
        if u.ndim != 1 or u.size < 1:
            raise InvalidParameterError("u must be a non-empty vector")
        n = u.size
        if theta.shape != (n, n):
            raise InvalidParameterError(
                f"theta must be {n}x{n} to match u, got {theta.shape}"
            )
        if not np.all(np.isfinite(u)):
            raise InvalidParameterError("u contains non-finite entries")
        for name in ("alpha", "beta", "gamma"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise InvalidParameterError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)

        off = ~np.eye(n, dtype=bool)
        if np.isnan(theta[off]).any():
            raise InvalidParameterError("theta contains NaN entries")
        if not np.array_equal(theta[off], theta.T[off]):
            raise InvalidParameterError("theta must be symmetric")
        # +/-inf off the diagonal is allowed and lands on the clamp bounds
        theta = np.clip(theta, -self.theta_max, self.theta_max)
        np.fill_diagonal(theta, np.inf)

        object.__setattr__(self, "u", _frozen(u))
        object.__setattr__(self, "theta", _frozen(theta))

    @property
    def n(self):
        return self.u.size

    def replace(self, **changes):
        values = {
            "u": self.u,
            "theta": self.theta,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "theta_max": self.theta_max,
        }
        values.update(changes)
        return ModelParams(**values)

    def off_diagonal_theta(self):
        """Theta with the diagonal sentinel replaced by 0, safe for arithmetic."""
        theta = self.theta.copy()
        np.fill_diagonal(theta, 0.0)
        return theta


@dataclass(frozen=True, eq=False)
class LinkedProbs:
    rho: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Phi: np.ndarray
    log_rho: np.ndarray = field(repr=False)
    log_Phi: np.ndarray = field(repr=False)
    # log P(include) / log P(exclude) per regime, zero on the diagonal
    log_A: np.ndarray = field(repr=False)
    log_not_A: np.ndarray = field(repr=False)
    log_B: np.ndarray = field(repr=False)
    log_not_B: np.ndarray = field(repr=False)
    log_C: np.ndarray = field(repr=False)
    log_not_C: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.rho.size


@dataclass(frozen=True, eq=False)
class GroupedData:
    G: np.ndarray
    node_labels: tuple = ()
    timestamps: tuple | None = None

    def __post_init__(self):
        G = np.array(self.G)
        if G.ndim != 2 or G.shape[0] < 1 or G.shape[1] < 1:
            raise InvalidParameterError("G must be a non-empty T x n matrix")
        if not np.isin(G, (0, 1)).all():
            raise InvalidParameterError("G entries must be exactly 0 or 1")
        G = G.astype(np.int8)
        empty = np.flatnonzero(G.sum(axis=1) == 0)
        if empty.size:
            raise InvalidParameterError(f"group at t={empty[0]} is empty")

        labels = tuple(str(label) for label in self.node_labels)
        if not labels:
            labels = tuple(f"v{i + 1}" for i in range(G.shape[1]))
        if len(labels) != G.shape[1]:
            raise InvalidParameterError(
                f"{len(labels)} node labels for {G.shape[1]} columns"
            )
        timestamps = self.timestamps
        if timestamps is not None:
            timestamps = tuple(timestamps)
            if len(timestamps) != G.shape[0]:
                raise InvalidParameterError(
                    f"{len(timestamps)} timestamps for {G.shape[0]} groups"
                )
            keys = [_time_key(tag) for tag in timestamps]
            # tags that are all numbers or all ISO dates must not go backwards;
            # anything else is an opaque label
            if None not in keys and len({type(key) for key in keys}) == 1:
                try:
                    t = next(
                        (t for t in range(1, len(keys)) if keys[t] < keys[t - 1]), None
                    )
                except TypeError:
                    # naive and zone-aware datetimes do not compare
                    t = None
                if t is not None:
                    raise InvalidParameterError(f"timestamps go backwards at t={t}")

        object.__setattr__(self, "G", _frozen(G))
        object.__setattr__(self, "node_labels", labels)
        object.__setattr__(self, "timestamps", timestamps)

    @property
    def T(self):
        return self.G.shape[0]

    @property
    def n(self):
        return self.G.shape[1]


@dataclass(frozen=True, eq=False)
class LeaderSequence:
    z: np.ndarray

    def __post_init__(self):
        z = np.array(self.z, dtype=np.int64)
        if z.ndim != 1 or z.size < 1:
            raise InvalidParameterError("leader sequence must be a non-empty vector")
        object.__setattr__(self, "z", _frozen(z))

    @property
    def T(self):
        return self.z.size

    def indicator(self, n):
        """The T x n one-hot matrix S."""
        S = np.zeros((self.T, n), dtype=np.int8)
        S[np.arange(self.T), self.z] = 1
        return S


def _log_pair(theta, shift):
    """log sigma(theta + shift) and log(1 - sigma(theta + shift)), zero diagonal."""
    log_in = log_expit(theta + shift)
    log_out = log_expit(-(theta + shift))
    np.fill_diagonal(log_in, 0.0)
    np.fill_diagonal(log_out, 0.0)
    return _frozen(log_in), _frozen(log_out)


def _probability(theta, shift):
    probs = expit(theta + shift)
    np.fill_diagonal(probs, 1.0)
    return _frozen(probs)


def leader_log_transitions(u, alpha):
    """log Phi with Phi[i, j] = P(z_t = i | z_{t-1} = j)."""
    n = u.size
    scores = u[:, None] + alpha * np.eye(n)
    return scores - logsumexp(scores, axis=0, keepdims=True)


def link_probabilities(params):
    if not np.all(np.isfinite(params.u)):
        raise InvalidParameterError("u contains non-finite entries")

    theta = params.off_diagonal_theta()
    log_A, log_not_A = _log_pair(theta, 0.0)
    log_B, log_not_B = _log_pair(theta, params.beta)
    log_C, log_not_C = _log_pair(theta, params.gamma)
    log_Phi = leader_log_transitions(params.u, params.alpha)

    return LinkedProbs(
        rho=_frozen(softmax(params.u)),
        A=_probability(theta, 0.0),
        B=_probability(theta, params.beta),
        C=_probability(theta, params.gamma),
        Phi=_frozen(np.exp(log_Phi)),
        log_rho=_frozen(params.u - logsumexp(params.u)),
        log_Phi=_frozen(log_Phi),
        log_A=log_A,
        log_not_A=log_not_A,
        log_B=log_B,
        log_not_B=log_not_B,
        log_C=log_C,
        log_not_C=log_not_C,
    )


def emission_log_prob(g_t, g_prev, leader, probs):
    """log P(G^t | z^t = leader, G^{t-1}); pass ``g_prev=None`` at t = 0."""
    g_t = np.asarray(g_t)
    n = probs.n
    if g_t.shape != (n,) or (g_prev is not None and np.shape(g_prev) != (n,)):
        raise InvalidParameterError(f"group vectors must have length {n}")
    if not 0 <= leader < n:
        raise InvalidParameterError(f"leader {leader} out of range for n={n}")
    if g_t[leader] == 0:
        return -np.inf

    member = g_t == 1
    if g_prev is None or g_prev[leader] == 0:
        terms = np.where(member, probs.log_A[leader], probs.log_not_A[leader])
    else:
        stayed = np.asarray(g_prev) == 1
        terms = np.where(
            stayed,
            np.where(member, probs.log_B[leader], probs.log_not_B[leader]),
            np.where(member, probs.log_C[leader], probs.log_not_C[leader]),
        )
    # the leader's own term is log 1 on every diagonal
    return float(terms.sum())


def emission_log_matrix(G, probs):
    """
    T x n matrix of log P(G^t | z^t = i, G^{t-1}).

    Entries for nodes outside their group are -inf. The regime switch on
    whether i was in G^{t-1} is applied per (t, i).
    """
    groups = np.asarray(G, dtype=np.float64)
    absent = 1.0 - groups

    log_e = groups @ probs.log_A + absent @ probs.log_not_A
    if groups.shape[0] > 1:
        prev, cur = groups[:-1], groups[1:]
        prev_out, cur_out = absent[:-1], absent[1:]
        inside = (
            (prev * cur) @ probs.log_B
            + (prev * cur_out) @ probs.log_not_B
            + (prev_out * cur) @ probs.log_C
            + (prev_out * cur_out) @ probs.log_not_C
        )
        log_e[1:] = np.where(prev == 1.0, inside, log_e[1:])
    log_e[groups == 0.0] = -np.inf
    return log_e


def complete_log_likelihood(S, G, params):
    """
    log P(S, G) written term by term: the leader chain, the first group, the
    groups whose leader came from outside the previous group, and the
    stay/join terms of groups led from inside.
    """
    groups = G.G
    T, n = groups.shape
    if S.T != T:
        raise InvalidParameterError(f"{S.T} leaders for {T} groups")
    if S.z.min() < 0 or S.z.max() >= n:
        raise InvalidParameterError("leader index out of range")
    if not np.all(groups[np.arange(T), S.z] == 1):
        return -np.inf

    probs = link_probabilities(params)
    ind = S.indicator(n).astype(np.float64)
    g = groups.astype(np.float64)

    total = ind[0] @ probs.log_rho
    total += ind[0] @ (probs.log_A @ g[0] + probs.log_not_A @ (1 - g[0]))
    for t in range(1, T):
        total += ind[t] @ probs.log_Phi @ ind[t - 1]
        prev, cur = g[t - 1], g[t]
        outside = ind[t] * (1 - prev)
        inside = ind[t] * prev
        total += outside @ (probs.log_A @ cur + probs.log_not_A @ (1 - cur))
        total += inside @ (
            probs.log_B @ (prev * cur)
            + probs.log_not_B @ (prev * (1 - cur))
            + probs.log_C @ ((1 - prev) * cur)
            + probs.log_not_C @ ((1 - prev) * (1 - cur))
        )
    return float(total)


def leader_log_prob(S, params):
    """log P(S): rho for the first leader, Phi afterwards."""
    probs = link_probabilities(params)
    z = S.z
    return float(probs.log_rho[z[0]] + probs.log_Phi[z[1:], z[:-1]].sum())
