"""
Descriptive statistics, preprocessing of raw observations, evaluation
metrics and parametric bootstrap for fitted hub models.
"""

import logging
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from . import inference, simulate
from .core import GroupedData
from .exceptions import (
    BootstrapError,
    HubModelError,
    InvalidParameterError,
    UndefinedInputError,
)

logger = logging.getLogger(__name__)

ADJUSTMENTS = ("alpha", "beta", "gamma")


def _matrix(G):
    if isinstance(G, GroupedData):
        return G.G
    return np.asarray(G)


def co_occurrence(G):
    """Number of groups each pair shares; the diagonal counts appearances."""
    groups = _matrix(G).astype(np.int64)
    return groups.T @ groups


def half_weight_index(G):
    """
    2 * co-occurrences / (appearances of i + appearances of j).

    Pairs of nodes that never appear are 0.
    """
    counts = co_occurrence(G).astype(np.float64)
    appearances = np.diag(counts)
    denominator = appearances[:, None] + appearances[None, :]
    return np.divide(
        2.0 * counts,
        denominator,
        out=np.zeros_like(counts),
        where=denominator > 0,
    )


def jaccard(g1, g2):
    g1 = np.asarray(g1).astype(bool)
    g2 = np.asarray(g2).astype(bool)
    if g1.shape != g2.shape:
        raise InvalidParameterError(f"groups of length {g1.size} and {g2.size}")
    union = np.count_nonzero(g1 | g2)
    if union == 0:
        raise UndefinedInputError("Jaccard index of two empty groups is undefined")
    return np.count_nonzero(g1 & g2) / union


@dataclass(frozen=True)
class RawEvent:
    time_tag: str
    candidates: tuple

    def __post_init__(self):
        candidates = tuple(np.asarray(c, dtype=np.int8) for c in self.candidates)
        if not candidates:
            raise InvalidParameterError(f"event {self.time_tag!r} has no groups")
        for candidate in candidates:
            if not candidate.any():
                raise InvalidParameterError(
                    f"event {self.time_tag!r} has an empty candidate group"
                )
        object.__setattr__(self, "candidates", candidates)


@dataclass(frozen=True)
class RawRecords:
    events: tuple
    node_labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "node_labels", tuple(self.node_labels))
        n = len(self.node_labels)
        for event in self.events:
            for candidate in event.candidates:
                if candidate.size != n:
                    raise InvalidParameterError(
                        f"event {event.time_tag!r} has a group of length "
                        f"{candidate.size}, expected {n}"
                    )


@dataclass(frozen=True)
class PreprocessResult:
    groups: GroupedData
    removed_labels: tuple
    retained: tuple


def _pick(candidates, previous):
    def score(index):
        candidate = candidates[index]
        overlap = jaccard(candidate, previous) if previous is not None else 0.0
        # max() keeps the first candidate on a full tie
        return overlap, int(candidate.sum())

    return max(range(len(candidates)), key=score)


def preprocess(raw):
    """
    One group per event: the candidate overlapping most with the previously
    kept group (then the larger, then the first listed); the first event
    keeps its largest candidate. Nodes that never appear are dropped.
    """
    if not raw.events:
        raise InvalidParameterError("no events to preprocess")

    kept = []
    retained = []
    previous = None
    for event in raw.events:
        index = _pick(event.candidates, previous)
        previous = event.candidates[index]
        kept.append(previous)
        retained.append(index)

    matrix = np.vstack(kept)
    present = matrix.any(axis=0)
    removed = tuple(
        label for label, seen in zip(raw.node_labels, present) if not seen
    )
    if removed:
        logger.info("Removed %d nodes that never appear: %s", len(removed), removed)

    groups = GroupedData(
        matrix[:, present],
        node_labels=tuple(
            label for label, seen in zip(raw.node_labels, present) if seen
        ),
        timestamps=tuple(event.time_tag for event in raw.events),
    )
    return PreprocessResult(groups, removed, tuple(retained))


def _upper(matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InvalidParameterError(f"expected a square matrix, got {matrix.shape}")
    return matrix[np.triu_indices(matrix.shape[0], k=1)]


def rmse(A_hat, A_true):
    """Root mean squared error over the off-diagonal pairs i < j."""
    if np.shape(A_hat) != np.shape(A_true):
        raise InvalidParameterError(
            f"shape mismatch: {np.shape(A_hat)} vs {np.shape(A_true)}"
        )
    diff = _upper(A_hat) - _upper(A_true)
    return float(np.sqrt(np.mean(diff**2)))


def graph_density(A_hat):
    """Mean off-diagonal link probability."""
    return float(np.mean(_upper(A_hat)))


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    estimates: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    point: np.ndarray
    level: float
    failures: int = 0

    @property
    def replicates(self):
        return self.estimates.shape[0]

    def excludes_zero(self):
        return (self.lower > 0) | (self.upper < 0)

    def summary(self):
        return {
            name: {
                "estimate": float(self.point[k]),
                "lower": float(self.lower[k]),
                "upper": float(self.upper[k]),
                "significant": bool(self.excludes_zero()[k]),
            }
            for k, name in enumerate(ADJUSTMENTS)
        }


def _bootstrap_replicate(index, params, T, cfg, rng):
    _, groups = simulate.simulate_trajectory(params, T, rng)
    try:
        fit = inference.fit_em(groups, cfg)
    except HubModelError as exc:
        logger.warning("Bootstrap replicate %d failed: %s", index, exc)
        return None
    return (fit.params.alpha, fit.params.beta, fit.params.gamma)


def parametric_bootstrap(
    fit, G_shape, B, level, cfg, seed, jobs=1, max_failure_rate=0.10
):
    """
    Percentile intervals for alpha, beta and gamma by refitting B data sets
    simulated from the fitted model. ``fit`` is a FitResult or bare
    ModelParams. Replicate r always uses the r-th child of
    ``SeedSequence(seed)``, whatever ``jobs`` is.
    """
    params = getattr(fit, "params", fit)
    if B < 2:
        raise InvalidParameterError(f"B must be at least 2, got {B}")
    if not 0 < level < 1:
        raise InvalidParameterError(f"level must be in (0, 1), got {level}")
    T, n = G_shape
    if n != params.n:
        raise InvalidParameterError(f"fit has n={params.n}, shape has n={n}")

    rngs = simulate.replicate_rngs(seed, B)
    outcomes = Parallel(n_jobs=jobs)(
        delayed(_bootstrap_replicate)(r, params, T, cfg, rngs[r])
        for r in range(B)
    )
    estimates = np.array([o for o in outcomes if o is not None], dtype=np.float64)
    failures = B - estimates.shape[0]
    if failures > max_failure_rate * B:
        raise BootstrapError(f"{failures} of {B} bootstrap replicates failed")
    if estimates.shape[0] < 2:
        raise BootstrapError("fewer than two bootstrap replicates succeeded")

    tail = (1.0 - level) / 2.0
    # linear interpolation between order statistics, so bounds stay within min..max
    lower, upper = np.quantile(estimates, [tail, 1.0 - tail], axis=0)
    point = np.array([params.alpha, params.beta, params.gamma])
    logger.info(
        "Bootstrap finished: %d replicates, %d failures", estimates.shape[0], failures
    )
    return BootstrapResult(
        estimates=estimates,
        lower=lower,
        upper=upper,
        point=point,
        level=level,
        failures=failures,
    )
