"""
EM fitting of the temporal-dependent hub model.

The E-step is an exact forward-backward pass with an extra backward
recursion (``c``) because each group depends on the previous one as well as
on its leader. The M-step maximises the expected complete log-likelihood Q
by coordinate ascent, one damped Newton solve per parameter. Fixing
alpha = beta = gamma = 0 gives the classical hub model.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, log_expit, logit, logsumexp, softmax

from . import analysis
from .core import (
    THETA_MAX,
    GroupedData,
    ModelParams,
    emission_log_matrix,
    leader_log_transitions,
    link_probabilities,
)
from .exceptions import (
    ImpossibleDataError,
    InvalidParameterError,
    NumericalFailureError,
)

logger = logging.getLogger(__name__)

# Newton steps shorter than this are treated as converged
_STEP_EPS = 1e-12


@dataclass(frozen=True)
class FitConfig:
    max_em_iters: int = 500
    em_tol: float = 1e-7
    mstep_tol: float = 1e-8
    mstep_grad_tol: float = 1e-6
    mstep_max_cycles: int = 100
    newton_max_steps: int = 25
    newton_damping: int = 20
    constrain_independent: bool = False
    theta_max: float = THETA_MAX
    restart_seeds: tuple = ()
    restart_scale: float = 0.5

    def __post_init__(self):
        for name in ("em_tol", "mstep_tol", "mstep_grad_tol", "theta_max"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive")
        for name in ("max_em_iters", "mstep_max_cycles", "newton_max_steps"):
            if getattr(self, name) < 1:
                raise InvalidParameterError(f"{name} must be at least 1")
        if self.newton_damping < 0:
            raise InvalidParameterError("newton_damping must be non-negative")
        object.__setattr__(self, "restart_seeds", tuple(self.restart_seeds))

    @classmethod
    def from_settings(cls, **overrides):
        """
        Build a config from ``settings.HUB_MODEL`` with keyword overrides.

        Keys in settings are the upper-cased field names; overrides that are
        ``None`` are ignored so command options can be passed straight in.
        """
        from django.conf import settings

        values = {}
        configured = getattr(settings, "HUB_MODEL", {}) if settings.configured else {}
        for name in cls.__dataclass_fields__:
            if name.upper() in configured:
                values[name] = configured[name.upper()]
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Posteriors:
    """
    ``R[t, i] = P(z_t = i | G)``; ``V`` sums the pairwise posteriors
    ``P(z_t = i, z_{t-1} = j | G)`` over t. ``Xi`` holds them per t only when
    requested.
    """

    R: np.ndarray
    V: np.ndarray
    log_marginal: float
    Xi: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True, eq=False)
class SufficientStats:
    R1: np.ndarray
    V: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    D3: np.ndarray
    D4: np.ndarray
    D5: np.ndarray
    D6: np.ndarray

    @property
    def n(self):
        return self.R1.size

    def pair_counts(self):
        """
        Symmetrised counts D + D^T for every pair i < j, in the order of
        ``numpy.triu_indices(n, 1)``.
        """
        upper = np.triu_indices(self.n, k=1)
        return tuple(
            (D + D.T)[upper]
            for D in (self.D1, self.D2, self.D3, self.D4, self.D5, self.D6)
        )


@dataclass(frozen=True, eq=False)
class FitResult:
    params: ModelParams
    linked: object
    posteriors: Posteriors
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    constrained: bool = False

    @property
    def log_marginal(self):
        return self.posteriors.log_marginal


def _as_matrix(G):
    if isinstance(G, GroupedData):
        return G.G
    return GroupedData(G).G


def forward_backward(G, params, keep_pairwise=False, renormalize=True):
    """
    Exact leader posteriors in O(T n^2).

    ``a`` runs forward, ``b`` backward from b_T = 1, and ``c`` backward from
    the last emission; every row is renormalised to sum to one unless
    ``renormalize`` is False. The log-marginal is the sum of the log forward
    normalisers (plus the per-row emission shifts).
    """
    groups = _as_matrix(G)
    T, n = groups.shape
    if params.n != n:
        raise InvalidParameterError(f"parameters for n={params.n}, data has n={n}")
    probs = link_probabilities(params)
    Phi = probs.Phi

    log_e = emission_log_matrix(groups, probs)
    if renormalize:
        shift = log_e.max(axis=1)
    else:
        shift = np.zeros(T)
    E = np.exp(log_e - shift[:, None])

    a = np.empty((T, n))
    b = np.empty((T, n))
    c = np.empty((T, n))

    a[0] = probs.rho * E[0]
    log_marginal = 0.0
    for t in range(T):
        if t > 0:
            a[t] = (Phi @ a[t - 1]) * E[t]
        norm = a[t].sum()
        if not norm > 0:
            raise ImpossibleDataError(t)
        if renormalize:
            a[t] /= norm
            log_marginal += np.log(norm) + shift[t]
    if not renormalize:
        log_marginal = float(np.log(a[T - 1].sum()))

    b[T - 1] = 1.0 / n if renormalize else 1.0
    c[T - 1] = E[T - 1]
    if renormalize:
        c[T - 1] /= c[T - 1].sum()
    for t in range(T - 2, -1, -1):
        b[t] = Phi.T @ (b[t + 1] * E[t + 1])
        if t > 0:
            c[t] = (Phi.T @ c[t + 1]) * E[t]
        if renormalize:
            b[t] /= b[t].sum()
            if t > 0:
                c[t] /= c[t].sum()
    # c[0] is never used

    R = a * b
    R /= R.sum(axis=1, keepdims=True)

    V = np.zeros((n, n))
    Xi = np.empty((T - 1, n, n)) if keep_pairwise else None
    for t in range(1, T):
        pair = c[t][:, None] * Phi * a[t - 1][None, :]
        pair /= pair.sum()
        V += pair
        if keep_pairwise:
            Xi[t - 1] = pair

    return Posteriors(R=R, V=V, log_marginal=float(log_marginal), Xi=Xi)


def sufficient_stats(post, G):
    groups = _as_matrix(G).astype(np.float64)
    R = post.R
    if R.shape != groups.shape:
        raise InvalidParameterError(
            f"posteriors have shape {R.shape}, groups have shape {groups.shape}"
        )
    absent = 1.0 - groups

    D1 = np.outer(R[0], groups[0])
    D2 = np.outer(R[0], absent[0])
    if groups.shape[0] > 1:
        prev, cur = groups[:-1], groups[1:]
        prev_out, cur_out = absent[:-1], absent[1:]
        led_outside = R[1:] * prev_out
        led_inside = R[1:] * prev
        D1 = D1 + led_outside.T @ cur
        D2 = D2 + led_outside.T @ cur_out
        D3 = led_inside.T @ (prev * cur)
        D4 = led_inside.T @ (prev * cur_out)
        D5 = led_inside.T @ (prev_out * cur)
        D6 = led_inside.T @ (prev_out * cur_out)
    else:
        D3 = D4 = D5 = D6 = np.zeros_like(D1)

    return SufficientStats(
        R1=R[0].copy(), V=post.V.copy(), D1=D1, D2=D2, D3=D3, D4=D4, D5=D5, D6=D6
    )


# Q is separable into a leader block in (alpha, u) and a membership block
# in (beta, gamma, theta); the helpers below work on one block at a time.


def _leader_q(u, alpha, stats):
    log_rho = u - logsumexp(u)
    log_Phi = leader_log_transitions(u, alpha)
    return float(stats.R1 @ log_rho + np.sum(stats.V * log_Phi))


def _pair_q(theta, beta, gamma, counts):
    N1, N2, N3, N4, N5, N6 = counts
    return (
        N1 * log_expit(theta)
        + N2 * log_expit(-theta)
        + N3 * log_expit(theta + beta)
        + N4 * log_expit(-theta - beta)
        + N5 * log_expit(theta + gamma)
        + N6 * log_expit(-theta - gamma)
    )


def _pair_derivatives(theta, beta, gamma, counts):
    N1, N2, N3, N4, N5, N6 = counts
    d1 = np.zeros_like(theta)
    d2 = np.zeros_like(theta)
    for hits, misses, shift in ((N1, N2, 0.0), (N3, N4, beta), (N5, N6, gamma)):
        p = expit(theta + shift)
        d1 += hits - (hits + misses) * p
        d2 -= (hits + misses) * p * (1.0 - p)
    return d1, d2


def _adjustment_q(theta, shift, hits, misses):
    return float(
        np.sum(hits * log_expit(theta + shift) + misses * log_expit(-theta - shift))
    )


def _adjustment_derivatives(theta, shift, hits, misses):
    p = expit(theta + shift)
    d1 = np.sum(hits - (hits + misses) * p)
    d2 = -np.sum((hits + misses) * p * (1.0 - p))
    return float(d1), float(d2)


def _alpha_derivatives(u, alpha, stats):
    stay = np.diag(np.exp(leader_log_transitions(u, alpha)))
    from_j = stats.V.sum(axis=0)
    d1 = np.trace(stats.V) - np.sum(from_j * stay)
    d2 = -np.sum(from_j * stay * (1.0 - stay))
    return float(d1), float(d2)


def _u_derivatives(r, u, alpha, stats):
    rho = softmax(u)
    Phi = np.exp(leader_log_transitions(u, alpha))
    first = stats.R1.sum()
    from_j = stats.V.sum(axis=0)
    d1 = (
        stats.R1[r]
        - first * rho[r]
        + stats.V[r].sum()
        - np.sum(from_j * Phi[r])
    )
    d2 = -first * rho[r] * (1.0 - rho[r]) - np.sum(from_j * Phi[r] * (1.0 - Phi[r]))
    return float(d1), float(d2)


def q_value(params, stats):
    """Expected complete log-likelihood for the given sufficient statistics."""
    if params.n != stats.n:
        raise InvalidParameterError("parameters and statistics disagree on n")
    upper = np.triu_indices(params.n, k=1)
    theta = params.theta[upper]
    membership = _pair_q(theta, params.beta, params.gamma, stats.pair_counts())
    return _leader_q(params.u, params.alpha, stats) + float(membership.sum())


def q_derivatives(which, params, stats):
    """
    First and second partial derivative of Q in one coordinate.

    ``which`` is ``"alpha"``, ``"beta"``, ``"gamma"``, ``("u", r)`` or
    ``("theta", i, j)`` with i < j.
    """
    n = params.n
    if which == "alpha":
        return _alpha_derivatives(params.u, params.alpha, stats)
    if which in ("beta", "gamma"):
        upper = np.triu_indices(n, k=1)
        _, _, N3, N4, N5, N6 = stats.pair_counts()
        theta = params.theta[upper]
        if which == "beta":
            return _adjustment_derivatives(theta, params.beta, N3, N4)
        return _adjustment_derivatives(theta, params.gamma, N5, N6)
    if isinstance(which, tuple) and which and which[0] == "u" and len(which) == 2:
        r = which[1]
        if not 0 <= r < n:
            raise InvalidParameterError(f"u index {r} out of range for n={n}")
        return _u_derivatives(r, params.u, params.alpha, stats)
    if isinstance(which, tuple) and which and which[0] == "theta" and len(which) == 3:
        i, j = which[1], which[2]
        if not 0 <= i < j < n:
            raise InvalidParameterError(f"theta index ({i}, {j}) needs 0 <= i < j < n")
        counts = tuple(
            np.array([D[i, j] + D[j, i]])
            for D in (stats.D1, stats.D2, stats.D3, stats.D4, stats.D5, stats.D6)
        )
        d1, d2 = _pair_derivatives(
            np.array([params.theta[i, j]]), params.beta, params.gamma, counts
        )
        return float(d1[0]), float(d2[0])
    raise InvalidParameterError(f"unknown parameter selector {which!r}")


def _newton(value, derivatives, x, cfg, name, bounds=None):
    """
    Damped Newton ascent on a concave 1-D function.

    Steps are halved until the function does not decrease. Coordinates with
    zero curvature are left alone.
    """
    q = value(x)
    for _ in range(cfg.newton_max_steps):
        d1, d2 = derivatives(x)
        if not np.isfinite(d1) or not np.isfinite(d2):
            raise NumericalFailureError(name)
        if d2 >= 0:
            break
        step = -d1 / d2
        if abs(step) < _STEP_EPS * (1.0 + abs(x)):
            break
        accepted = False
        for _ in range(cfg.newton_damping + 1):
            candidate = x + step
            if bounds is not None:
                candidate = min(max(candidate, bounds[0]), bounds[1])
            if candidate == x:
                break
            q_candidate = value(candidate)
            if np.isnan(q_candidate) or q_candidate == np.inf:
                raise NumericalFailureError(name)
            if q_candidate >= q:
                x, q = candidate, q_candidate
                accepted = True
                break
            step /= 2.0
        if not accepted:
            break
    return x, q


def _newton_pairs(theta, beta, gamma, counts, cfg):
    """The theta block: every pair is its own 1-D problem, solved in lockstep."""
    bound = cfg.theta_max
    x = theta.copy()
    q = _pair_q(x, beta, gamma, counts)
    for _ in range(cfg.newton_max_steps):
        d1, d2 = _pair_derivatives(x, beta, gamma, counts)
        active = d2 < 0
        step = np.where(active, -d1 / np.where(active, d2, -1.0), 0.0)
        active &= np.abs(step) >= _STEP_EPS * (1.0 + np.abs(x))
        if not active.any():
            break
        moved = np.zeros_like(active)
        pending = active.copy()
        for _ in range(cfg.newton_damping + 1):
            candidate = np.clip(x + step, -bound, bound)
            pending &= candidate != x
            if not pending.any():
                break
            q_candidate = _pair_q(candidate, beta, gamma, counts)
            if np.isnan(q_candidate[pending]).any():
                raise NumericalFailureError("theta")
            better = pending & (q_candidate >= q)
            x[better] = candidate[better]
            q[better] = q_candidate[better]
            moved |= better
            pending &= ~better
            step = step / 2.0
        if not moved.any():
            break
    return x


def _leader_derivatives(u, alpha, stats):
    """
    Gradient and Hessian of the leader block in ``(u_1..u_n, alpha)``.

    Q is concave here: each column of log Phi is a log-softmax of scores that
    are linear in u and alpha.
    """
    n = u.size
    rho = softmax(u)
    Phi = np.exp(leader_log_transitions(u, alpha))
    first = stats.R1.sum()
    from_j = stats.V.sum(axis=0)
    stay = np.diag(Phi)

    gradient = np.empty(n + 1)
    gradient[:n] = stats.R1 - first * rho + stats.V.sum(axis=1) - Phi @ from_j
    gradient[n] = np.trace(stats.V) - from_j @ stay

    hessian = np.empty((n + 1, n + 1))
    hessian[:n, :n] = (
        -first * (np.diag(rho) - np.outer(rho, rho))
        - np.diag(Phi @ from_j)
        + (Phi * from_j) @ Phi.T
    )
    cross = -from_j * stay + Phi @ (from_j * stay)
    hessian[:n, n] = cross
    hessian[n, :n] = cross
    hessian[n, n] = -np.sum(from_j * stay * (1.0 - stay))
    return gradient, hessian


def _leader_newton(u, alpha, stats, cfg):
    """
    Damped Newton ascent on u and alpha together (u alone when constrained).

    The Hessian is singular along a constant shift of u, so the step is the
    least-squares solution. Returns ``(u, alpha, ok)``; ``ok`` is False when a
    step found no non-decreasing point.
    """
    n = u.size
    size = n if cfg.constrain_independent else n + 1
    q = _leader_q(u, alpha, stats)
    for _ in range(cfg.newton_max_steps):
        gradient, hessian = _leader_derivatives(u, alpha, stats)
        gradient, hessian = gradient[:size], hessian[:size, :size]
        if not (np.all(np.isfinite(gradient)) and np.all(np.isfinite(hessian))):
            raise NumericalFailureError("u")
        if np.abs(gradient).max() < 1e-2 * cfg.mstep_grad_tol:
            return u, alpha, True
        step = np.linalg.lstsq(hessian, -gradient, rcond=None)[0]
        if not gradient @ step > 0:
            return u, alpha, False
        scale = 1.0 + max(np.abs(u).max(), abs(alpha))
        if np.abs(step).max() < _STEP_EPS * scale:
            return u, alpha, True

        accepted = False
        for _ in range(cfg.newton_damping + 1):
            candidate_u = u + step[:n]
            candidate_alpha = alpha + step[n] if size > n else alpha
            q_candidate = _leader_q(candidate_u, candidate_alpha, stats)
            if np.isnan(q_candidate) or q_candidate == np.inf:
                raise NumericalFailureError("u")
            if q_candidate >= q:
                u, alpha, q = candidate_u, candidate_alpha, q_candidate
                accepted = True
                break
            step = step / 2.0
        if not accepted:
            return u, alpha, False
    return u, alpha, True


def _membership_newton(theta, beta, gamma, counts, cfg):
    """
    Damped Newton ascent on beta, gamma and every theta_ij together.

    The Hessian is an arrow: diagonal in theta plus one row each for beta and
    gamma, so the step comes from a 2x2 Schur complement. Pairs clamped at
    ``theta_max`` with the gradient pointing outward are held fixed. Returns
    ``(theta, beta, gamma, ok)`` like ``_leader_newton``.
    """
    N1, N2, N3, N4, N5, N6 = counts
    bound = cfg.theta_max
    q = float(_pair_q(theta, beta, gamma, counts).sum())
    for _ in range(cfg.newton_max_steps):
        s0, s1, s2 = expit(theta), expit(theta + beta), expit(theta + gamma)
        g_beta_pairs = N3 - (N3 + N4) * s1
        g_gamma_pairs = N5 - (N5 + N6) * s2
        g_theta = N1 - (N1 + N2) * s0 + g_beta_pairs + g_gamma_pairs
        g_beta, g_gamma = g_beta_pairs.sum(), g_gamma_pairs.sum()
        b = -(N3 + N4) * s1 * (1.0 - s1)
        c = -(N5 + N6) * s2 * (1.0 - s2)
        h = -(N1 + N2) * s0 * (1.0 - s0) + b + c

        pinned = ((theta >= bound) & (g_theta > 0)) | (
            (theta <= -bound) & (g_theta < 0)
        )
        free = (h < -1e-12) & ~pinned
        worst = max(
            abs(g_beta) if b.sum() < 0 else 0.0,
            abs(g_gamma) if c.sum() < 0 else 0.0,
            float(np.abs(g_theta[free]).max(initial=0.0)),
        )
        if worst < 1e-2 * cfg.mstep_grad_tol:
            return theta, beta, gamma, True

        h_free = np.where(free, h, -1.0)
        b_ratio = np.where(free, b / h_free, 0.0)
        c_ratio = np.where(free, c / h_free, 0.0)
        g_ratio = np.where(free, g_theta / h_free, 0.0)
        schur = np.array(
            [
                [b.sum() - b @ b_ratio, -(b @ c_ratio)],
                [-(c @ b_ratio), c.sum() - c @ c_ratio],
            ]
        )
        rhs = np.array([-g_beta + b @ g_ratio, -g_gamma + c @ g_ratio])
        if not (np.all(np.isfinite(schur)) and np.all(np.isfinite(rhs))):
            raise NumericalFailureError("theta")
        d_beta, d_gamma = np.linalg.lstsq(schur, rhs, rcond=None)[0]
        d_theta = np.where(free, -(g_theta + b * d_beta + c * d_gamma) / h_free, 0.0)
        scale = 1.0 + max(np.abs(theta).max(initial=0.0), abs(beta), abs(gamma))
        largest = max(np.abs(d_theta).max(initial=0.0), abs(d_beta), abs(d_gamma))
        if largest < _STEP_EPS * scale:
            return theta, beta, gamma, True

        accepted = False
        for _ in range(cfg.newton_damping + 1):
            candidate = np.clip(theta + d_theta, -bound, bound)
            q_candidate = float(
                _pair_q(candidate, beta + d_beta, gamma + d_gamma, counts).sum()
            )
            if np.isnan(q_candidate):
                raise NumericalFailureError("theta")
            if q_candidate >= q:
                theta, beta, gamma = candidate, beta + d_beta, gamma + d_gamma
                q = q_candidate
                accepted = True
                break
            d_theta, d_beta, d_gamma = d_theta / 2.0, d_beta / 2.0, d_gamma / 2.0
        if not accepted:
            return theta, beta, gamma, False
    return theta, beta, gamma, True


def _max_gradient(u, alpha, beta, gamma, theta, stats, counts, cfg):
    """Largest |dQ| over the coordinates the M-step is allowed to move."""
    gradient, hessian = _leader_derivatives(u, alpha, stats)
    movable = np.diag(hessian) < 0
    if cfg.constrain_independent:
        movable[-1] = False
    worst = float(np.abs(gradient[movable]).max(initial=0.0))
    if not cfg.constrain_independent:
        _, _, N3, N4, N5, N6 = counts
        for d1, d2 in (
            _adjustment_derivatives(theta, beta, N3, N4),
            _adjustment_derivatives(theta, gamma, N5, N6),
        ):
            if d2 < 0:
                worst = max(worst, abs(d1))

    d1, d2 = _pair_derivatives(theta, beta, gamma, counts)
    # clamped coordinates whose optimum lies beyond the bound are stationary
    pinned = ((theta >= cfg.theta_max) & (d1 > 0)) | (
        (theta <= -cfg.theta_max) & (d1 < 0)
    )
    free = (d2 < 0) & ~pinned
    if free.any():
        worst = max(worst, float(np.abs(d1[free]).max()))
    return worst


def _leader_sweep(u, alpha, stats, cfg):
    """One coordinate pass: alpha, then u_1..u_n."""
    u = u.copy()
    if not cfg.constrain_independent:
        alpha, _ = _newton(
            lambda a: _leader_q(u, a, stats),
            lambda a: _alpha_derivatives(u, a, stats),
            alpha,
            cfg,
            "alpha",
        )

    for r in range(u.size):

        def with_r(value, r=r):
            trial = u.copy()
            trial[r] = value
            return trial

        u[r], _ = _newton(
            lambda x: _leader_q(with_r(x), alpha, stats),
            lambda x: _u_derivatives(r, with_r(x), alpha, stats),
            u[r],
            cfg,
            f"u[{r}]",
        )
    return u, alpha


def _adjustment_sweep(theta, beta, gamma, counts, cfg):
    """One coordinate pass over beta, then gamma."""
    _, _, N3, N4, N5, N6 = counts
    beta, _ = _newton(
        lambda x: _adjustment_q(theta, x, N3, N4),
        lambda x: _adjustment_derivatives(theta, x, N3, N4),
        beta,
        cfg,
        "beta",
    )
    gamma, _ = _newton(
        lambda x: _adjustment_q(theta, x, N5, N6),
        lambda x: _adjustment_derivatives(theta, x, N5, N6),
        gamma,
        cfg,
        "gamma",
    )
    return beta, gamma


def m_step(stats, start, cfg):
    """
    Maximise Q from ``start``, cycling alpha and u, then beta, gamma and theta.

    Q splits into a leader block (alpha, u) and a membership block (beta,
    gamma, theta), each concave. A cycle takes damped Newton steps on each
    block as a whole; if a block step cannot make progress the cycle falls
    back to one coordinate at a time in the same order. Every theta_ij then
    gets its own Newton pass, which also covers pairs left out of the block
    step. Cycles stop when Q improves by less than ``mstep_tol`` and no free
    coordinate has a gradient above ``mstep_grad_tol``.
    """
    n = start.n
    if stats.n != n:
        raise InvalidParameterError("parameters and statistics disagree on n")
    upper = np.triu_indices(n, k=1)
    counts = stats.pair_counts()

    u = start.u.copy()
    theta = np.clip(start.theta[upper], -cfg.theta_max, cfg.theta_max)
    if cfg.constrain_independent:
        alpha = beta = gamma = 0.0
    else:
        alpha, beta, gamma = start.alpha, start.beta, start.gamma

    def total_q():
        value = _leader_q(u, alpha, stats) + float(
            _pair_q(theta, beta, gamma, counts).sum()
        )
        if not np.isfinite(value):
            raise NumericalFailureError("Q")
        return value

    q_old = total_q()
    for cycle in range(cfg.mstep_max_cycles):
        u, alpha, ok = _leader_newton(u, alpha, stats, cfg)
        if not ok:
            logger.debug("leader block step stalled; updating coordinates")
            u, alpha = _leader_sweep(u, alpha, stats, cfg)

        if not cfg.constrain_independent:
            theta, beta, gamma, ok = _membership_newton(
                theta, beta, gamma, counts, cfg
            )
            if not ok:
                logger.debug("membership block step stalled; updating coordinates")
                beta, gamma = _adjustment_sweep(theta, beta, gamma, counts, cfg)
        theta = _newton_pairs(theta, beta, gamma, counts, cfg)

        q_new = total_q()
        gradient = _max_gradient(u, alpha, beta, gamma, theta, stats, counts, cfg)
        if q_new - q_old < cfg.mstep_tol and gradient < cfg.mstep_grad_tol:
            logger.debug("M-step converged after %d cycles", cycle + 1)
            break
        q_old = q_new
    else:
        logger.debug(
            "M-step stopped after %d cycles, max gradient %.3g",
            cfg.mstep_max_cycles,
            gradient,
        )

    full = np.zeros((n, n))
    full[upper] = theta
    full[upper[1], upper[0]] = theta
    return ModelParams(u, full, alpha, beta, gamma, theta_max=cfg.theta_max)


def initialize(G, cfg):
    """
    Starting values: theta from the half weight index, u from appearance
    frequencies (floored at 1/(2T) and mean-centred), no adjustments.
    """
    groups = _as_matrix(G)
    T = groups.shape[0]
    H = analysis.half_weight_index(groups)
    with np.errstate(divide="ignore"):
        theta = np.clip(logit(H), -cfg.theta_max, cfg.theta_max)
    frequency = groups.mean(axis=0)
    u = np.log(np.maximum(frequency, 1.0 / (2 * T)))
    u -= u.mean()
    return ModelParams(u, theta, 0.0, 0.0, 0.0, theta_max=cfg.theta_max)


def _perturbed(params, seed, cfg):
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = params.n
    upper = np.triu_indices(n, k=1)
    noise = rng.normal(0.0, cfg.restart_scale, size=upper[0].size)
    theta = params.off_diagonal_theta()
    theta[upper] += noise
    theta[upper[1], upper[0]] += noise
    u = params.u + rng.normal(0.0, cfg.restart_scale, size=n)
    return params.replace(u=u, theta=theta)


def _run_em(groups, cfg, start):
    params = start
    post = forward_backward(groups, params)
    trace = [post.log_marginal]
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_em_iters + 1):
        stats = sufficient_stats(post, groups)
        params = m_step(stats, params, cfg)
        post = forward_backward(groups, params)
        trace.append(post.log_marginal)
        improvement = trace[-1] - trace[-2]
        logger.debug(
            "EM iteration %d: log P(G) = %.10f (+%.3g)",
            iterations,
            trace[-1],
            improvement,
        )
        if improvement < cfg.em_tol:
            converged = True
            break

    if converged:
        logger.info(
            "EM converged in %d iterations, log P(G) = %.6f", iterations, trace[-1]
        )
    else:
        logger.warning(
            "EM stopped after %d iterations without converging, log P(G) = %.6f",
            iterations,
            trace[-1],
        )
    return FitResult(
        params=params,
        linked=link_probabilities(params),
        posteriors=post,
        loglik_trace=np.array(trace),
        iterations=iterations,
        converged=converged,
        constrained=cfg.constrain_independent,
    )


def fit_em(G, cfg=None, start=None):
    """
    Maximum likelihood fit by EM.

    ``start`` overrides the default initializer (warm starts). When
    ``cfg.restart_seeds`` is set and no start is given, one extra run per
    seed begins from a perturbed initializer and the fit with the highest
    log P(G) is returned.
    """
    cfg = cfg or FitConfig()
    groups = _as_matrix(G)
    if start is None:
        base = initialize(groups, cfg)
        starts = [base] + [_perturbed(base, seed, cfg) for seed in cfg.restart_seeds]
    else:
        starts = [start]

    if cfg.constrain_independent:
        starts = [s.replace(alpha=0.0, beta=0.0, gamma=0.0) for s in starts]

    best = None
    for index, params in enumerate(starts):
        result = _run_em(groups, cfg, params)
        if len(starts) > 1:
            logger.info(
                "Start %d of %d: log P(G) = %.6f",
                index + 1,
                len(starts),
                result.log_marginal,
            )
        if best is None or result.log_marginal > best.log_marginal:
            best = result
    return best


def decode_leaders(result, G):
    """
    Most probable leader per group (lowest index on ties) and the segments
    they imply: a segment starts at t = 0 and wherever the decoded leader
    was not in the previous group. Segments are inclusive (start, stop).
    """
    groups = _as_matrix(G)
    R = result.posteriors.R
    if R.shape != groups.shape:
        raise InvalidParameterError("fit does not match these groups")
    leaders = np.argmax(R, axis=1)
    T = leaders.size
    starts = [0] + [t for t in range(1, T) if groups[t - 1, leaders[t]] == 0]
    stops = [s - 1 for s in starts[1:]] + [T - 1]
    return leaders, list(zip(starts, stops))
