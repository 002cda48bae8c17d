import itertools
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.special import logit, logsumexp

from hubmodel.core import (
    GroupedData,
    LeaderSequence,
    ModelParams,
    complete_log_likelihood,
)
from hubmodel.exceptions import ImpossibleDataError, InvalidParameterError
from hubmodel.inference import (
    FitConfig,
    SufficientStats,
    _leader_derivatives,
    decode_leaders,
    fit_em,
    forward_backward,
    initialize,
    m_step,
    q_derivatives,
    q_value,
    sufficient_stats,
)
from hubmodel.simulate import make_rng, simulate_trajectory

from .conftest import random_params, simulated


def enumerate_posteriors(G, params):
    """Brute force over every leader sequence."""
    T, n = G.shape
    data = GroupedData(G)
    log_joint = {}
    for z in itertools.product(range(n), repeat=T):
        log_joint[z] = complete_log_likelihood(LeaderSequence(z), data, params)
    values = np.array(list(log_joint.values()))
    log_marginal = logsumexp(values)
    R = np.zeros((T, n))
    Xi = np.zeros((T - 1, n, n))
    for z, value in log_joint.items():
        weight = np.exp(value - log_marginal)
        for t in range(T):
            R[t, z[t]] += weight
            if t > 0:
                Xi[t - 1, z[t], z[t - 1]] += weight
    return R, Xi, log_marginal


def oracle_cases(count, n=3, T=5):
    rng = np.random.default_rng(101)
    for _ in range(count):
        params = random_params(rng, n)
        _, groups = simulate_trajectory(params, T, rng)
        yield params, groups.G


class TestForwardBackward:
    def test_matches_enumeration(self):
        for params, G in oracle_cases(20):
            R, Xi, log_marginal = enumerate_posteriors(G, params)
            post = forward_backward(G, params, keep_pairwise=True)
            np.testing.assert_allclose(post.R, R, atol=1e-10)
            np.testing.assert_allclose(post.Xi, Xi, atol=1e-10)
            assert post.log_marginal == pytest.approx(log_marginal, abs=1e-10)

    def test_posteriors_are_normalised(self):
        _, _, groups = simulated(6, 80, seed=2, alpha=1.0, beta=2.0, gamma=-1.0)
        params = random_params(np.random.default_rng(0), 6)
        post = forward_backward(groups, params, keep_pairwise=True)
        np.testing.assert_allclose(post.R.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(post.Xi.sum(axis=(1, 2)), 1.0, atol=1e-12)
        assert np.all(post.R[groups.G == 0] == 0.0)

    def test_pairwise_marginals_are_consistent(self):
        _, _, groups = simulated(5, 60, seed=4, alpha=1.5, beta=1.0, gamma=0.5)
        params = random_params(np.random.default_rng(1), 5)
        post = forward_backward(groups, params, keep_pairwise=True)
        np.testing.assert_allclose(post.Xi.sum(axis=2), post.R[1:], atol=1e-10)
        np.testing.assert_allclose(post.Xi.sum(axis=1), post.R[:-1], atol=1e-10)
        np.testing.assert_allclose(post.Xi.sum(axis=0), post.V, atol=1e-10)

    def test_u_shift_changes_nothing(self, small_params, small_groups):
        shifted = small_params.replace(u=small_params.u + 7.5)
        first = forward_backward(small_groups, small_params)
        second = forward_backward(small_groups, shifted)
        np.testing.assert_allclose(first.R, second.R, atol=1e-12)
        np.testing.assert_allclose(first.V, second.V, atol=1e-12)
        assert first.log_marginal == pytest.approx(second.log_marginal, abs=1e-12)

    def test_renormalization_is_neutral(self):
        for params, G in oracle_cases(5, n=4, T=12):
            scaled = forward_backward(G, params)
            raw = forward_backward(G, params, renormalize=False)
            np.testing.assert_allclose(scaled.R, raw.R, atol=1e-12)
            np.testing.assert_allclose(scaled.V, raw.V, atol=1e-12)
            assert scaled.log_marginal == pytest.approx(raw.log_marginal, abs=1e-9)

    def test_single_group(self, small_params):
        post = forward_backward(np.array([[1, 0, 1]]), small_params)
        assert post.R[0, 1] == 0.0
        np.testing.assert_array_equal(post.V, 0.0)

    def test_impossible_data(self):
        theta = np.array([[0.0, -np.inf], [-np.inf, 0.0]])
        params = ModelParams([0.0, 0.0], theta, theta_max=np.inf)
        with pytest.raises(ImpossibleDataError):
            forward_backward(np.array([[1, 0], [1, 1]]), params)

    def test_shape_mismatch(self, small_params):
        with pytest.raises(InvalidParameterError):
            forward_backward(np.array([[1, 0]]), small_params)


class TestSufficientStats:
    def test_regimes_partition_each_leader(self):
        _, _, groups = simulated(6, 100, seed=7, alpha=1.0, beta=3.0, gamma=-1.0)
        params = random_params(np.random.default_rng(3), 6)
        post = forward_backward(groups, params)
        stats = sufficient_stats(post, groups)
        total = stats.D1 + stats.D2 + stats.D3 + stats.D4 + stats.D5 + stats.D6
        expected = np.repeat(post.R.sum(axis=0)[:, None], 6, axis=1)
        np.testing.assert_allclose(total, expected, atol=1e-9)

    def test_v_sums_to_transitions(self):
        _, _, groups = simulated(4, 30, seed=1)
        params = random_params(np.random.default_rng(4), 4)
        stats = sufficient_stats(forward_backward(groups, params), groups)
        assert stats.V.sum() == pytest.approx(29.0)
        assert stats.R1.sum() == pytest.approx(1.0)

    def test_single_group(self, small_params):
        G = np.array([[1, 0, 1]])
        post = forward_backward(G, small_params)
        stats = sufficient_stats(post, G)
        for D in (stats.D3, stats.D4, stats.D5, stats.D6, stats.V):
            np.testing.assert_array_equal(D, 0.0)
        np.testing.assert_allclose(stats.D1, np.outer(post.R[0], G[0]))

    def test_full_groups_only_stay(self, small_params):
        G = np.ones((6, 3), dtype=int)
        post = forward_backward(G, small_params)
        stats = sufficient_stats(post, G)
        for D in (stats.D4, stats.D5, stats.D6):
            np.testing.assert_array_equal(D, 0.0)
        expected = np.repeat(post.R[1:].sum(axis=0)[:, None], 3, axis=1)
        np.testing.assert_allclose(stats.D3, expected, atol=1e-12)


def random_stats(rng, n=4, T=25):
    params = random_params(rng, n)
    _, groups = simulate_trajectory(params, T, rng)
    guess = random_params(rng, n)
    return guess, sufficient_stats(forward_backward(groups, guess), groups)


def shifted(params, which, h):
    if which in ("alpha", "beta", "gamma"):
        return params.replace(**{which: getattr(params, which) + h})
    if which[0] == "u":
        u = params.u.copy()
        u[which[1]] += h
        return params.replace(u=u)
    _, i, j = which
    theta = params.off_diagonal_theta()
    theta[i, j] += h
    theta[j, i] += h
    return params.replace(theta=theta)


def selectors(n):
    yield "alpha"
    yield "beta"
    yield "gamma"
    for r in range(n):
        yield ("u", r)
    for i, j in zip(*np.triu_indices(n, k=1)):
        yield ("theta", int(i), int(j))


class TestQValue:
    def test_matches_enumeration(self):
        rng = np.random.default_rng(61)
        G = np.array([[1, 1], [1, 0], [0, 1]])
        data = GroupedData(G)
        for _ in range(5):
            old, new = random_params(rng, 2), random_params(rng, 2)
            stats = sufficient_stats(forward_backward(G, old), G)
            sequences = list(itertools.product(range(2), repeat=3))
            log_old = np.array(
                [
                    complete_log_likelihood(LeaderSequence(z), data, old)
                    for z in sequences
                ]
            )
            weights = np.exp(log_old - logsumexp(log_old))
            expected = sum(
                w * complete_log_likelihood(LeaderSequence(z), data, new)
                for w, z in zip(weights, sequences)
                if w > 0
            )
            assert q_value(new, stats) == pytest.approx(expected, abs=1e-10)


class TestQDerivatives:
    @pytest.mark.parametrize("seed", range(10))
    def test_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        params, stats = random_stats(rng)
        h = 1e-5
        for which in selectors(params.n):
            d1, d2 = q_derivatives(which, params, stats)
            up = q_value(shifted(params, which, h), stats)
            down = q_value(shifted(params, which, -h), stats)
            assert d1 == pytest.approx((up - down) / (2 * h), rel=1e-6, abs=1e-6)

            d1_up, _ = q_derivatives(which, shifted(params, which, h), stats)
            d1_down, _ = q_derivatives(which, shifted(params, which, -h), stats)
            assert d2 == pytest.approx((d1_up - d1_down) / (2 * h), rel=1e-4, abs=1e-6)
            assert d2 <= 0.0

    def test_unknown_selector(self, small_params):
        _, stats = random_stats(np.random.default_rng(0), n=3)
        with pytest.raises(InvalidParameterError):
            q_derivatives("delta", small_params, stats)
        with pytest.raises(InvalidParameterError):
            q_derivatives(("theta", 1, 1), small_params, stats)


class TestMStep:
    def test_does_not_decrease_q(self):
        rng = np.random.default_rng(12)
        for _ in range(5):
            params, stats = random_stats(rng)
            updated = m_step(stats, params, FitConfig())
            assert q_value(updated, stats) >= q_value(params, stats) - 1e-10

    @pytest.mark.parametrize("n,T", [(4, 25), (12, 200)])
    def test_stationary_after_convergence(self, n, T):
        params, stats = random_stats(np.random.default_rng(13), n=n, T=T)
        cfg = FitConfig()
        updated = m_step(stats, params, cfg)
        for which in selectors(params.n):
            d1, _ = q_derivatives(which, updated, stats)
            if which[0] == "theta" and abs(updated.theta[which[1], which[2]]) == 30:
                continue
            assert abs(d1) < 1e-5

    def test_constrained_keeps_adjustments_zero(self):
        params, stats = random_stats(np.random.default_rng(14))
        updated = m_step(stats, params, FitConfig(constrain_independent=True))
        assert (updated.alpha, updated.beta, updated.gamma) == (0.0, 0.0, 0.0)

    def test_constrained_theta_without_stay_or_join_counts(self):
        params, stats = random_stats(np.random.default_rng(15), n=5, T=40)
        zero = np.zeros_like(stats.D1)
        first_only = SufficientStats(
            R1=stats.R1,
            V=stats.V,
            D1=stats.D1,
            D2=stats.D2,
            D3=zero,
            D4=zero,
            D5=zero,
            D6=zero,
        )
        cfg = FitConfig(constrain_independent=True)
        updated = m_step(first_only, params, cfg)

        hits = stats.D1 + stats.D1.T
        misses = stats.D2 + stats.D2.T
        with np.errstate(divide="ignore", invalid="ignore"):
            expected = np.clip(logit(hits / (hits + misses)), -30.0, 30.0)
        upper = np.triu_indices(5, k=1)
        np.testing.assert_allclose(
            updated.theta[upper], expected[upper], rtol=1e-6, atol=1e-6
        )

    def test_leader_block_derivatives(self):
        params, stats = random_stats(np.random.default_rng(16), n=5, T=30)
        gradient, hessian = _leader_derivatives(params.u, params.alpha, stats)
        for r in range(5):
            d1, d2 = q_derivatives(("u", r), params, stats)
            assert gradient[r] == pytest.approx(d1, rel=1e-10, abs=1e-12)
            assert hessian[r, r] == pytest.approx(d2, rel=1e-10, abs=1e-12)
        d1, d2 = q_derivatives("alpha", params, stats)
        assert gradient[5] == pytest.approx(d1, rel=1e-10, abs=1e-12)
        assert hessian[5, 5] == pytest.approx(d2, rel=1e-10, abs=1e-12)

        h = 1e-6
        x = np.append(params.u, params.alpha)
        for k in range(6):
            step = np.zeros(6)
            step[k] = h
            up, _ = _leader_derivatives((x + step)[:5], (x + step)[5], stats)
            down, _ = _leader_derivatives((x - step)[:5], (x - step)[5], stats)
            np.testing.assert_allclose(
                hessian[:, k], (up - down) / (2 * h), rtol=1e-5, atol=1e-7
            )
        # a constant shift of u is a flat direction
        np.testing.assert_allclose(hessian[:5, :5].sum(axis=1), 0.0, atol=1e-10)
        np.testing.assert_allclose(hessian[5, :5].sum(), 0.0, atol=1e-10)


class TestInitialize:
    def test_half_weight_start(self, small_groups):
        start = initialize(small_groups, FitConfig())
        assert start.alpha == start.beta == start.gamma == 0.0
        assert start.u.mean() == pytest.approx(0.0, abs=1e-12)
        # nodes 0 and 1 share 2 of their 4 + 3 appearances
        assert start.theta[0, 1] == pytest.approx(np.log((4 / 7) / (3 / 7)))

    def test_birthday_table(self):
        # Allison, Drew, Eliot, Keith, Ross, Sarah
        G = np.array([[1, 0, 0, 0, 1, 1], [0, 1, 1, 0, 1, 1], [1, 0, 1, 1, 1, 0]])
        start = initialize(G, FitConfig())
        assert start.theta[0, 4] == pytest.approx(np.log(4.0))


class TestFitEM:
    def test_log_marginal_never_decreases(self):
        for seed in range(5):
            _, _, groups = simulated(5, 80, seed=seed, alpha=1.0, beta=2.0, gamma=-1.0)
            result = fit_em(groups, FitConfig(max_em_iters=60))
            assert np.all(np.diff(result.loglik_trace) >= -1e-9)

    def test_warm_start_is_a_fixed_point(self):
        _, _, groups = simulated(4, 120, seed=21, alpha=1.0, beta=2.0, gamma=-0.5)
        cfg = FitConfig(em_tol=1e-6, max_em_iters=2000)
        first = fit_em(groups, cfg)
        assert first.converged
        second = fit_em(groups, cfg, start=first.params)
        assert abs(second.log_marginal - first.log_marginal) < 10 * cfg.em_tol

    def test_constrained_fit(self):
        _, _, groups = simulated(4, 60, seed=22)
        result = fit_em(groups, FitConfig(constrain_independent=True))
        assert result.constrained
        assert (result.params.alpha, result.params.beta, result.params.gamma) == (
            0.0,
            0.0,
            0.0,
        )

    def test_restarts_keep_the_best(self):
        _, _, groups = simulated(4, 60, seed=23, alpha=1.0, beta=1.0)
        single = fit_em(groups, FitConfig())
        restarted = fit_em(groups, FitConfig(restart_seeds=(1, 2)))
        assert restarted.log_marginal >= single.log_marginal - 1e-9

    def test_trace_ends_at_log_marginal(self):
        _, _, groups = simulated(3, 40, seed=24)
        result = fit_em(groups)
        assert result.loglik_trace[-1] == result.log_marginal
        assert result.iterations == result.loglik_trace.size - 1

    def test_u_shift_gives_the_same_fit(self):
        params, _, groups = simulated(4, 80, seed=25, alpha=1.0, beta=1.0)
        cfg = FitConfig(max_em_iters=30, em_tol=0.0)
        first = fit_em(groups, cfg, start=params)
        shifted = fit_em(groups, cfg, start=params.replace(u=params.u + 3.0))
        assert shifted.log_marginal == pytest.approx(first.log_marginal, abs=1e-7)


class TestDecodeLeaders:
    def test_segments(self):
        G = np.array([[1, 1, 0], [1, 1, 0], [0, 0, 1], [0, 1, 1]])
        theta = np.full((3, 3), 2.0)
        params = ModelParams([5.0, -5.0, 0.0], theta, alpha=2.0, beta=1.0)
        result = fit_em(G, FitConfig(max_em_iters=1), start=params)
        leaders, segments = decode_leaders(result, G)
        assert all(G[t, leaders[t]] == 1 for t in range(4))
        assert segments[0][0] == 0
        assert segments[-1][1] == 3
        starts = [s for s, _ in segments]
        assert 2 in starts
        for (_, stop), (start, _) in zip(segments, segments[1:]):
            assert start == stop + 1

    def test_single_group(self, small_params):
        G = np.array([[1, 0, 1]])
        result = fit_em(G, FitConfig(max_em_iters=1), start=small_params)
        _, segments = decode_leaders(result, G)
        assert segments == [(0, 0)]

    def test_one_hot_posteriors(self):
        G = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1], [0, 1, 0]])
        R = np.eye(3)[[0, 1, 1, 1]]
        result = SimpleNamespace(posteriors=SimpleNamespace(R=R))
        leaders, segments = decode_leaders(result, G)
        assert leaders.tolist() == [0, 1, 1, 1]
        assert segments == [(0, 3)]


@pytest.mark.slow
class TestReduction:
    def test_independent_data(self):
        _, _, groups = simulated(20, 3000, seed=31)
        constrained = fit_em(groups, FitConfig(constrain_independent=True))
        free = fit_em(groups, FitConfig())
        assert free.log_marginal == pytest.approx(constrained.log_marginal, abs=1e-3)
        np.testing.assert_allclose(free.linked.A, constrained.linked.A, atol=0.05)
        for value in (free.params.alpha, free.params.beta, free.params.gamma):
            assert abs(value) < 0.3

    def test_monotone_on_many_instances(self):
        rng = np.random.default_rng(41)
        for k in range(50):
            n = int(rng.integers(2, 11))
            T = int(rng.integers(2, 201))
            params = random_params(rng, n)
            _, groups = simulate_trajectory(params, T, make_rng(k))
            result = fit_em(groups, FitConfig(max_em_iters=100))
            assert np.all(np.diff(result.loglik_trace) >= -1e-9)
