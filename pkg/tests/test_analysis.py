import math

import numpy as np
import pytest

from truncated_etd.analysis import (
    Chain,
    EmphasisReport,
    SingularUpdateError,
    bellman_operator,
    build_chain,
    contraction_modulus,
    emphasis_bounds,
    emphasis_limit,
    emphasis_limit_of,
    emphasis_report,
    emphasis_sequence,
    empirical_contraction,
    expected_update,
    expected_update_of,
    fixed_point,
    is_negative_definite,
    min_n_contraction_of,
    min_n_negative_definite,
    min_n_negative_definite_of,
    nd_ratio,
    performance_bound,
    projection_matrix,
    sampled_sup_n1_n2,
    selection_helpers,
    selection_helpers_n1_n2,
    smallest_n,
    truncated_emphasis,
    truncated_emphasis_of,
)
from truncated_etd.envs import baird
from truncated_etd.mdp import (
    TabularPolicy,
    random_mdp,
    random_policy,
    state_transition_matrix,
    stationary_distribution,
    value_function,
)

from oracles import mc_emphasis, mc_emphasis_mixture


def random_chain(rng, S=None, gamma=None):
    S = S or int(rng.integers(3, 9))
    gamma = gamma if gamma is not None else float(rng.choice([0.5, 0.9, 0.99]))
    mdp = random_mdp(S, 2, rng, discount=gamma)
    mu = random_policy(S, 2, rng, floor=0.2)
    pi = random_policy(S, 2, rng, floor=0.0)
    return mdp, mu, pi


def full_rank_features(rng, S, K):
    while True:
        X = rng.normal(size=(S, K))
        if np.linalg.matrix_rank(X) == K:
            return X


class TestEmphasis:
    def test_n0_is_interest(self, small_instance):
        mdp, mu, pi = small_instance
        i = np.array([1.0, 2.0, 0.5, 3.0])
        np.testing.assert_allclose(truncated_emphasis(mdp, mu, pi, i, 0), i, rtol=1e-14)

    def test_gamma_zero(self, rng):
        mdp = random_mdp(4, 2, rng, discount=0.0)
        mu, pi = random_policy(4, 2, rng), random_policy(4, 2, rng)
        np.testing.assert_allclose(truncated_emphasis(mdp, mu, pi, None, 7), 1.0)
        np.testing.assert_allclose(emphasis_limit(mdp, mu, pi), 1.0)

    def test_limit_matches_long_truncation(self, rng):
        mdp = random_mdp(5, 2, rng, discount=0.9)
        pi = random_policy(5, 2, rng)
        np.testing.assert_allclose(truncated_emphasis(mdp, pi, pi, None, 500),
                                   emphasis_limit(mdp, pi, pi), atol=1e-8)

    def test_on_policy_constant(self, rng):
        # with mu = pi, d^T P = d^T, so m = i / (1 - gamma) for constant i
        mdp = random_mdp(5, 2, rng, discount=0.9)
        pi = random_policy(5, 2, rng)
        np.testing.assert_allclose(emphasis_limit(mdp, pi, pi), 10.0, rtol=1e-10)

    def test_sequence_matches_single(self, small_instance):
        mdp, mu, pi = small_instance
        chain = build_chain(mdp, mu, pi)
        seq = emphasis_sequence(chain, 10)
        for n in (0, 3, 10):
            np.testing.assert_allclose(seq[n], truncated_emphasis_of(chain, n), rtol=1e-13)

    def test_matches_matrix_power_sum(self, small_instance):
        mdp, mu, pi = small_instance
        chain = build_chain(mdp, mu, pi)
        D = np.diag(chain.d)
        ref = sum(chain.gamma**j * np.linalg.inv(D) @ np.linalg.matrix_power(chain.P.T, j) @ D @ chain.i
                  for j in range(6))
        np.testing.assert_allclose(truncated_emphasis_of(chain, 5), ref, rtol=1e-12)

    def test_monotone_in_n(self, rng):
        for _ in range(20):
            chain = build_chain(*random_chain(rng))
            m = emphasis_limit_of(chain)
            f = chain.d * m
            seq = emphasis_sequence(chain, 20)
            assert np.all(np.diff(seq, axis=0) > 0)
            assert np.all(seq <= m + 1e-12)
            f_n = chain.d * seq
            assert np.all(f_n[1:] > chain.d * chain.i)
            assert np.all(f > f_n[-1])

    def test_converges(self, rng):
        for _ in range(20):
            chain = build_chain(*random_chain(rng))
            n = math.ceil(math.log(1e-9) / math.log(chain.gamma))
            assert np.max(np.abs(truncated_emphasis_of(chain, n) - emphasis_limit_of(chain))) < 1e-8 * max(
                1.0, np.abs(emphasis_limit_of(chain)).max())

    def test_emphasis_bounds(self, rng):
        for _ in range(20):
            chain = build_chain(*random_chain(rng))
            m = emphasis_limit_of(chain)
            eps = 1e-13 * np.abs(m).sum()  # round-off once gamma^{n+1} is below machine precision
            for n in range(0, 65, 8):
                l1, linf = emphasis_bounds(chain, n, m)
                m_n = truncated_emphasis_of(chain, n)
                assert np.abs(m_n - m).sum() <= l1 + eps
                assert np.abs(chain.d * (m_n - m)).max() <= linf + eps

    @pytest.mark.parametrize("control", [False, True])
    @pytest.mark.parametrize("n", [0, 2, 4])
    def test_monte_carlo(self, rng, control, n):
        mdp, mu, pi = random_chain(rng, S=3, gamma=0.9)
        mean, se = mc_emphasis(mdp, mu, pi, n, 200_000, rng, control=control)
        m_n = truncated_emphasis(mdp, mu, pi, None, n, control=control)
        # 36 comparisons across the parametrisation; 4 SE keeps the familywise
        # false-alarm rate near 0.2%
        assert np.all(np.abs(mean - m_n) <= 4 * se)

    @pytest.mark.parametrize("control", [False, True])
    def test_mixture_oracle_heavy_tail(self, rng, control):
        # pi/mu products reach 6.6^8 on Baird; the mixture oracle keeps them tame
        mdp, mu, pi = baird.baird_mdp(), baird.behavior_policy(), baird.target_policy(0.06)
        mean, se = mc_emphasis_mixture(mdp, mu, pi, 8, 300_000, rng, control=control)
        m_n = truncated_emphasis(mdp, mu, pi, None, 8, control=control)
        assert np.all(np.abs(mean - m_n) <= 4 * se)

    def test_interest_validation(self, small_instance):
        mdp, mu, pi = small_instance
        with pytest.raises(ValueError):
            truncated_emphasis(mdp, mu, pi, [1.0, -1.0, 1.0, 1.0], 2)
        with pytest.raises(ValueError):
            truncated_emphasis(mdp, mu, pi, [1.0, 1.0], 2)

    def test_coverage_required(self, small_instance):
        mdp, _, pi = small_instance
        mu = TabularPolicy(np.tile([1.0, 0.0], (4, 1)))
        with pytest.raises(ValueError, match="cover"):
            build_chain(mdp, mu, pi)


class TestExpectedUpdate:
    def test_tabular_full(self, small_instance):
        mdp, mu, pi = small_instance
        chain = build_chain(mdp, mu, pi)
        A, b = expected_update_of(chain, None, None)
        f = chain.d * emphasis_limit_of(chain)
        np.testing.assert_allclose(A, np.diag(f) @ (chain.gamma * chain.P - np.eye(4)), atol=1e-14)
        np.testing.assert_allclose(b, f * chain.r, atol=1e-14)

    def test_on_policy_n0_is_td_matrix(self, rng):
        mdp = random_mdp(5, 2, rng, discount=0.9)
        pi = random_policy(5, 2, rng)
        X = full_rank_features(rng, 5, 3)
        A, _ = expected_update(mdp, pi, pi, None, X, 0)
        d = stationary_distribution(state_transition_matrix(mdp, pi))
        P = state_transition_matrix(mdp, pi)
        np.testing.assert_allclose(A, X.T @ np.diag(d) @ (0.9 * P - np.eye(5)) @ X, atol=1e-13)

    def test_fixed_point_tabular_is_value(self, small_instance):
        mdp, mu, pi = small_instance
        w = fixed_point(*expected_update(mdp, mu, pi, None, None, None))
        np.testing.assert_allclose(w, value_function(mdp, pi), rtol=1e-9)

    def test_baird_zero_reward(self):
        mdp = baird.baird_mdp()
        A, b = expected_update(mdp, baird.behavior_policy(), baird.target_policy(0.1), None, None, 30)
        np.testing.assert_array_equal(b, 0.0)
        np.testing.assert_allclose(fixed_point(A, b), 0.0, atol=1e-15)

    def test_fixed_point_residual(self, rng):
        for _ in range(20):
            mdp, mu, pi = random_chain(rng)
            chain = build_chain(mdp, mu, pi)
            X = full_rank_features(rng, chain.size, 2)
            A, b = expected_update_of(chain, X, 4)
            try:
                w = fixed_point(A, b)
            except SingularUpdateError:
                continue
            assert np.linalg.norm(A @ w + b) < 1e-9 * (1 + np.linalg.norm(b))

    def test_singular_raises(self):
        with pytest.raises(SingularUpdateError, match="negative definite"):
            fixed_point(np.zeros((2, 2)), np.ones(2))

    def test_baird_features_singular(self):
        mdp = baird.baird_mdp()
        A, b = expected_update(mdp, baird.behavior_policy(), baird.target_policy(0.1), None,
                               baird.baird_features(), 30)
        with pytest.raises(SingularUpdateError):
            fixed_point(A, b)

    def test_control_overload_shapes(self, small_instance, rng):
        mdp, mu, pi = small_instance
        Xsa = full_rank_features(rng, 8, 3)
        A, b = expected_update(mdp, mu, pi, None, Xsa, 2, control=True)
        assert A.shape == (3, 3) and b.shape == (3,)


class TestNegativeDefinite:
    def test_examples(self):
        assert is_negative_definite(-np.eye(3))
        assert not is_negative_definite(np.array([[0.0, 1.0], [-1.0, 0.0]]))
        assert not is_negative_definite(np.diag([-1.0, 0.5]))
        # non-symmetric but n.d.: symmetric part is -I
        assert is_negative_definite(np.array([[-1.0, 5.0], [-5.0, -1.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            is_negative_definite(np.ones((2, 3)))

    def test_on_policy_td_matrix(self, rng):
        for _ in range(100):
            S = int(rng.integers(3, 9))
            mdp = random_mdp(S, 2, rng, discount=float(rng.choice([0.5, 0.9, 0.99])))
            pi = random_policy(S, 2, rng)
            X = full_rank_features(rng, S, int(rng.integers(1, S + 1)))
            A, _ = expected_update(mdp, pi, pi, None, X, 0)
            assert is_negative_definite(A)


class TestThresholds:
    def test_smallest_n(self):
        assert smallest_n(0.5, 0.9) == 6  # 0.9^7 = 0.478 < 0.5 <= 0.9^6
        assert smallest_n(2.0, 0.9) == 0
        assert smallest_n(0.1, 0.0) == 0
        for c in np.geomspace(1e-8, 0.99, 50):
            n = smallest_n(c, 0.95)
            assert 0.95 ** (n + 1) < c and (n == 0 or 0.95**n >= c)

    def test_on_policy_actual_zero(self, rng):
        mdp = random_mdp(5, 2, rng, discount=0.9)
        pi = random_policy(5, 2, rng)
        n_bound, n_actual = min_n_negative_definite(mdp, pi, pi)
        assert n_actual == 0
        assert n_bound >= 0

    def test_bound_sound(self, rng):
        for _ in range(30):
            mdp, mu, pi = random_chain(rng)
            chain = build_chain(mdp, mu, pi)
            X = full_rank_features(rng, chain.size, max(1, chain.size - 2))
            n_bound, n_actual = min_n_negative_definite_of(chain, X)
            assert is_negative_definite(expected_update_of(chain, X, n_bound)[0])
            assert 0 <= n_actual <= n_bound

    def test_n1_matches_bound(self, rng):
        for _ in range(30):
            chain = build_chain(*random_chain(rng))
            n1, n2 = selection_helpers(chain)
            nd_bound, _ = min_n_negative_definite_of(chain)
            ct_bound, kappa = min_n_contraction_of(chain)
            assert nd_bound == max(0, math.floor(n1) + 1)
            assert ct_bound == max(0, math.floor(n2) + 1)
            assert 0 < kappa <= 1

    def test_n1_increases_with_gamma(self, rng):
        S = 5
        base = random_mdp(S, 2, rng)
        mu, pi = random_policy(S, 2, rng, floor=0.2), random_policy(S, 2, rng)
        values = []
        for g in (0.9, 0.95, 0.99, 0.995):
            mdp = type(base)(base.transition, base.reward, g, base.initial_dist)
            values.append(selection_helpers_n1_n2(mdp, mu, pi)[0])
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_contraction_gamma_zero(self, rng):
        mdp = random_mdp(4, 2, rng, discount=0.0)
        chain = build_chain(mdp, random_policy(4, 2, rng), random_policy(4, 2, rng))
        assert min_n_contraction_of(chain)[0] == 0

    def test_contraction_at_bound(self, rng):
        for _ in range(10):
            chain = build_chain(*random_chain(rng))
            X = full_rank_features(rng, chain.size, max(1, chain.size - 1))
            n, _ = min_n_contraction_of(chain)
            emp = empirical_contraction(chain, X, n, pairs=2000, rng=rng)
            exact = contraction_modulus(chain, X, n)
            assert emp <= exact + 1e-12
            assert exact <= math.sqrt(chain.gamma) + 1e-9

    def test_performance_bound_tabular(self, small_instance):
        chain = build_chain(*small_instance)
        err, bound = performance_bound(chain, None, 10)
        assert err == pytest.approx(0.0, abs=1e-9)
        assert bound == pytest.approx(0.0, abs=1e-9)

    def test_performance_bound_linear(self, rng):
        for _ in range(10):
            chain = build_chain(*random_chain(rng))
            X = full_rank_features(rng, chain.size, 2)
            n, _ = min_n_contraction_of(chain)
            err, bound = performance_bound(chain, X, n)
            assert err <= bound + 1e-9

    def test_baird_helpers_finite(self):
        mdp, mu = baird.baird_mdp(), baird.behavior_policy()
        for p in (0.0, 0.02, 0.06, 0.1):
            n1, n2 = selection_helpers_n1_n2(mdp, mu, baird.target_policy(p))
            assert 0 < max(n1, n2) < np.inf

    def test_sampled_sup_control(self, rng):
        mdp = random_mdp(3, 2, rng, discount=0.9)
        pairs = [(random_policy(3, 2, rng, floor=0.3), random_policy(3, 2, rng, floor=0.3)) for _ in range(5)]
        n1, n2 = sampled_sup_n1_n2(mdp, pairs, control=True)
        each = [selection_helpers_n1_n2(mdp, mu, pi, control=True) for mu, pi in pairs]
        assert n1 == max(e[0] for e in each) and n2 == max(e[1] for e in each)


class TestProjection:
    def test_identity_features(self, rng):
        np.testing.assert_allclose(projection_matrix(np.eye(4), rng.uniform(0.1, 1, 4)), np.eye(4), atol=1e-14)

    def test_idempotent_and_range(self, rng):
        X = full_rank_features(rng, 6, 3)
        f = rng.uniform(0.1, 2.0, 6)
        Pi = projection_matrix(X, f)
        np.testing.assert_allclose(Pi @ Pi, Pi, atol=1e-9)
        w = rng.normal(size=3)
        np.testing.assert_allclose(Pi @ (X @ w), X @ w, atol=1e-10)

    def test_rank_deficient(self):
        with pytest.raises(ValueError, match="rank"):
            projection_matrix(baird.baird_features(), np.ones(7))

    def test_fixed_point_identity(self, rng):
        for _ in range(20):
            chain = build_chain(*random_chain(rng))
            X = full_rank_features(rng, chain.size, 2)
            n = 5
            A, b = expected_update_of(chain, X, n)
            try:
                w = fixed_point(A, b)
            except SingularUpdateError:
                continue
            f = chain.d * truncated_emphasis_of(chain, n)
            Pi = projection_matrix(X, f)
            np.testing.assert_allclose(Pi @ bellman_operator(chain, X @ w), X @ w, atol=1e-8)


class TestReport:
    def test_json_roundtrip(self, small_instance):
        report = emphasis_report(*small_instance, n=3)
        back = EmphasisReport.from_json(report.to_json())
        for key in ("m_n", "m", "f_n", "f", "A_n", "b_n", "w_star_n"):
            np.testing.assert_allclose(getattr(back, key), getattr(report, key), rtol=1e-12)
        assert back.min_n_nd == report.min_n_nd
        assert back.n1 == report.n1

    def test_baird_report(self):
        report = emphasis_report(baird.baird_mdp(), baird.behavior_policy(), baird.target_policy(0.06), n=4)
        assert 350 <= report.min_n_nd <= 1400
        assert report.min_n_nd_actual < report.min_n_nd
        assert report.lambda_min > 0
        np.testing.assert_allclose(report.m.sum() * (1 / 7), 100.0, rtol=1e-9)

    def test_singular_report(self):
        report = emphasis_report(baird.baird_mdp(), baird.behavior_policy(), baird.target_policy(0.06),
                                 features=baird.baird_features(), n=4)
        assert report.w_star_n is None
        assert EmphasisReport.from_json(report.to_json()).w_star_n is None
