import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cautious.mdp import DomainError, TabularMdp, exact_q, policy_advantage, random_mdp, random_policy, uniform_policy
from cautious.regularized import (
    CviState,
    RegularizationParams,
    boltzmann_greedy,
    boltzmann_logits,
    cvi_iteration,
    derive_alpha_beta,
    policy_evaluation_m,
    regularized_backup,
    softmax,
)

positive = st.floats(0.0, 10.0, allow_nan=False)


class TestRegularizationParams:
    def test_symmetric(self):
        p = derive_alpha_beta(0.5, 0.5)
        assert (p.alpha, p.beta) == (0.5, 1.0)

    def test_pure_kl_limit(self):
        p = derive_alpha_beta(0.0, 1.0)
        assert (p.alpha, p.beta) == (0.0, 1.0)

    def test_atari_values(self):
        p = derive_alpha_beta(0.0124, 0.001)
        assert p.alpha == pytest.approx(0.92537, abs=5e-6)
        assert p.beta == pytest.approx(74.627, abs=5e-4)

    @pytest.mark.parametrize("tau,sigma", [(0.0, 0.0), (-0.1, 1.0), (1.0, -0.5)])
    def test_rejects_invalid(self, tau, sigma):
        with pytest.raises(DomainError):
            derive_alpha_beta(tau, sigma)

    @given(positive, positive)
    def test_consistency(self, tau, sigma):
        if tau + sigma <= 1e-300:
            return
        p = RegularizationParams(tau, sigma)
        assert 0.0 <= p.alpha <= 1.0 and p.beta > 0
        assert p.alpha == pytest.approx(tau * p.beta, rel=1e-12)


class TestBoltzmannGreedy:
    def test_uniform_base_constant_q(self):
        pi = boltzmann_greedy(np.full((3, 4), 2.5), uniform_policy(3, 4), RegularizationParams(0.3, 0.7))
        np.testing.assert_allclose(pi, 0.25, atol=1e-15)

    def test_hand_example(self):
        pi = boltzmann_greedy(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]]), RegularizationParams(0.5, 0.5))
        # e / (e + 1) and 1 / (e + 1)
        np.testing.assert_allclose(pi, [[0.73106, 0.26894]], atol=5e-6)
        assert pi[0, 0] == pytest.approx(math.e / (math.e + 1), abs=1e-15)

    def test_greedy_limit(self):
        params = RegularizationParams(0.0, 1e-3)
        pi = boltzmann_greedy(np.array([[0.1, 0.3, 0.2]]), uniform_policy(1, 3), params)
        assert pi[0, 1] >= 0.999

    def test_rejects_zero_base_when_alpha_positive(self):
        with pytest.raises(DomainError):
            boltzmann_greedy(np.zeros((1, 2)), np.array([[1.0, 0.0]]), RegularizationParams(0.5, 0.5))

    def test_zero_base_allowed_when_alpha_zero(self):
        pi = boltzmann_greedy(np.zeros((1, 2)), np.array([[1.0, 0.0]]), RegularizationParams(0.0, 1.0))
        np.testing.assert_allclose(pi, [[0.5, 0.5]])

    def test_no_overflow_for_huge_q(self):
        pi = boltzmann_greedy(np.array([[1e6, 0.0]]), uniform_policy(1, 2), RegularizationParams(0.0, 1e-3))
        assert np.all(np.isfinite(pi)) and pi[0, 0] == 1.0

    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 5.0), st.floats(0.01, 5.0))
    def test_simplex_and_positive(self, seed, tau, sigma):
        rng = np.random.default_rng(seed)
        q = rng.normal(scale=3.0, size=(4, 3))
        base = rng.dirichlet(np.ones(3), size=4)
        pi = boltzmann_greedy(q, base, RegularizationParams(tau, sigma))
        np.testing.assert_allclose(pi.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(pi > 0)

    @given(st.integers(0, 2**31 - 1))
    def test_shift_invariance(self, seed):
        rng = np.random.default_rng(seed)
        q = rng.normal(size=(5, 3))
        base = rng.dirichlet(np.ones(3), size=5)
        params = RegularizationParams(0.2, 0.3)
        shifted = q + rng.normal(scale=10.0, size=(5, 1))
        np.testing.assert_allclose(boltzmann_greedy(q, base, params), boltzmann_greedy(shifted, base, params), atol=1e-12)

    @given(st.integers(0, 2**31 - 1))
    def test_alpha_zero_is_plain_softmax(self, seed):
        rng = np.random.default_rng(seed)
        q = rng.normal(size=(3, 4))
        params = RegularizationParams(0.0, 0.4)
        plain = np.exp(2.5 * q) / np.exp(2.5 * q).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(boltzmann_greedy(q, rng.dirichlet(np.ones(4), 3), params), plain, atol=1e-12)

    def test_logits_closed_form(self):
        q = np.array([[1.0, -1.0]])
        base = np.array([[0.25, 0.75]])
        p = RegularizationParams(0.1, 0.3)
        expected = 0.25 * np.log(base) + 2.5 * q
        np.testing.assert_allclose(boltzmann_logits(q, base, p), expected, atol=1e-15)
        np.testing.assert_allclose(softmax(expected), boltzmann_greedy(q, base, p), atol=1e-15)


def flip_chain(gamma=0.9):
    """Two states, two actions; every action moves to the other state."""
    P = np.zeros((2, 2, 2))
    P[0, :, 1] = P[1, :, 0] = 1.0
    R = np.zeros((2, 2, 2))
    R[0, 0, 1], R[0, 1, 1], R[1, 0, 0], R[1, 1, 0] = 0.5, -0.5, 1.0, 0.0
    return TabularMdp(P, R, gamma)


class TestRegularizedBackup:
    def test_unregularized_equals_expected_backup(self):
        mdp = random_mdp(4, 2, seed=3)
        q = np.random.default_rng(0).normal(size=(4, 2))
        pi = random_policy(4, 2, seed=1)
        v = np.sum(pi * q, axis=1)
        expected = np.einsum("sat,sat->sa", mdp.transition, mdp.reward + mdp.gamma * v[None, None, :])
        np.testing.assert_allclose(regularized_backup(mdp, q, pi), expected, atol=1e-12)

    def test_kl_term_vanishes_when_policy_equals_base(self):
        mdp = random_mdp(3, 3, seed=5)
        q = np.ones((3, 3))
        pi = random_policy(3, 3, seed=6)
        kl_only = regularized_backup(mdp, q, pi, pi, RegularizationParams(0.0, 0.7))
        np.testing.assert_allclose(kl_only, regularized_backup(mdp, q, pi), atol=1e-12)

    def test_hand_entropy_bonus(self):
        mdp = flip_chain(0.9)
        pi = uniform_policy(2, 2)
        out = regularized_backup(mdp, np.zeros((2, 2)), pi, pi, RegularizationParams(0.1, 0.0))
        bonus = 0.9 * 0.1 * math.log(2)
        np.testing.assert_allclose(out, [[0.5 + bonus, -0.5 + bonus], [1.0 + bonus, 0.0 + bonus]], atol=1e-15)

    def test_rejects_zero_probabilities(self):
        mdp = flip_chain()
        pi = np.array([[1.0, 0.0], [0.5, 0.5]])
        with pytest.raises(DomainError):
            regularized_backup(mdp, np.zeros((2, 2)), pi, uniform_policy(2, 2), RegularizationParams(0.1, 0.1))

    def test_requires_base_for_kl(self):
        with pytest.raises(DomainError):
            regularized_backup(flip_chain(), np.zeros((2, 2)), uniform_policy(2, 2), None, RegularizationParams(0.0, 1.0))

    @given(st.integers(0, 2**31 - 1))
    def test_evaluation_operator_is_contraction(self, seed):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(4, 3, gamma=0.85, seed=seed)
        pi = rng.dirichlet(np.ones(3), size=4)
        q1, q2 = rng.normal(size=(2, 4, 3)) * 5
        gap = np.max(np.abs(regularized_backup(mdp, q1, pi) - regularized_backup(mdp, q2, pi)))
        assert gap <= mdp.gamma * np.max(np.abs(q1 - q2)) + 1e-12


class TestPolicyEvaluation:
    def test_one_step_from_zero_is_expected_reward(self):
        mdp = random_mdp(3, 2, seed=8)
        out = policy_evaluation_m(mdp, np.zeros((3, 2)), uniform_policy(3, 2), 1)
        np.testing.assert_allclose(out, mdp.expected_reward, atol=1e-15)

    def test_converges_to_exact(self):
        mdp = random_mdp(5, 3, gamma=0.9, seed=9)
        pi = random_policy(5, 3, seed=10)
        np.testing.assert_allclose(policy_evaluation_m(mdp, np.zeros((5, 3)), pi, 200), exact_q(mdp, pi), atol=1e-8)

    @given(st.integers(0, 2**31 - 1), st.integers(1, 15))
    def test_geometric_rate(self, seed, m):
        mdp = random_mdp(4, 2, gamma=0.8, seed=seed)
        pi = random_policy(4, 2, seed=seed + 1)
        q0 = np.random.default_rng(seed).normal(size=(4, 2))
        qpi = exact_q(mdp, pi)
        err = np.max(np.abs(policy_evaluation_m(mdp, q0, pi, m) - qpi))
        assert err <= mdp.gamma**m * np.max(np.abs(q0 - qpi)) + 1e-10

    def test_rejects_m_zero(self):
        with pytest.raises(DomainError):
            policy_evaluation_m(flip_chain(), np.zeros((2, 2)), uniform_policy(2, 2), 0)


class TestCvi:
    def test_first_policy_strictly_positive(self):
        mdp = random_mdp(4, 3, seed=1)
        state = cvi_iteration(mdp, CviState.initial(mdp, RegularizationParams(0.05, 0.05)))
        assert np.all(state.policy > 0) and state.k == 1

    def test_pure_entropy_greedy_improves_on_exact_q(self):
        # with alpha = 0 and a near-zero temperature the step is a hard greedy
        # step on Q; evaluating fully makes it a policy-iteration improvement
        mdp = random_mdp(6, 3, seed=2)
        state = CviState.initial(mdp, RegularizationParams(0.0, 1e-4), m=400)
        for _ in range(10):
            nxt = cvi_iteration(mdp, state)
            if state.k > 0:
                _, adv = policy_advantage(mdp, nxt.policy, state.policy)
                assert adv >= -1e-10
            state = nxt
        assert state.k == 10

    def test_rejects_overflowing_temperature(self):
        with pytest.raises(DomainError):
            RegularizationParams(0.0, 5e-324)

    def test_matches_manual_loop(self):
        mdp = random_mdp(3, 2, seed=4)
        params = RegularizationParams(0.2, 0.1)
        pi, q = uniform_policy(3, 2), np.zeros((3, 2))
        state = CviState.initial(mdp, params, m=2)
        for _ in range(5):
            w = pi**params.alpha * np.exp(params.beta * q)
            pi = w / w.sum(axis=1, keepdims=True)
            q = mdp.bellman(mdp.bellman(q, pi), pi)
            state = cvi_iteration(mdp, state)
        np.testing.assert_allclose(state.policy, pi, atol=1e-12)
        np.testing.assert_allclose(state.q, q, atol=1e-12)
