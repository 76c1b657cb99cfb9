"""Entropy/KL-regularized Bellman machinery (the CVI engine)."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .mdp import DomainError, TabularMdp, check_policy, uniform_policy


@dataclass(frozen=True)
class RegularizationParams:
    """Entropy weight ``tau`` and KL weight ``sigma``.

    ``alpha = tau / (tau + sigma)`` is the exponent on the base policy in
    the greedy step and ``beta = 1 / (tau + sigma)`` the inverse temperature.
    """

    tau: float
    sigma: float

    def __post_init__(self):
        if self.tau < 0 or self.sigma < 0:
            raise DomainError(f"tau and sigma must be non-negative, got tau={self.tau}, sigma={self.sigma}")
        if self.tau + self.sigma <= 0:
            raise DomainError("tau + sigma must be positive")
        if not np.isfinite(1.0 / (self.tau + self.sigma)):
            raise DomainError("tau + sigma is too small: inverse temperature overflows")

    @property
    def alpha(self) -> float:
        return self.tau / (self.tau + self.sigma)

    @property
    def beta(self) -> float:
        return 1.0 / (self.tau + self.sigma)


def derive_alpha_beta(tau: float, sigma: float) -> RegularizationParams:
    return RegularizationParams(float(tau), float(sigma))


def boltzmann_logits(q: np.ndarray, base: np.ndarray, params: RegularizationParams) -> np.ndarray:
    """Unnormalized log-probabilities ``alpha * log(base) + beta * q``."""
    q = np.asarray(q, dtype=float)
    if params.alpha == 0.0:
        return params.beta * q
    base = np.asarray(base, dtype=float)
    if np.any(base <= 0.0):
        raise DomainError("base policy must be strictly positive when alpha > 0")
    return params.alpha * np.log(base) + params.beta * q


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def boltzmann_greedy(q: np.ndarray, base: np.ndarray, params: RegularizationParams) -> np.ndarray:
    """Closed-form regularized greedy policy, row-normalized ``base**alpha * exp(beta * q)``."""
    return softmax(boltzmann_logits(q, base, params))


def _log_checked(p: np.ndarray, what: str) -> np.ndarray:
    if np.any(p <= 0.0):
        raise DomainError(f"{what} has zero probabilities; its logarithm is undefined")
    return np.log(p)


def regularized_backup(
    mdp: TabularMdp,
    q: np.ndarray,
    pi: np.ndarray,
    base: np.ndarray | None = None,
    params: RegularizationParams | None = None,
) -> np.ndarray:
    """One application of the regularized evaluation recursion.

    new Q(s, a) = r(s, a) + gamma * sum_s' P(s'|s, a) sum_a' pi(a'|s')
                  [Q(s', a') - tau log pi(a'|s') - sigma log(pi(a'|s') / base(a'|s'))]

    With ``params=None`` the regularizer is dropped and this is T_pi.
    """
    pi = check_policy(pi, mdp.n_states, mdp.n_actions)
    inner = np.asarray(q, dtype=float).copy()
    if params is not None:
        if params.tau > 0 or params.sigma > 0:
            log_pi = _log_checked(pi, "policy")
            inner -= (params.tau + params.sigma) * log_pi
        if params.sigma > 0:
            if base is None:
                raise DomainError("a base policy is required when sigma > 0")
            inner += params.sigma * _log_checked(np.asarray(base, dtype=float), "base policy")
    v = np.sum(pi * inner, axis=1)
    return mdp.expected_reward + mdp.gamma * mdp.transition @ v


def policy_evaluation_m(mdp: TabularMdp, q0: np.ndarray, pi: np.ndarray, m: int = 1) -> np.ndarray:
    """``(T_pi)^m q0``: m sweeps of the unregularized evaluation operator."""
    if m < 1:
        raise DomainError(f"m must be >= 1, got {m}")
    pi = check_policy(pi, mdp.n_states, mdp.n_actions)
    q = np.asarray(q0, dtype=float)
    for _ in range(m):
        q = mdp.bellman(q, pi)
    return q


@dataclass(frozen=True)
class CviState:
    policy: np.ndarray
    q: np.ndarray
    params: RegularizationParams
    m: int = 1
    k: int = 0

    @classmethod
    def initial(cls, mdp: TabularMdp, params: RegularizationParams, m: int = 1) -> "CviState":
        return cls(
            policy=uniform_policy(mdp.n_states, mdp.n_actions),
            q=np.zeros((mdp.n_states, mdp.n_actions)),
            params=params,
            m=m,
        )


def cvi_iteration(mdp: TabularMdp, state: CviState) -> CviState:
    """Greedy step against the current policy, then m-step evaluation of the new one."""
    pi_next = boltzmann_greedy(state.q, state.policy, state.params)
    q_next = policy_evaluation_m(mdp, state.q, pi_next, state.m)
    return replace(state, policy=pi_next, q=q_next, k=state.k + 1)
