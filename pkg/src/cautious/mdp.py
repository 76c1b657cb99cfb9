"""Finite MDPs and exact (linear-solve) oracles.

Policies and Q-functions are plain numpy arrays: a policy is an ``(S, A)``
row-stochastic matrix, a Q-function an ``(S, A)`` real matrix, a value
function an ``(S,)`` vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SIMPLEX_TOL = 1e-12


class DomainError(ValueError):
    """An input lies outside the domain where an operation is defined."""


def check_policy(pi: np.ndarray, n_states: int | None = None, n_actions: int | None = None) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 2:
        raise DomainError(f"policy must be a 2-d (S, A) array, got shape {pi.shape}")
    if n_states is not None and pi.shape != (n_states, n_actions):
        raise DomainError(f"policy shape {pi.shape} does not match MDP ({n_states}, {n_actions})")
    if np.any(pi < 0.0):
        raise DomainError("policy has negative entries")
    if not np.allclose(pi.sum(axis=1), 1.0, rtol=0.0, atol=SIMPLEX_TOL):
        raise DomainError("policy rows do not sum to 1")
    return pi


def uniform_policy(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Deterministic argmax policy (ties broken toward the lowest index)."""
    pi = np.zeros_like(q, dtype=float)
    pi[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
    return pi


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP ``(S, A, P, r, gamma, d0)``.

    ``transition[s, a, s']`` and ``reward[s, a, s']`` are full tensors.
    ``reward_bound`` is the bound the rewards are checked against; it is 1
    for the normalized setting the improvement bounds assume.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    initial_state_distribution: np.ndarray | None = None
    reward_bound: float = 1.0
    expected_reward: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        R = np.asarray(self.reward, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise DomainError(f"transition must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape:
            raise DomainError(f"reward shape {R.shape} does not match transition {P.shape}")
        if np.any(P < 0.0) or not np.allclose(P.sum(axis=2), 1.0, rtol=0.0, atol=SIMPLEX_TOL):
            raise DomainError("transition rows must be probability vectors")
        if not np.all(np.isfinite(R)) or np.any(np.abs(R) > self.reward_bound + 1e-12):
            raise DomainError(f"rewards must lie in [-{self.reward_bound}, {self.reward_bound}]")
        if not 0.0 < self.gamma < 1.0:
            raise DomainError(f"gamma must be in (0, 1), got {self.gamma}")
        d0 = self.initial_state_distribution
        if d0 is None:
            d0 = np.zeros(P.shape[0])
            d0[0] = 1.0
        d0 = np.asarray(d0, dtype=float)
        if d0.shape != (P.shape[0],) or np.any(d0 < 0) or abs(d0.sum() - 1.0) > SIMPLEX_TOL:
            raise DomainError("initial_state_distribution must be a probability vector over states")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "initial_state_distribution", d0)
        object.__setattr__(self, "expected_reward", np.einsum("ijk,ijk->ij", P, R))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def state_kernel(self, pi: np.ndarray) -> np.ndarray:
        """State-to-state transition matrix under ``pi``."""
        return np.einsum("sa,sat->st", pi, self.transition)

    def bellman(self, q: np.ndarray, pi: np.ndarray) -> np.ndarray:
        """One application of the (unregularized) evaluation operator T_pi."""
        v = np.sum(pi * q, axis=1)
        return self.expected_reward + self.gamma * self.transition @ v


def random_mdp(
    n_states: int,
    n_actions: int,
    gamma: float = 0.9,
    seed: int | np.random.Generator | None = None,
    initial_state_distribution: np.ndarray | None = None,
) -> TabularMdp:
    """Dirichlet(1, ..., 1) transition rows and uniform rewards in [-1, 1]."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.uniform(-1.0, 1.0, size=(n_states, n_actions, n_states))
    return TabularMdp(P, R, gamma, initial_state_distribution)


def random_policy(n_states: int, n_actions: int, seed: int | np.random.Generator | None = None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(n_actions), size=n_states)


def exact_v(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    pi = check_policy(pi, mdp.n_states, mdp.n_actions)
    P_pi = mdp.state_kernel(pi)
    r_pi = np.sum(pi * mdp.expected_reward, axis=1)
    try:
        return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, r_pi)
    except np.linalg.LinAlgError as exc:  # unreachable for gamma < 1
        raise RuntimeError("policy evaluation solve failed") from exc


def exact_q(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    """Q^pi as the fixed point of T_pi, by a dense linear solve."""
    v = exact_v(mdp, pi)
    return mdp.expected_reward + mdp.gamma * mdp.transition @ v


def advantage(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    q = exact_q(mdp, pi)
    return q - np.sum(pi * q, axis=1, keepdims=True)


def stationary_distribution(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    """Normalized discounted occupancy d = (1 - gamma) d0^T (I - gamma P_pi)^-1."""
    pi = check_policy(pi, mdp.n_states, mdp.n_actions)
    A = np.eye(mdp.n_states) - mdp.gamma * mdp.state_kernel(pi)
    try:
        d = (1.0 - mdp.gamma) * np.linalg.solve(A.T, mdp.initial_state_distribution)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("occupancy solve failed") from exc
    return d


def discounted_return(mdp: TabularMdp, pi: np.ndarray) -> float:
    """(1 - gamma)-normalized return J = sum_s d(s) sum_a pi(a|s) r(s, a)."""
    d = stationary_distribution(mdp, pi)
    return float(d @ np.sum(pi * mdp.expected_reward, axis=1))


def unnormalized_return(mdp: TabularMdp, pi: np.ndarray) -> float:
    """Expected discounted sum of rewards from d0, i.e. d0 . V^pi."""
    return float(mdp.initial_state_distribution @ exact_v(mdp, pi))


def policy_advantage(mdp: TabularMdp, pi_new: np.ndarray, pi_base: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-state policy advantage of ``pi_new`` over ``pi_base`` and its d^base expectation.

    per_state(s) = sum_a (pi_new - pi_base)(a|s) Q_base(s, a).
    """
    pi_new = check_policy(pi_new, mdp.n_states, mdp.n_actions)
    q = exact_q(mdp, pi_base)
    per_state = np.sum((pi_new - pi_base) * q, axis=1)
    d = stationary_distribution(mdp, pi_base)
    return per_state, float(d @ per_state)


def performance_difference(mdp: TabularMdp, pi_new: np.ndarray, pi_base: np.ndarray) -> tuple[float, float]:
    """Both sides of the performance-difference identity.

    lhs = J(pi_new) - J(pi_base)
    rhs = sum_s d^new(s) sum_a pi_new(a|s) A_base(s, a)
    """
    lhs = discounted_return(mdp, pi_new) - discounted_return(mdp, pi_base)
    d_new = stationary_distribution(mdp, pi_new)
    rhs = float(d_new @ np.sum(pi_new * advantage(mdp, pi_base), axis=1))
    return lhs, rhs


def save_mdp(mdp: TabularMdp, path: str | Path) -> None:
    """Write the plain-text fixture format.

    Lines: ``n_states n_actions``, ``gamma``, ``reward_bound``, then
    ``d0``, ``transition`` and ``reward`` each as one line of row-major
    (s, a, s') floats.
    """
    fmt = lambda arr: " ".join(repr(float(x)) for x in np.ravel(arr))  # noqa: E731
    lines = [
        f"{mdp.n_states} {mdp.n_actions}",
        repr(mdp.gamma),
        repr(float(mdp.reward_bound)),
        fmt(mdp.initial_state_distribution),
        fmt(mdp.transition),
        fmt(mdp.reward),
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mdp(path: str | Path) -> TabularMdp:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if len(lines) != 6:
        raise ValueError(f"{path}: expected 6 non-comment lines, found {len(lines)}")
    n_s, n_a = (int(x) for x in lines[0].split())
    gamma = float(lines[1])
    bound = float(lines[2])
    parse = lambda ln: np.array([float(x) for x in ln.split()])  # noqa: E731
    d0 = parse(lines[3])
    P = parse(lines[4]).reshape(n_s, n_a, n_s)
    R = parse(lines[5]).reshape(n_s, n_a, n_s)
    return TabularMdp(P, R, gamma, d0, reward_bound=bound)
