"""Linear function approximation backend: RBF features, ridge fits and Linear CPP.

The learning policy is kept in closed form. Because every Q-function is
linear in the features, the Boltzmann chain
``pi_{K+1} ∝ pi_K**alpha * exp(beta * phi @ theta_K)`` has logits
``phi @ w_{K+1}`` with ``w_{K+1} = alpha * w_K + beta * theta_K``, so a single
weight vector carries the whole history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np

from .monotonic import (
    BoundConstants,
    CoefficientRule,
    MovingAverages,
    Rule,
    interpolate,
    tv_bound,
    loop_zeta,
)
from .regularized import RegularizationParams, softmax


class DegenerateDesignError(np.linalg.LinAlgError):
    """The unregularized normal equations are singular."""


@dataclass(frozen=True)
class RbfFeatureMap:
    """Gaussian RBFs on a grid of state centers crossed with the action set.

    Coordinates are divided by ``scale`` before distances are taken, so a
    single ``width`` serves every dimension. Dimensions with a ``period``
    use the wrapped difference. ``action_coords`` places each discrete
    action on an extra axis; the feature for center ``(c, b)`` at ``(s, a)``
    is ``exp(-(|s - c|^2 + (x_a - x_b)^2) / width^2)``.
    """

    state_centers: np.ndarray
    action_coords: np.ndarray
    width: float = 1.0
    scale: np.ndarray | None = None
    period: tuple[float | None, ...] | None = None

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.state_centers, dtype=float))
        object.__setattr__(self, "state_centers", c)
        object.__setattr__(self, "action_coords", np.asarray(self.action_coords, dtype=float).ravel())
        if self.width <= 0:
            raise ValueError("RBF width must be positive")
        scale = np.ones(c.shape[1]) if self.scale is None else np.asarray(self.scale, dtype=float)
        if scale.shape != (c.shape[1],) or np.any(scale <= 0):
            raise ValueError("scale must be a positive vector, one entry per state dimension")
        object.__setattr__(self, "scale", scale)
        period = self.period if self.period is not None else (None,) * c.shape[1]
        if len(period) != c.shape[1]:
            raise ValueError("period needs one entry per state dimension")
        object.__setattr__(self, "period", tuple(period))
        gaps = self.action_coords[:, None] - self.action_coords[None, :]
        object.__setattr__(self, "_action_kernel", np.exp(-(gaps**2) / self.width**2))

    @property
    def n_actions(self) -> int:
        return self.action_coords.size

    @property
    def n_state_centers(self) -> int:
        return self.state_centers.shape[0]

    @property
    def dim(self) -> int:
        return self.n_state_centers * self.n_actions

    @property
    def centers(self) -> np.ndarray:
        """All centers as points ``(scaled state..., action coord)``; row order matches the features."""
        sc = self.state_centers / self.scale
        rows = [np.column_stack([sc, np.full(len(sc), x)]) for x in self.action_coords]
        return np.vstack(rows)

    def state_part(self, states: np.ndarray) -> np.ndarray:
        """``(N, n_state_centers)`` Gaussian factors of the state coordinates."""
        s = np.atleast_2d(np.asarray(states, dtype=float))
        diff = s[:, None, :] - self.state_centers[None, :, :]
        for d, per in enumerate(self.period):
            if per is not None:
                diff[..., d] = (diff[..., d] + per / 2.0) % per - per / 2.0
        sq = np.sum((diff / self.scale) ** 2, axis=2)
        return np.exp(-sq / self.width**2)

    def all_actions(self, states: np.ndarray) -> np.ndarray:
        """``(N, A, M)`` features of every action at each state."""
        g = self.state_part(states)
        k = self._action_kernel
        return (k[None, :, :, None] * g[:, None, None, :]).reshape(g.shape[0], self.n_actions, self.dim)

    def features(self, state, action: int) -> np.ndarray:
        return self.all_actions(np.asarray(state)[None, ...])[0, action]

    def batch(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        phi = self.all_actions(states)
        return phi[np.arange(phi.shape[0]), np.asarray(actions, dtype=int)]


def grid_feature_map(
    low,
    high,
    n_per_dim,
    n_actions: int,
    periodic=None,
    action_spacing: float = 3.0,
) -> RbfFeatureMap:
    """Uniform grid of state centers, width equal to the grid spacing.

    Periodic dimensions place ``n`` centers on the circle so the seam is
    not duplicated; others use ``n`` points including both ends.
    ``action_spacing`` is the distance between neighbouring actions in
    units of the width.
    """
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    n_per_dim = np.broadcast_to(np.asarray(n_per_dim, dtype=int), low.shape)
    periodic = (False,) * low.size if periodic is None else tuple(periodic)
    axes, spacing, period = [], [], []
    for lo, hi, n, per in zip(low, high, n_per_dim, periodic):
        if per:
            step = (hi - lo) / n
            axes.append(lo + step * (np.arange(n) + 0.5))
            period.append(hi - lo)
        else:
            step = (hi - lo) / (n - 1)
            axes.append(np.linspace(lo, hi, n))
            period.append(None)
        spacing.append(step)
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.column_stack([m.ravel() for m in mesh])
    return RbfFeatureMap(
        state_centers=centers,
        action_coords=action_spacing * np.arange(n_actions),
        width=1.0,
        scale=np.asarray(spacing),
        period=tuple(period),
    )


def pendulum_feature_map(n_theta: int = 11, n_dot: int = 11, max_speed: float = 8.0, n_actions: int = 3) -> RbfFeatureMap:
    return grid_feature_map(
        low=(-math.pi, -max_speed),
        high=(math.pi, max_speed),
        n_per_dim=(n_theta, n_dot),
        n_actions=n_actions,
        periodic=(True, False),
    )


def tabular_feature_map(n_states: int, n_actions: int) -> RbfFeatureMap:
    """Indicator-like features for a discrete state index: a table in RBF clothing.

    Neighbouring indices are 30 widths apart, so cross-talk is ``exp(-900)``,
    which underflows to exactly zero.
    """
    return RbfFeatureMap(
        state_centers=np.arange(n_states, dtype=float)[:, None],
        action_coords=30.0 * np.arange(n_actions),
        width=1.0,
        scale=np.array([1.0 / 30.0]),
    )


@dataclass(frozen=True)
class LinearQ:
    weights: np.ndarray

    def values(self, fmap: RbfFeatureMap, states: np.ndarray) -> np.ndarray:
        """``(N, A)`` action values."""
        return fmap.all_actions(states) @ self.weights

    @classmethod
    def zeros(cls, fmap: RbfFeatureMap) -> "LinearQ":
        return cls(np.zeros(fmap.dim))


class PolicyLike(Protocol):
    def probs(self, fmap: RbfFeatureMap, states: np.ndarray) -> np.ndarray: ...

    def probs_from_features(self, phi: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class LogitPolicy:
    """Boltzmann policy with logits ``phi(s, .) @ w``; ``w = 0`` is uniform."""

    weights: np.ndarray

    def probs(self, fmap: RbfFeatureMap, states: np.ndarray) -> np.ndarray:
        return self.probs_from_features(fmap.all_actions(states))

    def probs_from_features(self, phi: np.ndarray) -> np.ndarray:
        """Probabilities from precomputed ``(N, A, M)`` features."""
        return softmax(phi @ self.weights)

    def greedy_step(self, q: LinearQ, params: RegularizationParams) -> "LogitPolicy":
        return LogitPolicy(params.alpha * self.weights + params.beta * q.weights)


@dataclass(frozen=True)
class MixturePolicy:
    zeta: float
    new: LogitPolicy
    old: LogitPolicy

    def probs(self, fmap: RbfFeatureMap, states: np.ndarray) -> np.ndarray:
        return self.probs_from_features(fmap.all_actions(states))

    def probs_from_features(self, phi: np.ndarray) -> np.ndarray:
        if self.zeta == 1.0:
            return self.new.probs_from_features(phi)
        if self.zeta == 0.0:
            return self.old.probs_from_features(phi)
        return interpolate(self.new.probs_from_features(phi), self.old.probs_from_features(phi), self.zeta)


@dataclass
class OnPolicyBuffer:
    capacity: int
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    next_states: list = field(default_factory=list)
    terminals: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def full(self) -> bool:
        return len(self) >= self.capacity

    def add(self, state, action: int, reward: float, next_state, terminal: bool = False) -> None:
        if self.full:
            raise OverflowError("on-policy buffer is full")
        self.states.append(np.atleast_1d(np.asarray(state, dtype=float)))
        self.actions.append(int(action))
        self.rewards.append(float(reward))
        self.next_states.append(np.atleast_1d(np.asarray(next_state, dtype=float)))
        self.terminals.append(bool(terminal))

    def clear(self) -> None:
        for seq in (self.states, self.actions, self.rewards, self.next_states, self.terminals):
            seq.clear()

    def arrays(self):
        return (
            np.array(self.states),
            np.array(self.actions, dtype=int),
            np.array(self.rewards),
            np.array(self.next_states),
            np.array(self.terminals, dtype=bool),
        )


def solve_normal_equations(
    phi: np.ndarray, targets: np.ndarray, ridge: float, anchor: np.ndarray | None = None
) -> np.ndarray:
    """``(Phi^T Phi + ridge I)^{-1} (Phi^T y + ridge * anchor)``; the anchor defaults to zero.

    With an anchor the ridge term shrinks toward it instead of toward the
    origin, so directions the data never excite keep their anchored value.
    """
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    gram = phi.T @ phi
    if ridge == 0.0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise DegenerateDesignError("design matrix is rank deficient and no ridge term was given")
    gram[np.diag_indices_from(gram)] += ridge
    rhs = phi.T @ targets
    if anchor is not None:
        rhs = rhs + ridge * np.asarray(anchor, dtype=float)
    return np.linalg.solve(gram, rhs)


@dataclass(frozen=True)
class BufferFeatures:
    """Feature tensors of a buffer, computed once and shared by repeated fits."""

    taken: np.ndarray
    next_all: np.ndarray
    rewards: np.ndarray
    terminals: np.ndarray

    @classmethod
    def build(cls, fmap: RbfFeatureMap, buffer: OnPolicyBuffer) -> "BufferFeatures":
        if len(buffer) == 0:
            raise ValueError("cannot fit on an empty buffer")
        states, actions, rewards, next_states, terminals = buffer.arrays()
        return cls(fmap.batch(states, actions), fmap.all_actions(next_states), rewards, terminals)


def bellman_targets(
    fmap: RbfFeatureMap,
    buffer: OnPolicyBuffer,
    pi_next: PolicyLike,
    q_prev: LinearQ,
    gamma: float,
    features: BufferFeatures | None = None,
) -> np.ndarray:
    """Empirical ``r + gamma * sum_a pi_next(a|s') Q_prev(s', a)``, no bootstrap past terminals."""
    f = features if features is not None else BufferFeatures.build(fmap, buffer)
    q_next = f.next_all @ q_prev.weights
    v_next = np.sum(pi_next.probs_from_features(f.next_all) * q_next, axis=1)
    return f.rewards + gamma * np.where(f.terminals, 0.0, v_next)


def fit(
    fmap: RbfFeatureMap,
    buffer: OnPolicyBuffer,
    pi_next: PolicyLike,
    q_prev: LinearQ,
    ridge: float = 1e-6,
    gamma: float = 0.99,
    anchored: bool = False,
    features: BufferFeatures | None = None,
) -> LinearQ:
    """Ridge least-squares fit of the empirical Bellman targets.

    ``anchored=True`` shrinks toward ``q_prev`` rather than zero; with
    one-hot features this is a lookup table in which only visited entries
    move.
    """
    if len(buffer) == 0:
        raise ValueError("cannot fit on an empty buffer")
    f = features if features is not None else BufferFeatures.build(fmap, buffer)
    y = bellman_targets(fmap, buffer, pi_next, q_prev, gamma, f)
    anchor = q_prev.weights if anchored else None
    return LinearQ(solve_normal_equations(f.taken, y, ridge, anchor))


@dataclass(frozen=True)
class AdvantageEstimate:
    per_state: np.ndarray
    mean: float
    min: float
    delta: float
    delta_a: float
    tv: float
    policy_advantage: float = 0.0


def estimate_advantages(
    q: LinearQ, fmap: RbfFeatureMap, buffer: OnPolicyBuffer, pi_next: PolicyLike, pi_curr: PolicyLike
) -> AdvantageEstimate:
    """Buffer statistics of ``max_a Q(s, a) - V(s)`` with V under ``pi_curr``.

    ``delta``/``delta_a`` are the buffer max L1 policy difference and the
    spread of ``sum_a (pi_next - pi_curr) Q``, the sample-based inputs of
    the E-SPI rule.
    """
    if len(buffer) == 0:
        raise ValueError("cannot estimate advantages on an empty buffer")
    states = buffer.arrays()[0]
    qv = q.values(fmap, states)
    p_next = pi_next.probs(fmap, states)
    p_curr = pi_curr.probs(fmap, states)
    per_state = qv.max(axis=1) - np.sum(p_curr * qv, axis=1)
    diff = p_next - p_curr
    l1 = np.sum(np.abs(diff), axis=1)
    pol_adv = np.sum(diff * qv, axis=1)
    return AdvantageEstimate(
        per_state=per_state,
        mean=float(per_state.mean()),
        min=float(per_state.min()),
        delta=float(l1.max()),
        delta_a=float(pol_adv.max() - pol_adv.min()),
        tv=float(0.5 * l1.max()),
        policy_advantage=float(pol_adv.mean()),
    )


class Environment(Protocol):
    def reset(self) -> np.ndarray: ...

    def step(self, action: int): ...


@dataclass(frozen=True)
class LinearRecord:
    k: int
    episode_return: float
    zeta: float
    expected_advantage: float
    c_k: float
    tv_realized: float
    tv_bound: float
    n_samples: int


@dataclass(frozen=True)
class LinearCppState:
    """Iterate of Linear CPP.

    ``policy`` is the learning policy pi_K, ``previous`` is pi_{K-1} and
    ``zeta`` the coefficient that mixed them into the behaviour policy.
    """

    fmap: RbfFeatureMap
    q: LinearQ
    policy: LogitPolicy
    previous: LogitPolicy
    zeta: float
    params: RegularizationParams
    rule: CoefficientRule
    gamma: float
    steps: int
    ridge: float = 1e-6
    anchored: bool = False
    episodic: bool = False
    m: int = 1
    k: int = 0
    epsilon: float = 0.0
    r_max: float = 1.0
    averages: MovingAverages = field(default_factory=MovingAverages)
    record: LinearRecord | None = None

    @classmethod
    def initial(
        cls, fmap, params, rule, gamma, steps, ridge=1e-6, epsilon=0.0, r_max=1.0, anchored=False, episodic=False, m=1
    ) -> "LinearCppState":
        if m < 1:
            raise ValueError("m must be at least 1")
        uniform = LogitPolicy(np.zeros(fmap.dim))
        return cls(
            fmap=fmap,
            q=LinearQ.zeros(fmap),
            policy=uniform,
            previous=uniform,
            zeta=1.0,
            params=params,
            rule=rule,
            gamma=gamma,
            steps=steps,
            ridge=ridge,
            anchored=anchored,
            episodic=episodic,
            m=m,
            epsilon=epsilon,
            r_max=r_max,
        )

    @property
    def behaviour(self) -> MixturePolicy:
        return MixturePolicy(self.zeta, self.policy, self.previous)


def collect(
    env, fmap: RbfFeatureMap, policy: PolicyLike, steps: int, rng: np.random.Generator, episodic: bool = False
) -> tuple[OnPolicyBuffer, float]:
    """Gather exactly ``steps`` transitions, resetting whenever an episode ends.

    With ``episodic=True`` collection instead stops at the end of the first
    episode, so the buffer holds at most ``steps`` transitions.

    ``env.step`` returns a :class:`~cautious.envs.Transition` and
    ``env.done`` flags the end of an episode. Returns the buffer and the
    cumulative reward of the collected transitions.
    """
    buffer = OnPolicyBuffer(steps)
    state = env.reset()
    uniforms = rng.random(steps)
    for t in range(steps):
        p = policy.probs_from_features(fmap.all_actions(np.atleast_1d(state)[None, :]))[0]
        action = min(int(np.searchsorted(np.cumsum(p), uniforms[t] * p.sum(), side="right")), len(p) - 1)
        tr = env.step(action)
        buffer.add(tr.state, action, tr.reward, tr.next_state, tr.terminal)
        if env.done:
            if episodic:
                break
            state = env.reset()
        else:
            state = tr.next_state
    return buffer, float(math.fsum(buffer.rewards))


def linear_cpp_iteration(state: LinearCppState, env, rng: np.random.Generator) -> LinearCppState:
    """One iteration: collect with the behaviour mixture, greedy step, refit, coefficient, mix."""
    k = state.k + 1
    buffer, episode_return = collect(env, state.fmap, state.behaviour, state.steps, rng, state.episodic)

    pi_next = state.policy.greedy_step(state.q, state.params)
    # m-step evaluation: repeated fitted backups of pi_next on the same buffer
    feats = BufferFeatures.build(state.fmap, buffer)
    q_next = state.q
    for _ in range(state.m):
        q_next = fit(state.fmap, buffer, pi_next, q_next, state.ridge, state.gamma, state.anchored, feats)
    est = estimate_advantages(q_next, state.fmap, buffer, pi_next, state.policy)

    # same indexing as the tabular loop: pi_next has absorbed state.k fitted Q-functions
    consts = BoundConstants.for_iteration(state.params, state.gamma, max(state.k, 1), state.epsilon, state.r_max)
    averages = state.averages
    if state.rule.adaptive:
        averages = averages.update(est.mean, est.min, state.rule.rho1, state.rule.rho2)
    delta, delta_a = est.delta, est.delta_a
    if state.rule.variant is Rule.ESPI and delta * delta_a == 0.0 and est.policy_advantage == 0.0:
        # the pair agrees on every buffer state: nothing to be cautious about
        z = 1.0
    else:
        z = loop_zeta(
            state.rule,
            est.mean,
            state.gamma,
            c_k=consts.c_k,
            delta=delta,
            delta_a=delta_a,
            averages=averages,
            r_max=state.r_max,
        )
    record = LinearRecord(
        k=k,
        episode_return=episode_return,
        zeta=z,
        expected_advantage=est.mean,
        c_k=consts.c_k,
        tv_realized=est.tv,
        tv_bound=tv_bound(consts),
        n_samples=len(buffer),
    )
    buffer.clear()
    return replace(
        state,
        q=q_next,
        policy=pi_next,
        previous=state.policy,
        zeta=z,
        k=k,
        averages=averages,
        record=record,
    )
