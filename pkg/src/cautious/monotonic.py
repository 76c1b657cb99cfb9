"""Interpolation coefficients, KL/TV bounds and the tabular CPP iteration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .mdp import DomainError, TabularMdp, check_policy, discounted_return, exact_q, policy_advantage, uniform_policy
from .regularized import RegularizationParams, boltzmann_greedy, policy_evaluation_m


class DegenerateDenominatorError(ZeroDivisionError):
    """A coefficient formula hit a zero denominator with a positive advantage."""


def compute_c_k(params: RegularizationParams, gamma: float, k: int, r_max: float = 1.0) -> float:
    """C_K = beta * r_max * sum_{j=0}^{K-1} alpha^j gamma^(K-j-1)."""
    if k < 1:
        raise DomainError(f"iteration index must be >= 1, got {k}")
    alpha = params.alpha
    total = math.fsum(alpha**j * gamma ** (k - j - 1) for j in range(k))
    return params.beta * r_max * total


def compute_b_k(params: RegularizationParams, gamma: float, k: int, epsilon: float = 0.0) -> float:
    """B_K = (1 - gamma^K) / (1 - gamma) * epsilon * beta; zero without an error bound."""
    if epsilon == 0.0:
        return 0.0
    return (1.0 - gamma**k) / (1.0 - gamma) * epsilon * params.beta


@dataclass(frozen=True)
class BoundConstants:
    b_k: float
    c_k: float
    k: int = 1
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None

    @classmethod
    def for_iteration(
        cls, params: RegularizationParams, gamma: float, k: int, epsilon: float = 0.0, r_max: float = 1.0
    ) -> "BoundConstants":
        return cls(
            b_k=compute_b_k(params, gamma, k, epsilon),
            c_k=compute_c_k(params, gamma, k, r_max),
            k=k,
            alpha=params.alpha,
            beta=params.beta,
            gamma=gamma,
        )


def bretagnolle_branch(b_k: float, c_k: float) -> float:
    return math.sqrt(-math.expm1(-4.0 * b_k - 2.0 * c_k))


def pinsker_branch(b_k: float, c_k: float) -> float:
    return math.sqrt(8.0 * b_k + 4.0 * c_k)


def tv_bound(constants: BoundConstants) -> float:
    """Upper bound on max_s TV between consecutive regularized-greedy policies."""
    if constants.b_k < 0 or constants.c_k < 0:
        raise DomainError("bound constants must be non-negative")
    return min(bretagnolle_branch(constants.b_k, constants.c_k), pinsker_branch(constants.b_k, constants.c_k))


def max_tv(p: np.ndarray, q: np.ndarray) -> float:
    """max over states of half the L1 distance between rows."""
    return float(0.5 * np.max(np.sum(np.abs(np.asarray(p) - np.asarray(q)), axis=1)))


class Rule(str, Enum):
    CPI = "cpi"
    ESPI = "espi"
    ASPI = "aspi"
    LINEAR_CPP = "cpp"
    ADAPTIVE_DCPI = "dcpi"
    ADAPTIVE_DCPP = "dcpp"
    FIXED = "fixed"


@dataclass(frozen=True)
class CoefficientRule:
    """Which interpolation coefficient is active, plus its hyperparameters."""

    variant: Rule
    fixed: float | None = None
    rho1: float = 0.99
    rho2: float = 0.999
    zeta0: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "variant", Rule(self.variant))
        if not (0.0 < self.rho1 < 1.0 and 0.0 < self.rho2 < 1.0):
            raise DomainError("rho1 and rho2 must lie in (0, 1)")
        if self.variant is Rule.FIXED:
            if self.fixed is None or not 0.0 <= self.fixed <= 1.0:
                raise DomainError(f"fixed zeta must lie in [0, 1], got {self.fixed}")

    @property
    def adaptive(self) -> bool:
        return self.variant in (Rule.ADAPTIVE_DCPI, Rule.ADAPTIVE_DCPP)

    @classmethod
    def parse(cls, text: str, **kwargs) -> "CoefficientRule":
        """Parse a CLI selector such as ``cpp``, ``aspi`` or ``fixed:0.3``; ``cvi`` means ``fixed:1``."""
        text = text.strip().lower()
        if text == "cvi":
            return cls(Rule.FIXED, fixed=1.0, **kwargs)
        if text.startswith("fixed:"):
            return cls(Rule.FIXED, fixed=float(text.split(":", 1)[1]), **kwargs)
        try:
            return cls(Rule(text), **kwargs)
        except ValueError:
            raise ValueError(f"unknown coefficient rule {text!r}") from None


@dataclass(frozen=True)
class MovingAverages:
    """Running statistics of the adaptive rules (m_K and M_K)."""

    m: float = 0.0
    big_m: float = math.inf

    def update(self, adv_mean: float, adv_min: float, rho1: float, rho2: float) -> "MovingAverages":
        return MovingAverages(
            m=rho1 * self.m + (1.0 - rho1) * adv_mean,
            big_m=min(rho2 * self.big_m, adv_min),
        )


def zeta(
    rule: CoefficientRule,
    expected_advantage: float,
    gamma: float,
    *,
    c_k: float | None = None,
    delta: float | None = None,
    delta_a: float | None = None,
    averages: MovingAverages | None = None,
    r_max: float = 1.0,
) -> float:
    """Interpolation coefficient in [0, 1] for the active rule.

    Formula rules return 0 whenever the advantage estimate is not positive.
    Adaptive rules read ``averages``, which the caller updates beforehand.
    """
    if not math.isfinite(expected_advantage):
        raise DomainError("expected advantage must be finite")
    v = rule.variant
    if v is Rule.FIXED:
        return float(rule.fixed)
    if expected_advantage <= 0.0:
        return 0.0

    a_hat = expected_advantage
    if v is Rule.CPI:
        raw = (1.0 - gamma) * a_hat / (4.0 * r_max)
    elif v is Rule.ESPI:
        if delta is None or delta_a is None:
            raise DomainError("E-SPI needs delta and delta_a")
        denom = gamma * delta * delta_a
        if denom == 0.0:
            raise DegenerateDenominatorError("delta * delta_a is zero while the advantage is positive")
        raw = (1.0 - gamma) ** 2 * a_hat / denom
    elif v is Rule.ASPI:
        raw = (1.0 - gamma) ** 3 * a_hat / (4.0 * gamma)
    elif v is Rule.LINEAR_CPP:
        if c_k is None or c_k <= 0:
            raise DomainError("linear CPP needs a positive C_K")
        raw = (1.0 - gamma) ** 3 * a_hat / (8.0 * gamma * c_k)
    else:
        if averages is None:
            raise DomainError(f"{v.value} needs moving averages")
        if averages.big_m == 0.0:
            raise DegenerateDenominatorError("M_K is zero")
        if v is Rule.ADAPTIVE_DCPI:
            scale = rule.zeta0
        else:
            if c_k is None or c_k <= 0:
                raise DomainError("DCPP needs a positive C_K")
            scale = 1.0 / c_k
        raw = scale * averages.m / averages.big_m
    return float(min(max(raw, 0.0), 1.0))


def loop_zeta(rule: CoefficientRule, expected_advantage: float, gamma: float, **inputs) -> float:
    """:func:`zeta` for iteration loops: an adaptive rule with ``M_K = 0`` takes the clipped limit.

    ``M_K`` is a running minimum of non-negative advantage minima, so it
    gets stuck at zero once any batch has a state with no advantage; the
    limit of ``clip(scale * m / M)`` as ``M -> 0+`` is 1 for ``m > 0``.
    """
    try:
        return zeta(rule, expected_advantage, gamma, **inputs)
    except DegenerateDenominatorError:
        averages = inputs.get("averages")
        if not rule.adaptive or averages is None or averages.big_m != 0.0:
            raise
        return 1.0 if averages.m > 0.0 and expected_advantage > 0.0 else 0.0


def spread_quantities(mdp: TabularMdp, pi_new: np.ndarray, pi_base: np.ndarray, q_base: np.ndarray | None = None):
    """Exact (delta, delta_a): max L1 policy difference and the range of the policy advantage."""
    if q_base is None:
        q_base = exact_q(mdp, pi_base)
    diff = np.asarray(pi_new) - np.asarray(pi_base)
    delta = float(np.max(np.sum(np.abs(diff), axis=1)))
    per_state = np.sum(diff * q_base, axis=1)
    return delta, float(per_state.max() - per_state.min())


def interpolate(pi_new: np.ndarray, pi_base: np.ndarray, zeta: float) -> np.ndarray:
    if not 0.0 <= zeta <= 1.0:
        raise DomainError(f"zeta must lie in [0, 1], got {zeta}")
    if zeta == 1.0:
        return np.array(pi_new, dtype=float)
    if zeta == 0.0:
        return np.array(pi_base, dtype=float)
    return zeta * np.asarray(pi_new) + (1.0 - zeta) * np.asarray(pi_base)


def improvement_lower_bound(expected_adv: float, gamma: float, c_k: float) -> float:
    """Guaranteed improvement when the coefficient is chosen optimally (both branches, max taken)."""
    if c_k <= 0:
        raise DomainError("C_K must be positive")
    if expected_adv <= 0.0:
        return 0.0
    scale = max(1.0 / -math.expm1(-2.0 * c_k), 1.0 / (4.0 * c_k))
    return (1.0 - gamma) ** 3 * expected_adv**2 / (4.0 * gamma) * scale


@dataclass(frozen=True)
class IterationRecord:
    k: int
    zeta: float
    expected_advantage: float
    c_k: float
    tv_realized: float
    tv_bound: float
    return_before: float
    return_after: float

    @property
    def improvement(self) -> float:
        return self.return_after - self.return_before


@dataclass(frozen=True)
class CppState:
    """Tabular CPP iterate; ``policy`` is the deployed policy, also used as the greedy base."""

    policy: np.ndarray
    q: np.ndarray
    params: RegularizationParams
    rule: CoefficientRule
    m: int = 1
    k: int = 0
    epsilon: float = 0.0
    averages: MovingAverages = field(default_factory=MovingAverages)
    record: IterationRecord | None = None

    @classmethod
    def initial(
        cls, mdp: TabularMdp, params: RegularizationParams, rule: CoefficientRule, m: int = 1, epsilon: float = 0.0
    ) -> "CppState":
        return cls(
            policy=uniform_policy(mdp.n_states, mdp.n_actions),
            q=np.zeros((mdp.n_states, mdp.n_actions)),
            params=params,
            rule=rule,
            m=m,
            epsilon=epsilon,
        )


def cpp_iteration(mdp: TabularMdp, state: CppState) -> CppState:
    """Greedy step, m-step evaluation, exact advantage, coefficient, interpolation."""
    pi_k = check_policy(state.policy, mdp.n_states, mdp.n_actions)
    k = state.k + 1
    gamma = mdp.gamma
    pi_next = boltzmann_greedy(state.q, pi_k, state.params)
    q_next = policy_evaluation_m(mdp, state.q, pi_next, state.m)

    q_base = exact_q(mdp, pi_k)
    per_state, a_hat = policy_advantage(mdp, pi_next, pi_k)
    # pi_next folds in state.k value updates; the first step (from Q_0) borrows C_1
    consts = BoundConstants.for_iteration(state.params, gamma, max(state.k, 1), state.epsilon, mdp.reward_bound)

    averages = state.averages
    delta = delta_a = None
    if state.rule.adaptive:
        # exact analogue of the batch statistics: d-weighted mean and min over states
        averages = averages.update(a_hat, float(per_state.min()), state.rule.rho1, state.rule.rho2)
    if state.rule.variant is Rule.ESPI:
        delta, delta_a = spread_quantities(mdp, pi_next, pi_k, q_base)
        if delta * delta_a == 0.0 and a_hat <= 0.0:
            delta = delta_a = 1.0
    z = loop_zeta(
        state.rule, a_hat, gamma, c_k=consts.c_k, delta=delta, delta_a=delta_a, averages=averages, r_max=mdp.reward_bound
    )
    deployed = interpolate(pi_next, pi_k, z)
    record = IterationRecord(
        k=k,
        zeta=z,
        expected_advantage=a_hat,
        c_k=consts.c_k,
        tv_realized=max_tv(pi_next, pi_k),
        tv_bound=tv_bound(consts),
        return_before=discounted_return(mdp, pi_k),
        return_after=discounted_return(mdp, deployed),
    )
    return replace(state, policy=deployed, q=q_next, k=k, averages=averages, record=record)
