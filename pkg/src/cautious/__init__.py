"""Cautious policy programming: regularized value iteration with interpolation-based monotonic improvement."""

from .mdp import (
    DomainError,
    TabularMdp,
    discounted_return,
    exact_q,
    exact_v,
    load_mdp,
    policy_advantage,
    random_mdp,
    save_mdp,
    stationary_distribution,
)
from .monotonic import (
    BoundConstants,
    CoefficientRule,
    CppState,
    Rule,
    cpp_iteration,
    improvement_lower_bound,
    interpolate,
    tv_bound,
    zeta,
)
from .regularized import CviState, RegularizationParams, boltzmann_greedy, cvi_iteration, regularized_backup

__version__ = "0.1.0"
