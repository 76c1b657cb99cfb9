from .gridworld import Gridworld, GridworldConfig, gridworld_as_tabular
from .base import Transition
from .pendulum import (
    Pendulum,
    PendulumConfig,
    pendulum_energy,
    pendulum_reset,
    pendulum_reward,
    pendulum_step,
    wrap_angle,
)

__all__ = [
    "Gridworld",
    "GridworldConfig",
    "gridworld_as_tabular",
    "Pendulum",
    "PendulumConfig",
    "Transition",
    "pendulum_energy",
    "pendulum_reset",
    "pendulum_reward",
    "pendulum_step",
    "wrap_angle",
]
