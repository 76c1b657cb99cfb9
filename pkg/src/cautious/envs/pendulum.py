"""Pendulum swing-up with three discrete torques.

The angle is measured from upright (theta = 0 is the goal) and wrapped to
(-pi, pi]; the episode starts hanging down at theta = pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import Transition


@dataclass(frozen=True)
class PendulumConfig:
    length: float = 1.5
    mass: float = 1.0
    torques: tuple[float, ...] = (-2.0, 0.0, 2.0)
    z: float = 10.0
    angle_weight: float = 1.0
    velocity_weight: float = 0.01
    episode_length: int = 500
    dt: float = 0.05
    gravity: float = 9.8
    max_speed: float = 8.0
    gamma: float = 0.99

    def __post_init__(self):
        if self.z <= 0 or self.dt <= 0 or self.length <= 0 or self.mass <= 0:
            raise ValueError("z, dt, length and mass must be positive")
        if not self.torques:
            raise ValueError("torque set must be non-empty")
        object.__setattr__(self, "torques", tuple(float(u) for u in self.torques))

    @property
    def n_actions(self) -> int:
        return len(self.torques)


def wrap_angle(theta: float) -> float:
    """Map to (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


def pendulum_reward(state, config: PendulumConfig = PendulumConfig()) -> float:
    theta, theta_dot = float(state[0]), float(state[1])
    return -(config.angle_weight * theta**2 + config.velocity_weight * theta_dot**2) / config.z


def pendulum_reset(config: PendulumConfig = PendulumConfig()) -> np.ndarray:
    return np.array([math.pi, 0.0])


def pendulum_step(state, torque_index: int, config: PendulumConfig = PendulumConfig()) -> Transition:
    """Semi-implicit Euler step; the reward is charged on the pre-step state."""
    if not 0 <= torque_index < config.n_actions:
        raise ValueError(f"torque index {torque_index} out of range")
    theta, theta_dot = float(state[0]), float(state[1])
    u = config.torques[torque_index]
    ml2 = config.mass * config.length**2
    theta_ddot = (config.gravity / config.length) * math.sin(theta) + u / ml2
    new_dot = min(max(theta_dot + theta_ddot * config.dt, -config.max_speed), config.max_speed)
    new_theta = wrap_angle(theta + new_dot * config.dt)
    reward = pendulum_reward((theta, theta_dot), config)
    return Transition(np.array([theta, theta_dot]), torque_index, reward, np.array([new_theta, new_dot]))


def pendulum_energy(state, config: PendulumConfig = PendulumConfig()) -> float:
    """Kinetic plus potential energy, zero potential at the pivot height."""
    theta, theta_dot = float(state[0]), float(state[1])
    ml2 = config.mass * config.length**2
    return 0.5 * ml2 * theta_dot**2 + config.mass * config.gravity * config.length * math.cos(theta)


class Pendulum:
    def __init__(self, config: PendulumConfig = PendulumConfig()):
        self.config = config
        self.state = pendulum_reset(config)
        self.t = 0

    def reset(self) -> np.ndarray:
        self.state = pendulum_reset(self.config)
        self.t = 0
        return self.state.copy()

    @property
    def done(self) -> bool:
        # time limit only; the last transition is not terminal for bootstrapping
        return self.t >= self.config.episode_length

    def step(self, torque_index: int) -> Transition:
        tr = pendulum_step(self.state, torque_index, self.config)
        self.t += 1
        self.state = tr.next_state
        return tr
