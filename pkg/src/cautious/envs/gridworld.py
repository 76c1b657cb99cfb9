"""5x5 gridworld with two danger cells, as an exact tabular MDP and an episodic simulator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mdp import TabularMdp
from .base import Transition

# up, right, down, left as (drow, dcol)
MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))


@dataclass(frozen=True)
class GridworldConfig:
    width: int = 5
    height: int = 5
    start: tuple[int, int] = (0, 0)
    goal: tuple[int, int] = (4, 4)
    danger: tuple[tuple[int, int], ...] = ((2, 2), (2, 3))
    p: float = 0.9
    step_cost: float = -0.1
    goal_reward: float = 1.0
    danger_reward: float = -1.0
    max_steps: int = 20
    gamma: float = 0.95

    def __post_init__(self):
        cells = [tuple(self.start), tuple(self.goal), *map(tuple, self.danger)]
        if len(set(cells)) != len(cells):
            raise ValueError("start, goal and danger cells must be distinct")
        for r, c in cells:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise ValueError(f"cell {(r, c)} is outside the {self.height}x{self.width} grid")
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"success probability must lie in (0, 1], got {self.p}")
        object.__setattr__(self, "danger", tuple(tuple(d) for d in self.danger))

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def index(self, cell: tuple[int, int]) -> int:
        return cell[0] * self.width + cell[1]

    def cell(self, index: int) -> tuple[int, int]:
        return divmod(index, self.width)

    def move(self, index: int, direction: int) -> int:
        r, c = self.cell(index)
        dr, dc = MOVES[direction]
        nr, nc = r + dr, c + dc
        if not (0 <= nr < self.height and 0 <= nc < self.width):
            return index
        return self.index((nr, nc))

    def entry_reward(self, index: int) -> float:
        cell = self.cell(index)
        bonus = 0.0
        if cell == tuple(self.goal):
            bonus = self.goal_reward
        elif cell in self.danger:
            bonus = self.danger_reward
        return self.step_cost + bonus


def gridworld_as_tabular(config: GridworldConfig = GridworldConfig()) -> TabularMdp:
    """Cells plus one absorbing terminal state (index ``n_cells``) entered after the goal.

    The goal cell itself moves deterministically to the terminal state with
    zero reward, so the goal bonus is paid exactly once.
    """
    n = config.n_cells
    S, A = n + 1, len(MOVES)
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    goal = config.index(config.goal)
    for s in range(n):
        if s == goal:
            P[s, :, n] = 1.0
            continue
        for a in range(A):
            others = [b for b in range(A) if b != a]
            outcomes = [(a, config.p)] + [(b, (1.0 - config.p) / len(others)) for b in others]
            for direction, prob in outcomes:
                if prob == 0.0:
                    continue
                s2 = config.move(s, direction)
                P[s, a, s2] += prob
                R[s, a, s2] = config.entry_reward(s2)
    P[n, :, n] = 1.0
    d0 = np.zeros(S)
    d0[config.index(config.start)] = 1.0
    bound = max(1.0, float(np.max(np.abs(R))))
    return TabularMdp(P, R, config.gamma, d0, reward_bound=bound)


class Gridworld:
    """Episodic simulator matching :func:`gridworld_as_tabular`.

    Reaching the goal is terminal (no bootstrapping past it); the step cap
    only ends the episode.
    """

    def __init__(self, config: GridworldConfig = GridworldConfig(), rng: np.random.Generator | None = None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng()
        self.state = config.index(config.start)
        self.t = 0
        self.at_goal = False

    def reset(self) -> int:
        self.state = self.config.index(self.config.start)
        self.t = 0
        self.at_goal = False
        return self.state

    @property
    def done(self) -> bool:
        return self.at_goal or self.t >= self.config.max_steps

    def step(self, action: int) -> Transition:
        cfg = self.config
        if not 0 <= action < len(MOVES):
            raise ValueError(f"action {action} out of range")
        if self.at_goal:
            raise RuntimeError("episode has ended; call reset()")
        if self.rng.random() < cfg.p:
            direction = action
        else:
            others = [b for b in range(len(MOVES)) if b != action]
            direction = others[int(self.rng.integers(len(others)))]
        s = self.state
        s2 = cfg.move(s, direction)
        self.state = s2
        self.t += 1
        self.at_goal = s2 == cfg.index(cfg.goal)
        return Transition(s, action, cfg.entry_reward(s2), s2, self.at_goal)
