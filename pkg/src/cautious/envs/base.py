"""Shared transition record for the simulators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any


@dataclass(frozen=True)
class Transition:
    state: Any
    action: int
    reward: float
    next_state: Any
    terminal: bool = False

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise ValueError("transition reward must be finite")
