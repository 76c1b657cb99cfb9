"""Policy-oscillation criteria and cross-trial aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class LearningCurve:
    returns: list[float] = field(default_factory=list)
    zetas: list[float] = field(default_factory=list)
    expected_advantages: list[float] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.returns)
        if len(self.zetas) != n or len(self.expected_advantages) != n:
            raise ValueError("learning-curve sequences must have equal length")
        if not all(math.isfinite(x) for seq in (self.returns, self.zetas, self.expected_advantages) for x in seq):
            raise ValueError("learning-curve entries must be finite")

    def __len__(self) -> int:
        return len(self.returns)

    def append(self, ret: float, zeta: float, expected_advantage: float) -> None:
        self.returns.append(float(ret))
        self.zetas.append(float(zeta))
        self.expected_advantages.append(float(expected_advantage))


@dataclass(frozen=True)
class OscillationReport:
    osc_inf: float
    osc_l2: float


def oscillation(curve: LearningCurve | Sequence[float]) -> OscillationReport:
    """Largest and root-sum-square drop between consecutive returns."""
    returns = np.asarray(curve.returns if isinstance(curve, LearningCurve) else curve, dtype=float)
    if returns.size < 2:
        raise ValueError("oscillation needs at least two returns")
    diffs = np.diff(returns)
    drops = diffs[diffs < 0]
    if drops.size == 0:
        return OscillationReport(0.0, 0.0)
    return OscillationReport(float(np.max(-drops)), float(np.sqrt(np.sum(drops**2))))


@dataclass(frozen=True)
class Summary:
    mean_return_curve: np.ndarray
    std_return_curve: np.ndarray
    mean_zeta_curve: np.ndarray
    std_zeta_curve: np.ndarray
    osc_inf_mean: float
    osc_l2_mean: float
    n_trials: int

    def to_dict(self) -> dict:
        return {
            "mean_return_curve": self.mean_return_curve.tolist(),
            "std_return_curve": self.std_return_curve.tolist(),
            "mean_zeta_curve": self.mean_zeta_curve.tolist(),
            "std_zeta_curve": self.std_zeta_curve.tolist(),
            "osc_inf_mean": self.osc_inf_mean,
            "osc_l2_mean": self.osc_l2_mean,
            "n_trials": self.n_trials,
        }


def aggregate(curves: Sequence[LearningCurve]) -> Summary:
    """Per-iteration mean/std (population) of returns and zetas, and mean oscillation."""
    if not curves:
        raise ValueError("cannot aggregate an empty set of curves")
    lengths = {len(c) for c in curves}
    if len(lengths) != 1:
        raise ValueError(f"curves have unequal lengths {sorted(lengths)}")
    R = np.array([c.returns for c in curves], dtype=float)
    Z = np.array([c.zetas for c in curves], dtype=float)
    reports = [oscillation(c) for c in curves] if R.shape[1] >= 2 else []
    return Summary(
        mean_return_curve=R.mean(axis=0),
        std_return_curve=R.std(axis=0),
        mean_zeta_curve=Z.mean(axis=0),
        std_zeta_curve=Z.std(axis=0),
        osc_inf_mean=float(np.mean([r.osc_inf for r in reports])) if reports else 0.0,
        osc_l2_mean=float(np.mean([r.osc_l2 for r in reports])) if reports else 0.0,
        n_trials=len(curves),
    )
