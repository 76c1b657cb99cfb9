"""Experiment runner and command-line interface.

Three subcommands:

* ``gridworld``: exact tabular CPP on the danger gridworld. Each
  iteration is one dynamic-programming step, and the deployed policy is
  scored by one sampled episode.
* ``pendulum``: Linear CPP (RBF features, scheme-1 behaviour mixture) on
  the swing-up task.
* ``bounds-check``: exact CPP on random MDPs with per-iteration bound
  bookkeeping.

Every trial draws from its own seed derived from ``(seed, trial)``, with
separate environment and algorithm streams. Outputs are therefore
independent of scheduling and bit-identical across repeated runs.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .envs import Gridworld, GridworldConfig, Pendulum, PendulumConfig, gridworld_as_tabular
from .lfa import LinearCppState, linear_cpp_iteration, pendulum_feature_map
from .mdp import TabularMdp, random_mdp, save_mdp
from .metrics import LearningCurve, OscillationReport, Summary, aggregate, oscillation
from .monotonic import CoefficientRule, CppState, cpp_iteration, improvement_lower_bound
from .regularized import RegularizationParams

CSV_COLUMNS = ("trial", "iteration", "cumulative_reward", "zeta", "expected_advantage", "tv_realized", "tv_bound")
ENVIRONMENTS = ("gridworld", "pendulum", "bounds-check")
TV_SLACK = 1e-10
IMPROVEMENT_SLACK = 1e-8

# per-environment defaults for settings left unset in the config
DEFAULTS = {
    "gridworld": dict(gamma=0.95, trials=100, iters=30, steps=20, m=1, ridge=1e-6, anchored=False),
    "pendulum": dict(gamma=0.99, trials=20, iters=80, steps=500, m=5, ridge=1.0, anchored=True),
    "bounds-check": dict(gamma=0.9, trials=50, iters=50, steps=0, m=1, ridge=1e-6, anchored=False),
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "gridworld"
    algo: str = "cpp"
    tau: float = 0.1
    sigma: float = 0.1
    gamma: float | None = None
    trials: int | None = None
    seed: int = 0
    iters: int | None = None
    steps: int | None = None
    m: int | None = None
    ridge: float | None = None
    anchored: bool | None = None
    epsilon: float = 0.0
    rho1: float = 0.99
    rho2: float = 0.999
    zeta0: float = 0.25
    n_states: int = 8
    n_actions: int = 3
    n_theta: int = 11
    n_dot: int = 11
    out: str | None = None
    env_overrides: dict = field(default_factory=dict)

    def resolved(self) -> "ExperimentConfig":
        """Fill unset fields with the environment defaults and validate."""
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"unknown environment {self.env!r}; choose from {ENVIRONMENTS}")
        defaults = DEFAULTS[self.env]
        cfg = replace(self, **{k: v for k, v in defaults.items() if getattr(self, k) is None})
        if self.env == "pendulum" and self.steps is None:
            cfg = replace(cfg, steps=cfg.pendulum_config().episode_length)
        if cfg.trials < 1:
            raise ConfigError("trial count must be at least 1")
        if cfg.iters < 1:
            raise ConfigError("iteration count must be at least 1")
        if not 0.0 <= cfg.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        cfg.rule()
        cfg.params()
        cfg.environment_config()
        return cfg

    def rule(self) -> CoefficientRule:
        try:
            return CoefficientRule.parse(self.algo, rho1=self.rho1, rho2=self.rho2, zeta0=self.zeta0)
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def params(self) -> RegularizationParams:
        try:
            return RegularizationParams(self.tau, self.sigma)
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def gridworld_config(self) -> GridworldConfig:
        return _build(GridworldConfig, dict(self.env_overrides, gamma=self.gamma), "gridworld")

    def pendulum_config(self) -> PendulumConfig:
        overrides = dict(self.env_overrides)
        if self.gamma is not None:
            overrides["gamma"] = self.gamma
        return _build(PendulumConfig, overrides, "pendulum")

    def environment_config(self):
        if self.env == "gridworld":
            return self.gridworld_config()
        if self.env == "pendulum":
            return self.pendulum_config()
        if self.env_overrides:
            raise ConfigError(f"bounds-check takes no environment overrides, got {sorted(self.env_overrides)}")
        return None


def _build(cls, overrides: dict, name: str):
    names = {f.name for f in fields(cls)}
    unknown = set(overrides) - names
    if unknown:
        raise ConfigError(f"unknown {name} settings: {sorted(unknown)}")
    try:
        return cls(**overrides)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid {name} settings: {err}") from None


# ---------------------------------------------------------------- config file

_FIELD_KEYS = {
    "harness.env": "env",
    "harness.algo": "algo",
    "harness.trials": "trials",
    "harness.seed": "seed",
    "harness.iters": "iters",
    "harness.out": "out",
    "regularized.tau": "tau",
    "regularized.sigma": "sigma",
    "mdp.gamma": "gamma",
    "mdp.n_states": "n_states",
    "mdp.n_actions": "n_actions",
    "monotonic.epsilon": "epsilon",
    "monotonic.rho1": "rho1",
    "monotonic.rho2": "rho2",
    "monotonic.zeta0": "zeta0",
    "monotonic.m": "m",
    "lfa.steps": "steps",
    "lfa.ridge": "ridge",
    "lfa.anchored": "anchored",
    "lfa.n_theta": "n_theta",
    "lfa.n_dot": "n_dot",
}


def _parse_value(text: str):
    """Numbers, booleans, cell lists ``2,2;2,3`` and number lists ``-2,0,2``."""
    low = text.strip().lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if ";" in text:
        return tuple(tuple(int(x) for x in cell.split(",")) for cell in text.split(";") if cell.strip())
    if "," in text:
        return tuple(_parse_value(x) for x in text.split(","))
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text.strip()


def parse_config_text(text: str) -> dict:
    """Flat ``namespace.key = value`` lines; ``#`` starts a comment."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as err:
        raise ConfigError(f"malformed config file: {err}") from None
    return {key: _parse_value(value) for key, value in parser["config"].items()}


def config_from_mapping(entries: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply parsed config entries; ``gridworld.*``/``pendulum.*`` keys become environment overrides."""
    cfg = base or ExperimentConfig()
    updates, overrides = {}, dict(cfg.env_overrides)
    for key, value in entries.items():
        if key in _FIELD_KEYS:
            updates[_FIELD_KEYS[key]] = value
        elif key.startswith(("gridworld.", "pendulum.")):
            overrides[key.split(".", 1)[1]] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return replace(cfg, **updates, env_overrides=overrides)


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return config_from_mapping(parse_config_text(Path(path).read_text()), base)


# ---------------------------------------------------------------- running


@dataclass(frozen=True)
class TrialRow:
    trial: int
    iteration: int
    cumulative_reward: float
    zeta: float
    expected_advantage: float
    tv_realized: float
    tv_bound: float

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


@dataclass(frozen=True)
class RunResult:
    config: ExperimentConfig
    curves: list[LearningCurve]
    reports: list[OscillationReport]
    summary: Summary
    rows: list[TrialRow]
    violations: int
    negative_improvements: int = 0
    below_lower_bound: int = 0
    records: list = field(default_factory=list)

    def summary_dict(self) -> dict:
        out = {
            "mean_return_curve": self.summary.mean_return_curve.tolist(),
            "std_return_curve": self.summary.std_return_curve.tolist(),
            "osc_inf_mean": self.summary.osc_inf_mean,
            "osc_l2_mean": self.summary.osc_l2_mean,
            "violations": self.violations,
            "mean_zeta_curve": self.summary.mean_zeta_curve.tolist(),
            "n_trials": self.summary.n_trials,
        }
        if self.config.env == "bounds-check":
            out["negative_improvements"] = self.negative_improvements
            out["below_lower_bound"] = self.below_lower_bound
        return out


def trial_streams(seed: int, trial: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Disjoint (environment, algorithm) generators for one trial."""
    env_seq, algo_seq = np.random.SeedSequence(seed, spawn_key=(trial,)).spawn(2)
    return np.random.default_rng(env_seq), np.random.default_rng(algo_seq)


def sample_episode(env: Gridworld, policy: np.ndarray, rng: np.random.Generator, max_steps: int) -> float:
    """Undiscounted return of one episode (goal or step cap) under a tabular policy."""
    state = env.reset()
    total = 0.0
    for _ in range(max_steps):
        p = policy[state]
        action = min(int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right")), len(p) - 1)
        tr = env.step(action)
        total += tr.reward
        state = tr.next_state
        if env.done:
            break
    return total


def _tabular_trial(cfg: ExperimentConfig, mdp: TabularMdp, trial: int, score):
    rule, params = cfg.rule(), cfg.params()
    state = CppState.initial(mdp, params, rule, m=cfg.m, epsilon=cfg.epsilon)
    curve, rows, records = LearningCurve(), [], []
    for _ in range(cfg.iters):
        state = cpp_iteration(mdp, state)
        rec = state.record
        ret = score(state, rec)
        curve.append(ret, rec.zeta, rec.expected_advantage)
        rows.append(TrialRow(trial, rec.k, ret, rec.zeta, rec.expected_advantage, rec.tv_realized, rec.tv_bound))
        records.append(rec)
    return curve, rows, records


def _run_gridworld(cfg: ExperimentConfig, trial: int):
    gcfg = cfg.gridworld_config()
    mdp = gridworld_as_tabular(gcfg)
    env_rng, algo_rng = trial_streams(cfg.seed, trial)
    env = Gridworld(gcfg, env_rng)
    steps = min(cfg.steps, gcfg.max_steps)
    return _tabular_trial(cfg, mdp, trial, lambda state, rec: sample_episode(env, state.policy, algo_rng, steps))


def _run_bounds(cfg: ExperimentConfig, trial: int):
    env_rng, _ = trial_streams(cfg.seed, trial)
    mdp = random_mdp(cfg.n_states, cfg.n_actions, cfg.gamma, seed=env_rng)
    return _tabular_trial(cfg, mdp, trial, lambda state, rec: rec.return_after)


def _run_pendulum(cfg: ExperimentConfig, trial: int):
    pcfg = cfg.pendulum_config()
    _, algo_rng = trial_streams(cfg.seed, trial)
    fmap = pendulum_feature_map(cfg.n_theta, cfg.n_dot, pcfg.max_speed, pcfg.n_actions)
    # the reward is already scaled by 1/z into [-1, 0], so r_max = 1
    state = LinearCppState.initial(
        fmap,
        cfg.params(),
        cfg.rule(),
        pcfg.gamma,
        cfg.steps,
        ridge=cfg.ridge,
        epsilon=cfg.epsilon,
        anchored=cfg.anchored,
        m=cfg.m,
    )
    env = Pendulum(pcfg)
    curve, rows = LearningCurve(), []
    for _ in range(cfg.iters):
        state = linear_cpp_iteration(state, env, algo_rng)
        rec = state.record
        curve.append(rec.episode_return, rec.zeta, rec.expected_advantage)
        rows.append(TrialRow(trial, rec.k, rec.episode_return, rec.zeta, rec.expected_advantage, rec.tv_realized, rec.tv_bound))
    return curve, rows, []


_RUNNERS = {"gridworld": _run_gridworld, "pendulum": _run_pendulum, "bounds-check": _run_bounds}


def run(config: ExperimentConfig, write: bool = True) -> RunResult:
    """Run all trials of one algorithm; writes CSV/JSON under ``config.out`` when set."""
    cfg = config.resolved()
    runner = _RUNNERS[cfg.env]
    curves, rows, all_records = [], [], []
    violations = negatives = below = 0
    for trial in range(cfg.trials):
        curve, trial_rows, records = runner(cfg, trial)
        curves.append(curve)
        rows.extend(trial_rows)
        violations += sum(r.tv_realized > r.tv_bound + TV_SLACK for r in trial_rows)
        all_records.extend((trial, rec) for rec in records)
        for rec in records:
            if rec.expected_advantage >= 0.0 and rec.improvement < -IMPROVEMENT_SLACK:
                negatives += 1
            if rec.improvement < improvement_lower_bound(rec.expected_advantage, cfg.gamma, rec.c_k) - IMPROVEMENT_SLACK:
                below += 1
    reports = [oscillation(c) for c in curves] if cfg.iters >= 2 else []
    result = RunResult(cfg, curves, reports, aggregate(curves), rows, violations, negatives, below, all_records)
    if write and cfg.out:
        write_outputs({cfg.algo: result}, cfg.out)
    return result


def bounds_check(config: ExperimentConfig) -> dict:
    """Realized TV vs bound and realized improvement vs the guarantee, per iteration."""
    result = run(replace(config, env="bounds-check"), write=False)
    gamma = result.config.gamma
    iterations = [
        {
            "trial": trial,
            "iteration": rec.k,
            "zeta": rec.zeta,
            "tv_realized": rec.tv_realized,
            "tv_bound": rec.tv_bound,
            "improvement": rec.improvement,
            "improvement_lower_bound": improvement_lower_bound(rec.expected_advantage, gamma, rec.c_k),
        }
        for trial, rec in result.records
    ]
    return {
        "iterations": iterations,
        "tv_violations": result.violations,
        "negative_improvements": result.negative_improvements,
        "below_lower_bound": result.below_lower_bound,
    }


def write_outputs(results: dict[str, RunResult], out: str | Path) -> None:
    """``<out>/<algo>.csv`` per algorithm plus ``<out>/summary.json`` keyed by algorithm."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for algo, result in results.items():
        with open(out / f"{_safe_name(algo)}.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for row in result.rows:
                writer.writerow([_fmt(v) for v in row.as_tuple()])
    summary = {algo: result.summary_dict() for algo, result in results.items()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _safe_name(algo: str) -> str:
    return algo.replace(":", "_")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


# ---------------------------------------------------------------- CLI


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cautious", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ENVIRONMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--algo", default=None, help="comma-separated: cvi, cpp, cpi, espi, aspi, dcpi, dcpp, fixed:<z>")
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--iters", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory for <algo>.csv and summary.json")
        p.add_argument("--config", default=None, help="flat key = value settings file")
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--sigma", type=float, default=None)
        p.add_argument("--gamma", type=float, default=None)
        if name == "gridworld":
            p.add_argument("--export", default=None, help="write the tabular MDP fixture to this path and exit")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig(env=args.command, algo="cvi" if args.command == "bounds-check" else "cpp")
    if args.config:
        cfg = load_config(args.config, cfg)
    if cfg.env != args.command:
        raise ConfigError(f"config file selects {cfg.env!r} but the subcommand is {args.command!r}")
    flags = {k: getattr(args, k) for k in ("algo", "trials", "seed", "iters", "out", "tau", "sigma", "gamma")}
    return replace(cfg, **{k: v for k, v in flags.items() if v is not None})


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        if getattr(args, "export", None):
            save_mdp(gridworld_as_tabular(cfg.resolved().gridworld_config()), args.export)
            print(f"wrote {args.export}")
            return 0
        results = {}
        for algo in [a.strip() for a in cfg.algo.split(",") if a.strip()]:
            results[algo] = run(replace(cfg, algo=algo), write=False)
    except (ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    if cfg.out:
        write_outputs(results, cfg.out)
    for algo, result in results.items():
        s = result.summary
        line = (
            f"{algo:>10}: final return {s.mean_return_curve[-1]:+.4f}  "
            f"osc_inf {s.osc_inf_mean:.4f}  osc_l2 {s.osc_l2_mean:.4f}  "
            f"mean zeta {float(np.mean(s.mean_zeta_curve)):.3e}  tv violations {result.violations}"
        )
        if cfg.env == "bounds-check":
            line += f"  negative improvements {result.negative_improvements}"
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
