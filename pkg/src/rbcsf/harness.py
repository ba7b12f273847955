"""Experiment execution: single runs, sweeps, solver verification and regret runs.

Output layout under the output directory::

    <strategy>/seed-<n>/rounds.csv      one row per round
    <strategy>/seed-<n>/queues.csv      backlog of every client per round
    <strategy>/seed-<n>/pulls.csv       pull count and selection rate per client
    <strategy>/seed-<n>/summary.json
    comparison.csv, medians.csv, cumulative_time_median.csv, queue_mean_median.csv   (sweep)
    regret_summary.json                 (regret)
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .environment import (
    ConfigError,
    EnvironmentConfig,
    FleetState,
    build_fleet,
    realize_times,
    sample_round,
)
from .model import RoundRecord, check_feasible, round_span
from .queues import gamma_constant
from .regret import REGRET_LABEL, RegretConstants, regret_bound, time_average_regret, trace_from_csvs
from .schedulers import SchedulerState, StrategyConfig, init_state, observe, resolve_confidence, select
from .solver import SolverInput, check_output, solve_p4, solve_p4_bruteforce

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
OUTPUT_ENV_VAR = "RBCSF_OUTPUT_DIR"
EMIT_KINDS = ("per_round_csv", "summary_json", "pull_counts_csv", "queue_trace_csv")
ROUND_COLUMNS = ("round", "n_available", "n_selected", "selected", "round_span", "cumulative_time", "max_z", "mean_z")


def default_strategies() -> tuple:
    return (
        StrategyConfig("rbcsf", V=1.0),
        StrategyConfig("rbcsf", V=10.0),
        StrategyConfig("rbcsf", V=100.0),
        StrategyConfig("random"),
        StrategyConfig("fedcs", deadline=3.0),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    strategies: tuple = field(default_factory=default_strategies)
    horizon: int = 500
    seeds: tuple = tuple(range(10))
    outputs: str = "runs"
    emit: tuple = EMIT_KINDS
    regret_checkpoints: tuple = (200, 500, 1000, 2000)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        names = [s.name for s in self.strategies]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"duplicate strategy names: {dupes}")
        unknown = set(self.emit) - set(EMIT_KINDS)
        if unknown:
            raise ConfigError(f"unknown emit kinds: {sorted(unknown)}")
        self.environment.validate()

    def strategy(self, name: str) -> StrategyConfig:
        for s in self.strategies:
            if s.name == name:
                return s
        raise ConfigError(f"no strategy named {name!r}; have {[s.name for s in self.strategies]}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {"environment", "strategies", "horizon", "seeds", "outputs", "emit", "regret_checkpoints"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        kwargs = {}
        if "environment" in d:
            kwargs["environment"] = EnvironmentConfig.from_dict(d["environment"])
        if "strategies" in d:
            kwargs["strategies"] = tuple(s for raw in d["strategies"] for s in _expand_strategy(raw))
        if "horizon" in d:
            kwargs["horizon"] = int(d["horizon"])
        if "seeds" in d:
            seeds = d["seeds"]
            kwargs["seeds"] = tuple(range(seeds)) if isinstance(seeds, int) else tuple(int(s) for s in seeds)
        for key in ("outputs",):
            if key in d:
                kwargs[key] = str(d[key])
        for key in ("emit", "regret_checkpoints"):
            if key in d:
                kwargs[key] = tuple(d[key])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "environment": self.environment.to_dict(),
            "strategies": [s.to_dict() for s in self.strategies],
            "horizon": self.horizon,
            "seeds": list(self.seeds),
            "outputs": self.outputs,
            "emit": list(self.emit),
            "regret_checkpoints": list(self.regret_checkpoints),
        }


def _expand_strategy(raw: dict):
    """A strategy entry whose ``V`` is a list expands to one strategy per value."""
    if not isinstance(raw, dict):
        raise ConfigError(f"strategy entries must be objects, got {raw!r}")
    if isinstance(raw.get("V"), list):
        base = {k: v for k, v in raw.items() if k not in ("V", "name")}
        prefix = raw.get("name")
        for v in raw["V"]:
            entry = dict(base, V=float(v))
            if prefix:
                entry["name"] = f"{prefix}-V{v:g}"
            yield StrategyConfig.from_dict(entry)
    else:
        yield StrategyConfig.from_dict(raw)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return ExperimentConfig.from_dict(raw)


def output_root(config: ExperimentConfig) -> Path:
    return Path(os.environ.get(OUTPUT_ENV_VAR) or config.outputs)


def ensure_writable(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {path} is not writable: {exc}") from None
    return path


# ---------------------------------------------------------------------------
# Simulation loop
# ---------------------------------------------------------------------------


class Simulation:
    """One strategy driving one seeded fleet, round by round."""

    def __init__(self, environment: EnvironmentConfig, strategy: StrategyConfig, seed: int):
        self.fleet: FleetState = build_fleet(environment, seed)
        self.strategy = resolve_confidence(strategy, self.fleet)
        self.state: SchedulerState = init_state(self.strategy, self.fleet.n_clients, seed)
        self.seed = int(seed)
        self.cumulative_time = 0.0
        self.rows: list = []
        self.queue_rows: list = []
        self.empty_rounds = 0
        self.on_round: Optional[Callable] = None

    @property
    def round(self) -> int:
        return self.state.round

    def step(self) -> RoundRecord:
        t = self.state.round + 1
        availability, contexts = sample_round(self.fleet, t)
        decision = select(self.state, availability, contexts, self.fleet)
        check_feasible(decision, availability, self.strategy.m, capped=self.strategy.kind != "fedcs")
        if self.on_round is not None:
            self.on_round(self, availability, contexts, decision)
        times = realize_times(self.fleet, decision, contexts)
        span = round_span(times)
        observe(self.state, decision, contexts, times)

        self.cumulative_time += span
        if not decision.selected:
            self.empty_rounds += 1
        z = self.state.queues.backlogs
        self.rows.append(
            (
                t,
                int(availability.sum()),
                len(decision.selected),
                " ".join(str(n) for n in sorted(decision.selected)),
                span,
                self.cumulative_time,
                float(z.max()),
                float(z.mean()),
            )
        )
        self.queue_rows.append(z.copy())
        return RoundRecord(t, availability, contexts, decision, times, span)

    def run(self, rounds: int) -> "Simulation":
        for _ in range(rounds):
            self.step()
        return self

    def snapshot(self) -> dict:
        """Between-round state, enough to resume with identical results."""
        return {
            "schema_version": SCHEMA_VERSION,
            "environment": self.fleet.config.to_dict(),
            "seed": self.seed,
            "scheduler": self.state.to_dict(),
            "last_participation": self.fleet.last_participation.tolist(),
            "cumulative_time": self.cumulative_time,
            "empty_rounds": self.empty_rounds,
            "rows": [list(r) for r in self.rows],
            "queue_rows": [q.tolist() for q in self.queue_rows],
        }

    @classmethod
    def from_snapshot(cls, snap: dict) -> "Simulation":
        env = EnvironmentConfig.from_dict(snap["environment"])
        state = SchedulerState.from_dict(snap["scheduler"])
        sim = cls(env, state.config, snap["seed"])
        sim.state = state
        sim.fleet.last_participation = np.array(snap["last_participation"], dtype=np.int64)
        sim.fleet.round = state.round
        sim.cumulative_time = float(snap["cumulative_time"])
        sim.empty_rounds = int(snap["empty_rounds"])
        sim.rows = [tuple(r) for r in snap["rows"]]
        sim.queue_rows = [np.array(q) for q in snap["queue_rows"]]
        return sim


@dataclass
class RunSummary:
    strategy: str
    kind: str
    V: float
    seed: int
    horizon: int
    beta: float
    cumulative_time: float
    empty_rounds: int
    max_z: float
    mean_z: float
    max_z_over_t: float
    selection_rates: list
    pull_counts: list
    pull_histogram: dict
    fairness_violations: list
    regret: Optional[dict] = None

    @property
    def min_rate(self) -> float:
        return min(self.selection_rates)

    @property
    def max_rate(self) -> float:
        return max(self.selection_rates)

    @property
    def pull_ratio(self) -> float:
        lo = min(self.pull_counts)
        return math.inf if lo == 0 else max(self.pull_counts) / lo

    def metrics(self) -> dict:
        return {
            "cumulative_time": self.cumulative_time,
            "max_z": self.max_z,
            "mean_z": self.mean_z,
            "max_z_over_t": self.max_z_over_t,
            "min_rate": self.min_rate,
            "max_rate": self.max_rate,
            "pull_ratio": self.pull_ratio,
            "empty_rounds": float(self.empty_rounds),
        }

    def to_dict(self) -> dict:
        ratio = self.pull_ratio
        return {
            "schema_version": SCHEMA_VERSION,
            "strategy": self.strategy,
            "kind": self.kind,
            "V": self.V,
            "seed": self.seed,
            "horizon": self.horizon,
            "cumulative_time": self.cumulative_time,
            "empty_rounds": self.empty_rounds,
            "queues": {"max": self.max_z, "mean": self.mean_z, "max_over_T": self.max_z_over_t},
            "fairness": {
                "beta": self.beta,
                "min_rate": self.min_rate,
                "max_rate": self.max_rate,
                "violations": self.fairness_violations,
            },
            # JSON has no infinity; a never-selected client gives a null ratio
            "pull_ratio": None if math.isinf(ratio) else ratio,
            "pull_counts": self.pull_counts,
            "pull_histogram": self.pull_histogram,
            "selection_rates": self.selection_rates,
            "regret": self.regret,
        }


@dataclass
class RunResult:
    summary: RunSummary
    simulation: Simulation

    @property
    def cumulative_series(self) -> np.ndarray:
        return np.array([r[5] for r in self.simulation.rows])

    @property
    def mean_backlog_series(self) -> np.ndarray:
        return np.array([r[7] for r in self.simulation.rows])

    @property
    def round_spans(self) -> np.ndarray:
        return np.array([r[4] for r in self.simulation.rows])


def summarize(sim: Simulation) -> RunSummary:
    T = sim.round
    pulls = sim.state.pull_counts
    z = sim.state.queues.backlogs
    beta = sim.strategy.beta
    rates = pulls / T
    counts, edges = np.histogram(pulls, bins=10)
    # clients whose rate falls short of beta: possible when a client is rarely available
    violations = [int(n) for n in np.flatnonzero(rates < beta)]
    if violations:
        logger.info("%s seed %d: %d clients below the target rate", sim.strategy.name, sim.seed, len(violations))
    return RunSummary(
        strategy=sim.strategy.name,
        kind=sim.strategy.kind,
        V=sim.strategy.V,
        seed=sim.seed,
        horizon=T,
        beta=beta,
        cumulative_time=sim.cumulative_time,
        empty_rounds=sim.empty_rounds,
        max_z=float(z.max()),
        mean_z=float(z.mean()),
        max_z_over_t=float(z.max()) / T,
        selection_rates=[float(r) for r in rates],
        pull_counts=[int(p) for p in pulls],
        pull_histogram={"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]},
        fairness_violations=violations,
    )


def run_dir(root: Path, strategy: str, seed: int) -> Path:
    return Path(root) / strategy / f"seed-{seed}"


def write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_run_files(sim: Simulation, summary: RunSummary, directory: Path, emit: Sequence[str]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    if "per_round_csv" in emit:
        with open(directory / "rounds.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(ROUND_COLUMNS)
            w.writerows(sim.rows)
    if "queue_trace_csv" in emit:
        with open(directory / "queues.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round"] + [f"z_{n}" for n in range(sim.fleet.n_clients)])
            for t, z in enumerate(sim.queue_rows, start=1):
                w.writerow([t] + [float(v) for v in z])
    if "pull_counts_csv" in emit:
        with open(directory / "pulls.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["client", "class_id", "pulls", "selection_rate"])
            for n, (cid, p, r) in enumerate(zip(sim.fleet.class_ids, summary.pull_counts, summary.selection_rates)):
                w.writerow([n, int(cid), p, r])
    if "summary_json" in emit:
        write_json(directory / "summary.json", summary.to_dict())


def run_experiment(
    config: ExperimentConfig,
    strategy: StrategyConfig | str,
    seed: int,
    out_dir: Optional[Path] = None,
    horizon: Optional[int] = None,
) -> RunResult:
    """Run ``horizon`` rounds (default: the config's) and write the run's files.

    Files are skipped when ``out_dir`` is None.
    """
    if isinstance(strategy, str):
        strategy = config.strategy(strategy)
    T = config.horizon if horizon is None else horizon
    if T < 1:
        raise ConfigError(f"horizon must be >= 1, got {T}")
    sim = Simulation(config.environment, strategy, seed).run(T)
    summary = summarize(sim)
    if out_dir is not None:
        write_run_files(sim, summary, run_dir(out_dir, strategy.name, seed), config.emit)
    return RunResult(summary, sim)


def _run_job(args):
    config, strategy, seed, out_dir = args
    return run_experiment(config, strategy, seed, out_dir)


def median_series(series: list) -> np.ndarray:
    return np.median(np.vstack(series), axis=0)


def sweep(config: ExperimentConfig, out_dir: Optional[Path] = None, jobs: int = 1) -> list:
    """Every strategy against every seed; seeds share environment draws across strategies."""
    tasks = [(config, s, seed, out_dir) for s in config.strategies for seed in config.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, tasks))
    else:
        results = [_run_job(t) for t in tasks]
    if out_dir is not None:
        write_sweep_files(config, results, Path(out_dir))
    return results


def write_sweep_files(config: ExperimentConfig, results: list, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "seed", "metric", "value"])
        for r in results:
            for metric, value in r.summary.metrics().items():
                w.writerow([r.summary.strategy, r.summary.seed, metric, value])

    by_strategy = {s.name: [r for r in results if r.summary.strategy == s.name] for s in config.strategies}
    with open(out_dir / "medians.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "metric", "median"])
        for name, runs in by_strategy.items():
            for metric in runs[0].summary.metrics():
                w.writerow([name, metric, float(np.median([r.summary.metrics()[metric] for r in runs]))])

    names = list(by_strategy)
    for filename, attr in (("cumulative_time_median.csv", "cumulative_series"), ("queue_mean_median.csv", "mean_backlog_series")):
        columns = [median_series([getattr(r, attr) for r in by_strategy[n]]) for n in names]
        with open(out_dir / filename, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round"] + names)
            for t in range(len(columns[0])):
                w.writerow([t + 1] + [float(c[t]) for c in columns])


# ---------------------------------------------------------------------------
# Solver verification
# ---------------------------------------------------------------------------


@dataclass
class VerificationReport:
    trials: int
    mismatches: int
    first_counterexample: Optional[dict]
    elapsed: float

    @property
    def passed(self) -> bool:
        return self.mismatches == 0

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "mismatches": self.mismatches,
            "passed": self.passed,
            "first_counterexample": self.first_counterexample,
            "elapsed_seconds": self.elapsed,
        }


def random_instance(rng: np.random.Generator, max_clients: int = 12, max_m: int = 5) -> SolverInput:
    n = int(rng.integers(1, max_clients + 1))
    while True:
        availability = (rng.random(n) < 0.8).astype(np.int64)
        if availability.any():
            break
    return SolverInput(
        tau_bar=rng.uniform(0, 10, n),
        backlogs=rng.uniform(0, 10, n),
        availability=availability,
        m=int(rng.integers(1, max_m + 1)),
        V=float(rng.choice([0.0, 1.0, 50.0])),
    )


def verify_solver(trials: int, seed: int = 0, solver: Callable = solve_p4) -> VerificationReport:
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    mismatches = 0
    first = None
    for i in range(trials):
        inp = random_instance(rng)
        got = solver(inp)
        want = solve_p4_bruteforce(inp)
        problem = None
        try:
            check_output(inp, got)
        except AssertionError as exc:
            problem = str(exc)
        if problem is None and got.objective != want.objective:
            problem = "objective mismatch"
        if problem is not None:
            mismatches += 1
            if first is None:
                first = {
                    "trial": i,
                    "problem": problem,
                    "tau_bar": inp.tau_bar.tolist(),
                    "backlogs": inp.backlogs.tolist(),
                    "availability": inp.availability.tolist(),
                    "m": inp.m,
                    "V": inp.V,
                    "solver_selected": sorted(got.selected),
                    "solver_objective": got.objective,
                    "oracle_selected": sorted(want.selected),
                    "oracle_objective": want.objective,
                }
    return VerificationReport(trials, mismatches, first, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# Regret against the clairvoyant policy
# ---------------------------------------------------------------------------


def regret_constants(sim: Simulation) -> RegretConstants:
    fleet = sim.fleet
    cfg = sim.strategy
    return RegretConstants(
        gamma=gamma_constant(fleet.n_clients, cfg.beta),
        V=cfg.V,
        lam=cfg.confidence.lam,
        L=fleet.L_bound,
        S=fleet.S_bound,
        R=fleet.noise_scale,
        K=fleet.K_bound,
        delta=cfg.confidence.delta,
    )


def clairvoyant_twin(strategy: StrategyConfig) -> StrategyConfig:
    return StrategyConfig("clairvoyant", name=f"clairvoyant-V{strategy.V:g}", V=strategy.V, beta=strategy.beta, m=strategy.m)


def regret_run(config: ExperimentConfig, strategy: StrategyConfig, seed: int, out_dir: Path) -> dict:
    """Run ``strategy`` and its clairvoyant twin on one seed and compute regret from their CSVs."""
    alg = run_experiment(config, strategy, seed, out_dir)
    ref = run_experiment(config, clairvoyant_twin(strategy), seed, out_dir)
    constants = regret_constants(alg.simulation)
    trace = trace_from_csvs(
        run_dir(out_dir, strategy.name, seed) / "rounds.csv",
        run_dir(out_dir, ref.summary.strategy, seed) / "rounds.csv",
        constants,
    )
    checkpoints = sorted({t for t in config.regret_checkpoints if t <= len(trace)} | {len(trace)})
    return {
        "seed": seed,
        "regret": {str(t): time_average_regret(trace, t) for t in checkpoints},
        "constants": constants.to_dict(),
    }


def regret_report(config: ExperimentConfig, out_dir: Path) -> dict:
    report = {"schema_version": SCHEMA_VERSION, "label": REGRET_LABEL, "horizon": config.horizon, "strategies": {}}
    for strategy in config.strategies:
        if strategy.kind != "rbcsf" or strategy.V <= 0:
            continue
        per_seed = [regret_run(config, strategy, seed, out_dir) for seed in config.seeds]
        checkpoints = list(per_seed[0]["regret"])
        constants = RegretConstants(**per_seed[0]["constants"])
        report["strategies"][strategy.name] = {
            "V": strategy.V,
            "constants": constants.to_dict(),
            "per_seed": per_seed,
            "median": {t: float(np.median([s["regret"][t] for s in per_seed])) for t in checkpoints},
            "bound": {t: regret_bound(constants, int(t)) for t in checkpoints},
        }
    write_json(out_dir / "regret_summary.json", report)
    return report
