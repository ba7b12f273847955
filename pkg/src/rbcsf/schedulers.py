"""Round-level client selection strategies.

All strategies share :class:`SchedulerState` and :func:`observe`; they differ
only in how a round's selection is made:

* ``rbcsf`` -- optimistic time estimates fed to the exact queue-weighted solver
* ``random`` -- uniform sample of the available clients
* ``fedcs`` -- every available client whose true expected time fits a deadline
* ``dirichlet`` -- weighted sample with weights drawn once from a Dirichlet
* ``clairvoyant`` -- the exact solver fed the true expected times
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from .environment import STRATEGY, STRATEGY_INIT, ConfigError, FleetState, substream
from .estimator import ArmEstimatorState, ConfidenceConfig, absorb_observation, alpha_schedule, batch_estimates
from .model import InvalidInputError, SelectionDecision, selection_count
from .queues import FairnessQueueSet
from .solver import SolverInput, solve_p4

logger = logging.getLogger(__name__)

KINDS = ("rbcsf", "random", "fedcs", "dirichlet", "clairvoyant")


@dataclass(frozen=True)
class StrategyConfig:
    kind: str
    name: str = ""
    V: float = 0.0
    deadline: float = 3.0
    gamma2: float = 1.0
    confidence: ConfidenceConfig = field(default_factory=ConfidenceConfig)
    beta: float = 0.15
    m: int = 8

    def __post_init__(self):
        if not self.name:
            object.__setattr__(self, "name", default_name(self))
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown strategy kind {self.kind!r}; expected one of {KINDS}")
        if not self.V >= 0:
            raise ConfigError(f"V must be >= 0, got {self.V}")
        if not self.deadline > 0:
            raise ConfigError(f"deadline must be > 0, got {self.deadline}")
        if not self.gamma2 > 0:
            raise ConfigError(f"gamma2 must be > 0, got {self.gamma2}")
        if not 0 < self.beta < 1:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "StrategyConfig":
        d = dict(d)
        conf = d.pop("confidence", None)
        if conf is not None:
            conf = dict(conf)
            if "lambda" in conf:
                conf["lam"] = conf.pop("lambda")
            try:
                d["confidence"] = ConfidenceConfig(**conf)
            except (TypeError, InvalidInputError) as exc:
                raise ConfigError(f"bad confidence block: {exc}") from None
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        c = self.confidence
        return {
            "kind": self.kind,
            "name": self.name,
            "V": self.V,
            "deadline": self.deadline,
            "gamma2": self.gamma2,
            "beta": self.beta,
            "m": self.m,
            "confidence": {
                "mode": c.mode,
                "alpha_fixed": c.alpha_fixed,
                "lambda": c.lam,
                "R": c.R,
                "S_bound": c.S_bound,
                "L_bound": c.L_bound,
                "delta": c.delta,
            },
        }


def _fmt(v: float) -> str:
    return f"{v:g}"


def default_name(cfg: StrategyConfig) -> str:
    if cfg.kind in ("rbcsf", "clairvoyant"):
        return f"{cfg.kind}-V{_fmt(cfg.V)}"
    if cfg.kind == "fedcs":
        return f"fedcs-{_fmt(cfg.deadline)}"
    if cfg.kind == "dirichlet":
        return f"dirichlet-{_fmt(cfg.gamma2)}"
    return cfg.kind


@dataclass
class SchedulerState:
    """Mutable per-run scheduler state.

    ``H`` (N, 3, 3) and ``b`` (N, 3) stack the per-client ridge statistics.
    """

    config: StrategyConfig
    queues: FairnessQueueSet
    H: np.ndarray
    b: np.ndarray
    pull_counts: np.ndarray
    seed: int
    round: int = 0
    dirichlet_weights: Optional[np.ndarray] = None

    @property
    def n_clients(self) -> int:
        return len(self.pull_counts)

    def arm(self, n: int) -> ArmEstimatorState:
        return ArmEstimatorState(self.H[n].copy(), self.b[n].copy(), int(self.pull_counts[n]), self.config.confidence.lam)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "round": self.round,
            "seed": self.seed,
            "backlogs": self.queues.backlogs.tolist(),
            "arms": [self.arm(n).to_dict() for n in range(self.n_clients)],
            "dirichlet_weights": None if self.dirichlet_weights is None else self.dirichlet_weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SchedulerState":
        cfg = StrategyConfig.from_dict(d["config"])
        arms = [ArmEstimatorState.from_dict(a) for a in d["arms"]]
        weights = d.get("dirichlet_weights")
        return cls(
            config=cfg,
            queues=FairnessQueueSet(np.array(d["backlogs"], dtype=float), cfg.beta, int(d["round"])),
            H=np.stack([a.H for a in arms]),
            b=np.stack([a.b for a in arms]),
            pull_counts=np.array([a.pulls for a in arms], dtype=np.int64),
            seed=int(d["seed"]),
            round=int(d["round"]),
            dirichlet_weights=None if weights is None else np.array(weights, dtype=float),
        )


def resolve_confidence(cfg: StrategyConfig, fleet: FleetState) -> StrategyConfig:
    """Fill unset schedule-mode constants from the fleet's computed bounds."""
    c = cfg.confidence
    if c.mode != "schedule" or c.is_complete():
        return cfg
    c = replace(
        c,
        R=fleet.noise_scale if c.R is None else c.R,
        S_bound=fleet.S_bound if c.S_bound is None else c.S_bound,
        L_bound=fleet.L_bound if c.L_bound is None else c.L_bound,
    )
    return replace(cfg, confidence=c)


def init_state(cfg: StrategyConfig, n_clients: int, seed: int = 0) -> SchedulerState:
    lam = cfg.confidence.lam
    weights = None
    if cfg.kind == "dirichlet":
        raw = substream(seed, STRATEGY_INIT, 0).dirichlet(np.full(n_clients, cfg.gamma2))
        # tiny concentrations can underflow to exact zeros
        weights = np.maximum(raw, np.finfo(float).tiny)
        weights = weights / weights.sum()
    return SchedulerState(
        config=cfg,
        queues=FairnessQueueSet.zeros(n_clients, cfg.beta),
        H=np.tile(lam * np.eye(3), (n_clients, 1, 1)),
        b=np.zeros((n_clients, 3)),
        pull_counts=np.zeros(n_clients, dtype=np.int64),
        seed=int(seed),
        dirichlet_weights=weights,
    )


def _decision(state: SchedulerState, selected) -> SelectionDecision:
    return SelectionDecision(state.round + 1, frozenset(int(n) for n in selected), state.n_clients)


def rbcsf_estimates(state: SchedulerState, contexts: np.ndarray):
    """Optimistic times for every client this round.

    Returns ``(tau_bar, point, width, alpha)``.
    """
    alpha = alpha_schedule(state.config.confidence, state.round + 1)
    point, width = batch_estimates(state.H, state.b, contexts)
    tau_bar = np.maximum(point - alpha * width, 0.0)
    return tau_bar, point, width, alpha


def rotating_ranks(n_clients: int, round_index: int) -> np.ndarray:
    """Tie-break priority for ``round_index``: client ``(t - 1) mod N`` first, then ascending ids cyclically."""
    return (np.arange(n_clients) - (round_index - 1)) % n_clients


def _solve(state: SchedulerState, availability, times: np.ndarray, V: float) -> SelectionDecision:
    availability = np.asarray(availability)
    if not availability.any():
        return _decision(state, ())
    # a fixed id order would hand every backlog tie (mostly at Z = 0) to the same low ids
    ranks = rotating_ranks(state.n_clients, state.round + 1)
    out = solve_p4(SolverInput(times, state.queues.backlogs, availability, state.config.m, V, ranks))
    return _decision(state, out.selected)


def rbcsf_step(state: SchedulerState, availability, contexts: np.ndarray) -> SelectionDecision:
    tau_bar = rbcsf_estimates(state, contexts)[0]
    return _solve(state, availability, tau_bar, state.config.V)


def clairvoyant_step(state: SchedulerState, availability, contexts: np.ndarray, thetas: np.ndarray) -> SelectionDecision:
    """Same solver, but fed the true expected times."""
    times = np.einsum("ij,ij->i", contexts, thetas)
    return _solve(state, availability, times, state.config.V)


def random_step(state: SchedulerState, availability, rng: np.random.Generator) -> SelectionDecision:
    avail = np.flatnonzero(np.asarray(availability))
    k = selection_count(availability, state.config.m)
    if k == 0:
        return _decision(state, ())
    return _decision(state, rng.choice(avail, size=k, replace=False))


def fedcs_step(state: SchedulerState, availability, contexts: np.ndarray, thetas: np.ndarray, deadline: float) -> SelectionDecision:
    """Every available client whose true expected time is within the deadline (no cap)."""
    expected = np.einsum("ij,ij->i", contexts, thetas)
    ok = (np.asarray(availability) == 1) & (expected <= deadline)
    return _decision(state, np.flatnonzero(ok))


def dirichlet_step(state: SchedulerState, availability, rng: np.random.Generator) -> SelectionDecision:
    avail = np.flatnonzero(np.asarray(availability))
    k = selection_count(availability, state.config.m)
    if k == 0:
        return _decision(state, ())
    w = state.dirichlet_weights[avail]
    return _decision(state, rng.choice(avail, size=k, replace=False, p=w / w.sum()))


def strategy_rng(state: SchedulerState) -> np.random.Generator:
    return substream(state.seed, STRATEGY, state.round + 1)


def select(state: SchedulerState, availability, contexts: np.ndarray, fleet: FleetState) -> SelectionDecision:
    """Dispatch one round's selection to the configured strategy."""
    kind = state.config.kind
    if kind == "rbcsf":
        return rbcsf_step(state, availability, contexts)
    if kind == "clairvoyant":
        return clairvoyant_step(state, availability, contexts, fleet.thetas)
    if kind == "fedcs":
        return fedcs_step(state, availability, contexts, fleet.thetas, state.config.deadline)
    if kind == "random":
        return random_step(state, availability, strategy_rng(state))
    if kind == "dirichlet":
        return dirichlet_step(state, availability, strategy_rng(state))
    raise ConfigError(f"unknown strategy kind {kind!r}")


def observe(state: SchedulerState, decision: SelectionDecision, contexts: np.ndarray, realized_times: Mapping[int, float]) -> SchedulerState:
    """Close out a round: queue update for all clients, ridge update for the selected.

    Mutates and returns ``state``.
    """
    if set(realized_times) != set(decision.selected):
        raise InvalidInputError(
            f"realized times keyed by {sorted(realized_times)} but selection is {sorted(decision.selected)}"
        )
    state.queues = state.queues.update(decision)
    for n in decision.selected:
        arm = absorb_observation(state.arm(n), contexts[n], realized_times[n])
        state.H[n] = arm.H
        state.b[n] = arm.b
        state.pull_counts[n] = arm.pulls
    state.round = decision.round
    return state
