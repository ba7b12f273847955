"""Synthetic heterogeneous client fleet.

Every random draw comes from a generator keyed by ``(seed, purpose, round)``,
so two runs with the same seed see the same availability, capacities,
bandwidths and noise regardless of which strategy drives them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .model import ClientProfile, SelectionDecision, spectral_efficiency

# generator purposes; the integer is part of the seed-sequence spawn key
AVAILABILITY = 1
CAPACITY = 2
BANDWIDTH = 3
NOISE = 4
STRATEGY = 5
STRATEGY_INIT = 6


class ConfigError(ValueError):
    """Invalid experiment or environment configuration."""


@dataclass(frozen=True)
class ClientClass:
    count: int
    tau_base: float
    tau_cold: float
    snr: float


DEFAULT_CLASSES = (
    ClientClass(10, 1.0, 1.0, 1000.0),
    ClientClass(10, 2.0, 1.0, 100.0),
    ClientClass(10, 3.0, 1.0, 10.0),
    ClientClass(10, 4.0, 1.0, 1.0),
)


@dataclass(frozen=True)
class EnvironmentConfig:
    n_clients: int = 40
    classes: tuple = DEFAULT_CLASSES
    bandwidth_range: tuple = (2.0, 4.0)  # MHz
    model_size: float = 20.0  # Mb
    capacity_range: tuple = (0.5, 2.0)
    availability_p: float = 0.8
    noise: str = "paper_uniform"
    log_base: float = 2.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_clients < 1:
            raise ConfigError("n_clients must be >= 1")
        if not self.classes:
            raise ConfigError("class table is empty")
        if sum(c.count for c in self.classes) != self.n_clients:
            raise ConfigError(
                f"class counts sum to {sum(c.count for c in self.classes)}, expected {self.n_clients}"
            )
        for c in self.classes:
            if c.count < 0 or c.tau_base <= 0 or c.tau_cold < 0 or c.snr <= 0:
                raise ConfigError(f"malformed class row {c}")
        for name in ("bandwidth_range", "capacity_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"{name} must be a nonempty positive interval, got {(lo, hi)}")
        if self.model_size <= 0:
            raise ConfigError("model_size must be > 0")
        if not 0 < self.availability_p <= 1:
            raise ConfigError("availability_p must lie in (0, 1]")
        if self.noise not in ("paper_uniform", "none"):
            raise ConfigError(f"unknown noise mode {self.noise!r}")
        if self.log_base <= 1:
            raise ConfigError("log_base must be > 1")

    @classmethod
    def from_dict(cls, d: Mapping) -> "EnvironmentConfig":
        d = dict(d)
        if "classes" in d:
            try:
                d["classes"] = tuple(ClientClass(**row) for row in d["classes"])
            except TypeError as exc:
                raise ConfigError(f"malformed class table: {exc}") from None
        for key in ("bandwidth_range", "capacity_range"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {
            "n_clients": self.n_clients,
            "classes": [vars(c).copy() for c in self.classes],
            "bandwidth_range": list(self.bandwidth_range),
            "model_size": self.model_size,
            "capacity_range": list(self.capacity_range),
            "availability_p": self.availability_p,
            "noise": self.noise,
            "log_base": self.log_base,
            "seed": self.seed,
        }


@dataclass
class FleetState:
    config: EnvironmentConfig
    profiles: tuple
    thetas: np.ndarray  # (N, 3) hidden coefficients
    last_participation: np.ndarray
    seed: int
    round: int = 0
    S_bound: float = 0.0
    L_bound: float = 0.0
    K_bound: float = 0.0

    @property
    def n_clients(self) -> int:
        return len(self.profiles)

    @property
    def class_ids(self) -> np.ndarray:
        return np.array([p.class_id for p in self.profiles])

    @property
    def noise_scale(self) -> float:
        """Worst-case sub-Gaussian scale of the noise (0 when noiseless)."""
        return self.K_bound if self.config.noise == "paper_uniform" else 0.0


def substream(seed: int, purpose: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose, round_index)))


def context_bounds(config: EnvironmentConfig) -> tuple:
    """Largest possible context norm and largest expected exchange time."""
    inv_cap_max = 1.0 / config.capacity_range[0]
    upload_max = config.model_size / config.bandwidth_range[0]
    L = math.sqrt(inv_cap_max**2 + 1.0 + upload_max**2)
    K = max(
        inv_cap_max * c.tau_base + c.tau_cold + upload_max / spectral_efficiency(c.snr, config.log_base)
        for c in config.classes
        if c.count > 0
    )
    return L, K


def build_fleet(config: EnvironmentConfig, seed: int | None = None) -> FleetState:
    config.validate()
    profiles = []
    for class_id, c in enumerate(config.classes, start=1):
        eta = spectral_efficiency(c.snr, config.log_base)
        profiles.extend(ClientProfile(c.tau_base, c.tau_cold, eta, class_id) for _ in range(c.count))
    thetas = np.array([p.theta for p in profiles])
    L, K = context_bounds(config)
    return FleetState(
        config=config,
        profiles=tuple(profiles),
        thetas=thetas,
        last_participation=np.zeros(len(profiles), dtype=np.int64),
        seed=config.seed if seed is None else int(seed),
        S_bound=float(np.max(np.linalg.norm(thetas, axis=1))),
        L_bound=L,
        K_bound=K,
    )


def sample_round(fleet: FleetState, round_index: int):
    """Availability flags and (N, 3) contexts for ``round_index`` (1-based)."""
    cfg = fleet.config
    n = fleet.n_clients
    availability = (substream(fleet.seed, AVAILABILITY, round_index).random(n) < cfg.availability_p).astype(np.int64)
    mu = substream(fleet.seed, CAPACITY, round_index).uniform(*cfg.capacity_range, size=n)
    bandwidth = substream(fleet.seed, BANDWIDTH, round_index).uniform(*cfg.bandwidth_range, size=n)
    contexts = np.empty((n, 3))
    contexts[:, 0] = 1.0 / mu
    contexts[:, 1] = 1 - fleet.last_participation
    contexts[:, 2] = cfg.model_size / bandwidth
    return availability, contexts


def noise_multipliers(fleet: FleetState, round_index: int) -> np.ndarray:
    """Per-client ``u`` in the open interval (-1, 1); realized time is ``a (1 + u)``."""
    u = 2.0 * substream(fleet.seed, NOISE, round_index).random(fleet.n_clients) - 1.0
    return np.maximum(u, np.nextafter(-1.0, 0.0))


def realize_times(fleet: FleetState, decision: SelectionDecision, contexts: np.ndarray) -> dict:
    """Observed exchange time for each selected client; advances the cold-start flags."""
    selected = sorted(decision.selected)
    times = {}
    if selected:
        idx = np.array(selected)
        mean = np.einsum("ij,ij->i", contexts[idx], fleet.thetas[idx])
        if fleet.config.noise == "paper_uniform":
            u = noise_multipliers(fleet, decision.round)[idx]
            values = mean * (1.0 + u)
        else:
            values = mean
        times = {int(n): float(v) for n, v in zip(selected, values)}
    fleet.last_participation = decision.indicator
    fleet.round = decision.round
    return times


def true_expected_times(fleet: FleetState, contexts: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", contexts, fleet.thetas)
