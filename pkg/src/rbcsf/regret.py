"""Empirical time-average regret and its theoretical upper bound.

Regret here is measured against the clairvoyant per-round policy (the same
solver fed true expected times), run on common random numbers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .environment import ConfigError

REGRET_LABEL = "regret vs. clairvoyant per-round policy"


@dataclass(frozen=True)
class RegretConstants:
    gamma: float  # N (1 + beta^2) / 2
    V: float
    lam: float
    L: float
    S: float
    R: float
    K: float
    delta: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RegretTrace:
    f_alg: np.ndarray
    f_ref: np.ndarray
    constants: RegretConstants | None = None

    def __post_init__(self):
        self.f_alg = np.asarray(self.f_alg, dtype=float)
        self.f_ref = np.asarray(self.f_ref, dtype=float)
        if self.f_alg.shape != self.f_ref.shape:
            raise ValueError("algorithm and reference traces must have the same length")

    def __len__(self) -> int:
        return len(self.f_alg)

    def running_average(self) -> np.ndarray:
        """``R(t)`` for every ``t = 1..len``."""
        diff = self.f_alg - self.f_ref
        return np.cumsum(diff) / np.arange(1, len(diff) + 1)


def time_average_regret(trace: RegretTrace, T: int) -> float:
    if T < 1:
        raise ValueError("T must be >= 1")
    if T > len(trace):
        raise ValueError(f"T={T} exceeds trace length {len(trace)}")
    return float(np.mean(trace.f_alg[:T] - trace.f_ref[:T]))


def zeta(constants: RegretConstants, T: int) -> float:
    c = constants
    width = 2.0 * c.R * math.sqrt(3.0 * math.log((1.0 + T * c.L**2 / c.lam) / c.delta)) + math.sqrt(c.lam) * c.S
    return max(c.K, 1.0) * max(width, 1.0)


def regret_bound(constants: RegretConstants, T: int) -> float:
    """``Gamma / V + zeta_T * sqrt(6 log(1 + T L^2 / (3 lambda)) / T)``."""
    if constants is None:
        raise ConfigError("regret bound needs the run constants")
    c = constants
    for name in ("gamma", "V", "lam", "L", "S", "K", "delta"):
        value = getattr(c, name)
        if value is None or not value > 0:
            raise ConfigError(f"regret bound constant {name} must be positive, got {value}")
    if c.R is None or c.R < 0:
        raise ConfigError("regret bound constant R must be >= 0")
    if T < 1:
        raise ValueError("T must be >= 1")
    return c.gamma / c.V + zeta(c, T) * math.sqrt(6.0 * math.log(1.0 + T * c.L**2 / (3.0 * c.lam)) / T)


def read_round_spans(path) -> np.ndarray:
    """The ``round_span`` column of a per-round CSV, ordered by round."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: int(r["round"]))
    return np.array([float(r["round_span"]) for r in rows])


def trace_from_csvs(alg_csv, ref_csv, constants: RegretConstants | None = None) -> RegretTrace:
    return RegretTrace(read_round_spans(alg_csv), read_round_spans(ref_csv), constants)
