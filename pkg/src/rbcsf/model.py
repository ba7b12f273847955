"""Shared domain types and the primitive formulas of the system model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an operation receives values outside its domain."""


@dataclass(frozen=True)
class ClientProfile:
    """Static, hidden coefficients of one client.

    ``eta`` is the spectral efficiency log(1 + SNR); the coefficient vector
    seen by the estimator is ``[tau_base, tau_cold, 1/eta]``.
    """

    tau_base: float
    tau_cold: float
    eta: float
    class_id: int = 0

    def __post_init__(self):
        if not self.tau_base > 0:
            raise InvalidInputError(f"tau_base must be > 0, got {self.tau_base}")
        if not self.tau_cold >= 0:
            raise InvalidInputError(f"tau_cold must be >= 0, got {self.tau_cold}")
        if not self.eta > 0:
            raise InvalidInputError(f"eta must be > 0, got {self.eta}")

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.tau_base, self.tau_cold, 1.0 / self.eta])


@dataclass(frozen=True)
class ClientContext:
    """Per-round observable features ``[1/mu, s, M/B]`` of one client."""

    inv_capacity: float
    cold_flag: int
    upload_ratio: float

    def __post_init__(self):
        if not self.inv_capacity > 0:
            raise InvalidInputError(f"inv_capacity must be > 0, got {self.inv_capacity}")
        if self.cold_flag not in (0, 1):
            raise InvalidInputError(f"cold_flag must be 0 or 1, got {self.cold_flag}")
        if not self.upload_ratio > 0:
            raise InvalidInputError(f"upload_ratio must be > 0, got {self.upload_ratio}")

    @classmethod
    def from_row(cls, row) -> "ClientContext":
        return cls(float(row[0]), int(round(float(row[1]))), float(row[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.inv_capacity, float(self.cold_flag), self.upload_ratio])


@dataclass(frozen=True)
class SelectionDecision:
    """Clients chosen for one round (0-based ids)."""

    round: int
    selected: frozenset
    n_clients: int

    @property
    def indicator(self) -> np.ndarray:
        x = np.zeros(self.n_clients, dtype=np.int64)
        if self.selected:
            x[sorted(self.selected)] = 1
        return x

    @classmethod
    def empty(cls, round: int, n_clients: int) -> "SelectionDecision":
        return cls(round, frozenset(), n_clients)


@dataclass
class RoundRecord:
    round: int
    availability: np.ndarray
    contexts: np.ndarray
    decision: SelectionDecision
    realized_times: dict = field(default_factory=dict)
    round_span: float = 0.0


def round_span(realized_times: Mapping[int, float]) -> float:
    """Wall time of a synchronous round: the slowest selected client.

    An empty map is a skipped round and spans 0 seconds.
    """
    if not realized_times:
        return 0.0
    values = list(realized_times.values())
    for v in values:
        if not v >= 0:
            raise InvalidInputError(f"realized time must be >= 0, got {v}")
    return float(max(values))


def expected_exchange_time(context: ClientContext, profile: ClientProfile) -> float:
    return float(context.as_array() @ profile.theta)


def expected_times(contexts: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """Row-wise ``c_n . theta_n`` for stacked (N, 3) contexts and coefficients."""
    return np.einsum("ij,ij->i", contexts, thetas)


def selection_count(availability: Iterable[int], m: int) -> int:
    if m < 1:
        raise InvalidInputError(f"m must be >= 1, got {m}")
    return int(min(m, int(np.sum(np.asarray(availability, dtype=np.int64)))))


def check_feasible(decision: SelectionDecision, availability, m: int, capped: bool = True) -> None:
    """Assert the count and availability constraints on a decision.

    ``capped=False`` skips the cohort-size check (deadline-based selection
    has no fixed cohort size).
    """
    avail = np.asarray(availability, dtype=np.int64)
    expected = selection_count(avail, m)
    if capped and len(decision.selected) != expected:
        raise AssertionError(
            f"round {decision.round}: selected {len(decision.selected)} clients, expected {expected}"
        )
    for n in decision.selected:
        if avail[n] != 1:
            raise AssertionError(f"round {decision.round}: client {n} selected while unavailable")


def spectral_efficiency(snr: float, log_base: float = 2.0) -> float:
    if log_base == 2.0:
        return math.log2(1.0 + snr)
    if log_base == math.e:
        return math.log1p(snr)
    return math.log(1.0 + snr) / math.log(log_base)
