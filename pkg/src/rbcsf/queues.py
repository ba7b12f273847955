"""Virtual queues backing the long-term participation-rate constraint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SelectionDecision


class QueueStateError(RuntimeError):
    """Raised when a queue update is applied out of round order."""


@dataclass(frozen=True)
class FairnessQueueSet:
    """Per-client backlogs ``Z`` after ``round`` updates.

    Each backlog grows by ``beta`` every round and drains by one whenever its
    client is selected, clamped at zero.
    """

    backlogs: np.ndarray
    beta: float
    round: int = 0

    @classmethod
    def zeros(cls, n_clients: int, beta: float) -> "FairnessQueueSet":
        if not 0 < beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {beta}")
        return cls(np.zeros(n_clients), float(beta), 0)

    @property
    def n_clients(self) -> int:
        return len(self.backlogs)

    def update(self, decision: SelectionDecision) -> "FairnessQueueSet":
        if decision.round != self.round + 1:
            raise QueueStateError(
                f"queues are at round {self.round}; cannot apply decision for round {decision.round}"
            )
        return FairnessQueueSet(
            update_backlogs(self.backlogs, self.beta, decision.indicator),
            self.beta,
            decision.round,
        )


def update_backlogs(backlogs: np.ndarray, beta: float, indicator: np.ndarray) -> np.ndarray:
    return np.maximum(backlogs + beta - indicator, 0.0)


def lyapunov_value(queues: FairnessQueueSet) -> float:
    return 0.5 * float(np.dot(queues.backlogs, queues.backlogs))


def gamma_constant(n_clients: int, beta: float) -> float:
    """Constant term of the one-round drift-plus-cost bound."""
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    return n_clients * (1.0 + beta**2) / 2.0


def mean_rate_metric(queues: FairnessQueueSet) -> float:
    """Largest backlog divided by elapsed rounds; tends to 0 under stability."""
    if queues.round < 1:
        raise ValueError("mean-rate metric needs at least one elapsed round")
    return float(np.max(queues.backlogs)) / queues.round


def square_bound_slack(z: np.ndarray, z_next: np.ndarray, beta: float, x: np.ndarray) -> np.ndarray:
    """Per-client slack of ``(z'^2 - z^2)/2 <= (1 + beta^2)/2 + z (beta - x)``.

    Nonnegative entries mean the bound holds.
    """
    lhs = 0.5 * (z_next**2 - z**2)
    rhs = 0.5 * (1.0 + beta**2) + z * (beta - x)
    return rhs - lhs
