"""Per-client ridge regression of exchange time and its optimistic estimate.

Each arm keeps ``H = lambda*I + sum c c^T`` and ``b = sum tau c`` over the
rounds it was selected. The optimistic (lower-confidence) estimate is
``max(c . theta_hat - alpha * sqrt(c^T H^-1 c), 0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import InvalidInputError

DIM = 3


@dataclass(frozen=True)
class ArmEstimatorState:
    H: np.ndarray
    b: np.ndarray
    pulls: int
    lam: float

    def to_dict(self) -> dict:
        return {
            "H": self.H.tolist(),
            "b": self.b.tolist(),
            "pulls": self.pulls,
            "lambda": self.lam,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArmEstimatorState":
        return cls(
            np.array(d["H"], dtype=float),
            np.array(d["b"], dtype=float),
            int(d["pulls"]),
            float(d["lambda"]),
        )


@dataclass(frozen=True)
class ConfidenceConfig:
    """Exploration width settings.

    ``mode="fixed"`` uses ``alpha_fixed`` every round. ``mode="schedule"``
    grows alpha with the round index from the noise scale ``R``, the
    coefficient bound ``S_bound``, the context bound ``L_bound`` and the
    failure probability ``delta``. Unset bounds are filled in from the fleet.
    """

    mode: str = "fixed"
    alpha_fixed: float = 0.1
    lam: float = 1.0
    R: Optional[float] = None
    S_bound: Optional[float] = None
    L_bound: Optional[float] = None
    delta: float = 0.1

    def __post_init__(self):
        if self.mode not in ("fixed", "schedule"):
            raise InvalidInputError(f"unknown confidence mode {self.mode!r}")
        if not self.lam > 0:
            raise InvalidInputError(f"lambda must be > 0, got {self.lam}")
        if self.mode == "fixed" and not self.alpha_fixed >= 0:
            raise InvalidInputError("alpha_fixed must be >= 0")
        if not 0 < self.delta < 1:
            raise InvalidInputError(f"delta must lie in (0, 1), got {self.delta}")

    def is_complete(self) -> bool:
        return None not in (self.R, self.S_bound, self.L_bound)

    def validate_schedule(self) -> None:
        if self.mode != "schedule":
            return
        if not self.is_complete():
            raise InvalidInputError("schedule mode needs R, S_bound and L_bound")
        if self.R < 0 or self.S_bound <= 0 or self.L_bound <= 0:
            raise InvalidInputError("schedule constants must be positive (R may be 0)")


def init_arm(lam: float) -> ArmEstimatorState:
    if not lam > 0:
        raise InvalidInputError(f"ridge parameter must be > 0, got {lam}")
    return ArmEstimatorState(lam * np.eye(DIM), np.zeros(DIM), 0, float(lam))


def _as_context(context) -> np.ndarray:
    if hasattr(context, "as_array"):
        return context.as_array()
    return np.asarray(context, dtype=float).reshape(DIM)


def absorb_observation(state: ArmEstimatorState, context, realized_time: float) -> ArmEstimatorState:
    c = _as_context(context)
    if not (np.all(np.isfinite(c)) and math.isfinite(realized_time)):
        raise InvalidInputError("observation must be finite")
    if realized_time < 0:
        raise InvalidInputError(f"realized time must be >= 0, got {realized_time}")
    return ArmEstimatorState(
        state.H + np.outer(c, c),
        state.b + realized_time * c,
        state.pulls + 1,
        state.lam,
    )


def theta_hat(state: ArmEstimatorState) -> np.ndarray:
    if state.pulls == 0:
        return np.zeros(DIM)
    return np.linalg.solve(state.H, state.b)


def confidence_width(state: ArmEstimatorState, context) -> float:
    c = _as_context(context)
    return math.sqrt(float(c @ np.linalg.solve(state.H, c)))


def optimistic_time(state: ArmEstimatorState, context, alpha: float) -> float:
    if alpha < 0:
        raise InvalidInputError("alpha must be >= 0")
    c = _as_context(context)
    est = float(c @ theta_hat(state)) - alpha * confidence_width(state, c)
    return max(est, 0.0)


def alpha_schedule(config: ConfidenceConfig, t: int) -> float:
    """Exploration factor for round ``t`` (natural log)."""
    if config.mode == "fixed":
        return config.alpha_fixed
    if t < 1:
        raise InvalidInputError(f"round index must be >= 1, got {t}")
    config.validate_schedule()
    lam = config.lam
    inner = (1.0 + t * config.L_bound**2 / lam) / config.delta
    return config.R * math.sqrt(3.0 * math.log(inner)) + math.sqrt(lam) * config.S_bound


def batch_estimates(H: np.ndarray, b: np.ndarray, contexts: np.ndarray):
    """Point estimates and widths for stacked arms.

    ``H`` is (N, 3, 3), ``b`` and ``contexts`` are (N, 3). Returns
    ``(c . theta_hat, sqrt(c^T H^-1 c))`` as two (N,) arrays.
    """
    rhs = np.stack([b, contexts], axis=2)
    sol = np.linalg.solve(H, rhs)
    point = np.einsum("ij,ij->i", contexts, sol[:, :, 0])
    width = np.sqrt(np.einsum("ij,ij->i", contexts, sol[:, :, 1]))
    return point, width


def batch_optimistic_times(H: np.ndarray, b: np.ndarray, contexts: np.ndarray, alpha: float) -> np.ndarray:
    point, width = batch_estimates(H, b, contexts)
    return np.maximum(point - alpha * width, 0.0)

