"""Exact per-round selection: ``min V*max(tau_bar over S) - sum(Z over S)``.

The divide-and-conquer solver fixes the value of the max term to each
available client's estimate in turn; under that cap the best set is simply
the ``k`` largest backlogs among clients at or below the cap.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

BRUTE_FORCE_LIMIT = 20


class EmptyInputError(ValueError):
    """No client is available, so there is nothing to select."""


class ProblemSizeError(ValueError):
    """Instance too large for exhaustive enumeration."""


@dataclass(frozen=True)
class SolverInput:
    tau_bar: np.ndarray
    backlogs: np.ndarray
    availability: np.ndarray
    m: int
    V: float
    tie_rank: Optional[np.ndarray] = None  # tie-break priority per client; defaults to the id

    def __post_init__(self):
        n = len(self.tau_bar)
        if len(self.backlogs) != n or len(self.availability) != n:
            raise ValueError("tau_bar, backlogs and availability must share one index space")
        if self.tie_rank is not None and len(self.tie_rank) != n:
            raise ValueError("tie_rank must have one entry per client")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not (self.V >= 0 and math.isfinite(self.V)):
            raise ValueError(f"V must be finite and >= 0, got {self.V}")
        if not (np.all(np.isfinite(self.tau_bar)) and np.all(np.isfinite(self.backlogs))):
            raise ValueError("tau_bar and backlogs must be finite")

    def available(self) -> list:
        return [int(n) for n in np.flatnonzero(np.asarray(self.availability))]

    def ranks(self) -> list:
        if self.tie_rank is None:
            return list(range(len(self.tau_bar)))
        return [int(r) for r in self.tie_rank]


@dataclass(frozen=True)
class SolverOutput:
    selected: frozenset
    objective: float


def p4_objective(selected: Iterable[int], tau_bar: Sequence[float], backlogs: Sequence[float], V: float) -> float:
    """``V * max tau_bar - sum Z`` over ``selected``.

    The backlog sum is exactly rounded (``math.fsum``) so that the value does
    not depend on iteration order.
    """
    members = list(selected)
    if not members:
        raise ValueError("objective is undefined for an empty selection")
    return V * max(float(tau_bar[n]) for n in members) - math.fsum(float(backlogs[n]) for n in members)


def solve_p4(inp: SolverInput) -> SolverOutput:
    avail = inp.available()
    if not avail:
        raise EmptyInputError("no available clients")
    k = min(inp.m, len(avail))
    tau = [float(v) for v in inp.tau_bar]
    Z = [float(v) for v in inp.backlogs]
    rank = inp.ranks()

    # descending backlog, ties by ascending rank
    order = sorted(avail, key=lambda n: (-Z[n], rank[n]))
    if inp.V == 0:
        # the time term vanishes; a cap would only let tau_bar break backlog ties
        chosen = order[:k]
        return SolverOutput(frozenset(chosen), p4_objective(chosen, tau, Z, inp.V))
    candidates = sorted(avail, key=lambda n: (tau[n], rank[n]))

    best_set = None
    best_obj = math.inf
    last_cap = None
    for n_max in candidates:
        cap = tau[n_max]
        if cap == last_cap:
            # same cap yields the same set; the earlier candidate already won ties
            continue
        last_cap = cap
        chosen = []
        for n in order:
            if tau[n] <= cap:
                chosen.append(n)
                if len(chosen) == k:
                    break
        if len(chosen) < k:
            continue
        obj = p4_objective(chosen, tau, Z, inp.V)
        if obj < best_obj:
            best_obj = obj
            best_set = chosen
    return SolverOutput(frozenset(best_set), best_obj)


def solve_p4_bruteforce(inp: SolverInput) -> SolverOutput:
    """Enumerate every feasible set; ties go to the lexicographically smallest ids."""
    avail = inp.available()
    if not avail:
        raise EmptyInputError("no available clients")
    if len(avail) > BRUTE_FORCE_LIMIT:
        raise ProblemSizeError(f"{len(avail)} available clients exceeds the limit of {BRUTE_FORCE_LIMIT}")
    k = min(inp.m, len(avail))
    tau = [float(v) for v in inp.tau_bar]
    Z = [float(v) for v in inp.backlogs]
    best_set = None
    best_obj = math.inf
    for combo in itertools.combinations(avail, k):
        obj = p4_objective(combo, tau, Z, inp.V)
        if obj < best_obj:
            best_obj = obj
            best_set = combo
    return SolverOutput(frozenset(best_set), best_obj)


def check_output(inp: SolverInput, out: SolverOutput) -> None:
    """Assert the count, availability and objective consistency of a solution."""
    avail = set(inp.available())
    k = min(inp.m, len(avail))
    if len(out.selected) != k:
        raise AssertionError(f"selected {len(out.selected)} clients, expected {k}")
    if not out.selected <= avail:
        raise AssertionError(f"selected unavailable clients {sorted(out.selected - avail)}")
    if p4_objective(out.selected, inp.tau_bar, inp.backlogs, inp.V) != out.objective:
        raise AssertionError("reported objective does not match the selected set")
