"""Membership oracles with per-oracle call budgets and a query cache."""

from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence, TextIO

import numpy as np

from .core import Bits, as_bits, dominated_feasible

log = logging.getLogger(__name__)

FEASIBLE, INFEASIBLE = 1, -1
ORACLE_TOL = 1e-12


class BudgetExhausted(RuntimeError):
    def __init__(self, i: int, budget: int):
        super().__init__(f"oracle {i} has used its budget of {budget} calls")
        self.i = i


class OracleAborted(RuntimeError):
    pass


class Backend(Protocol):
    def label(self, mu: Bits) -> int: ...


@dataclass
class SimulatedBackend:
    weights: np.ndarray

    def label(self, mu: Bits) -> int:
        load = math.fsum(w for w, b in zip(self.weights, mu) if b)
        return FEASIBLE if load <= 1 + ORACLE_TOL else INFEASIBLE


@dataclass
class InteractiveBackend:
    """Asks a person on a text stream.  Three invalid answers in a row, or EOF, abort."""

    index: int
    stdin: TextIO = field(default_factory=lambda: sys.stdin)
    stdout: TextIO = field(default_factory=lambda: sys.stdout)
    max_invalid: int = 3

    def label(self, mu: Bits) -> int:
        items = ",".join(str(j) for j, b in enumerate(mu) if b)
        invalid = 0
        while True:
            self.stdout.write(f"oracle {self.index} | items {{{items}}} | feasible? [y/n] ")
            self.stdout.flush()
            line = self.stdin.readline()
            if not line:
                raise OracleAborted("end of input while waiting for an oracle answer")
            answer = line.strip().lower()
            if answer in ("y", "yes"):
                return FEASIBLE
            if answer in ("n", "no"):
                return INFEASIBLE
            invalid += 1
            if invalid >= self.max_invalid:
                raise OracleAborted(f"{invalid} invalid answers for oracle {self.index}")
            self.stdout.write("please answer y or n\n")


class OracleSuite:
    """m oracles sharing one per-oracle budget.

    ``calls[i]`` counts budgeted queries.  Repeated queries are answered from
    the cache and only tallied in ``cache_hits``.  Probe queries made after a
    run are tallied in ``probe_calls`` and never touch the budget.
    """

    def __init__(self, backends: Sequence[Backend], budget: int | float):
        if budget < 1:
            raise ValueError("budget must be at least 1")
        self.backends = list(backends)
        self.budget = budget
        self.calls = [0] * len(self.backends)
        self.cache: list[dict[Bits, int]] = [{} for _ in self.backends]
        self.cache_hits = [0] * len(self.backends)
        self.probe_calls = [0] * len(self.backends)

    @classmethod
    def simulated(cls, hidden_weights: np.ndarray, budget: int | float) -> "OracleSuite":
        return cls([SimulatedBackend(np.asarray(row, dtype=float)) for row in hidden_weights],
                   budget)

    @classmethod
    def interactive(cls, m: int, budget: int | float, stdin: TextIO | None = None,
                    stdout: TextIO | None = None) -> "OracleSuite":
        return cls([InteractiveBackend(i, stdin or sys.stdin, stdout or sys.stdout)
                    for i in range(m)], budget)

    @property
    def m(self) -> int:
        return len(self.backends)

    def exhausted(self, i: int | None = None) -> bool:
        if i is None:
            return any(c >= self.budget for c in self.calls)
        return self.calls[i] >= self.budget

    def query(self, i: int, mu: Iterable[int]) -> int:
        mu = as_bits(mu)
        hit = self.cache[i].get(mu)
        if hit is not None:
            self.cache_hits[i] += 1
            log.debug("oracle %d: cached answer for %s", i, mu)
            return hit
        if self.calls[i] >= self.budget:
            raise BudgetExhausted(i, self.budget)
        label = self.backends[i].label(mu)
        self.calls[i] += 1
        self.cache[i][mu] = label
        return label

    def infer_or_query(self, i: int, mu: Iterable[int],
                       positives: Iterable[Bits]) -> tuple[int, bool]:
        """Label ``mu``, skipping the oracle when a known-feasible point dominates it."""
        mu = as_bits(mu)
        if dominated_feasible(mu, positives):
            return FEASIBLE, True
        return self.query(i, mu), False

    def probe(self, i: int, mu: Iterable[int]) -> int:
        """Unbudgeted query used for after-the-fact diagnostics."""
        mu = as_bits(mu)
        hit = self.cache[i].get(mu)
        if hit is not None:
            return hit
        self.probe_calls[i] += 1
        return self.backends[i].label(mu)

    @property
    def total_calls(self) -> int:
        return sum(self.calls)
