"""Benchmark instances: knapsacks, course selection, generalized assignment, adversarial family."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import CombinatorialSpace, Instance, InstanceError, Row, WeightDomain

# ---------------------------------------------------------------------------
# knapsack
# ---------------------------------------------------------------------------

WEIGHT_RANGE = 10_000
CORRELATION_SPAN = WEIGHT_RANGE // 10
KNAPSACK_KINDS = ("U", "W", "S")


def knapsack_values(kind: str, raw_weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Values for the uncorrelated (U), weakly correlated (W) and strongly correlated (S) classes."""
    if kind == "U":
        return rng.integers(1, WEIGHT_RANGE + 1, size=raw_weights.shape[0])
    if kind == "W":
        lo = raw_weights - CORRELATION_SPAN
        hi = raw_weights + CORRELATION_SPAN
        return np.maximum(rng.integers(lo, hi + 1), 1)
    if kind == "S":
        return raw_weights + CORRELATION_SPAN
    raise ValueError(f"unknown knapsack kind {kind!r}; expected one of {KNAPSACK_KINDS}")


def knapsack_from_raw(values: Sequence[float], raw_weights: Sequence[int], h: int,
                      meta: dict | None = None) -> Instance:
    """Single unknown knapsack with capacity h * sum(weights) / 31, normalized to 1."""
    if not 1 <= h <= 30:
        raise ValueError(f"h must lie in 1..30, got {h}")
    raw = np.asarray(raw_weights, dtype=float)
    capacity = h * raw.sum() / 31
    hidden = np.minimum(raw / capacity, 1.0)
    n = raw.shape[0]
    info = {"raw_weights": [int(r) for r in raw], "capacity": capacity, "h": h,
            "clamped": int(np.sum(raw > capacity))}
    info.update(meta or {})
    return Instance("knapsack", 1, n, np.asarray(values, dtype=float)[None, :],
                    CombinatorialSpace(n), [WeightDomain(n)], hidden[None, :], info)


def gen_knapsack(kind: str, n: int, h: int, rng: np.random.Generator | int) -> Instance:
    rng = np.random.default_rng(rng)
    if not 1 <= h <= 30:
        raise ValueError(f"h must lie in 1..30, got {h}")
    raw = rng.integers(1, WEIGHT_RANGE + 1, size=n)
    values = knapsack_values(kind, raw, rng)
    return knapsack_from_raw(values, raw, h, {"class": kind})


# ---------------------------------------------------------------------------
# course selection (CSPP)
# ---------------------------------------------------------------------------

HOURS_BUDGET = 1700
HOURS_PER_CREDIT = 14


@dataclass
class CourseCatalog:
    credits: list[tuple[int, int, int]]
    prerequisites: list[list[frozenset[int]]] = field(default_factory=list)
    corequisites: list[set[int]] = field(default_factory=list)
    alternatives: list[set[int]] = field(default_factory=list)

    def __post_init__(self):
        k = len(self.credits)
        if not self.prerequisites:
            self.prerequisites = [[] for _ in range(k)]
        if not self.corequisites:
            self.corequisites = [set() for _ in range(k)]
        if not self.alternatives:
            self.alternatives = [set() for _ in range(k)]

    @property
    def size(self) -> int:
        return len(self.credits)

    def prereq_union(self, i: int) -> set[int]:
        return set().union(*self.prerequisites[i]) if self.prerequisites[i] else set()

    def violations(self) -> list[str]:
        out = []
        k = self.size
        for i in range(k):
            pre, co, alt = self.prereq_union(i), self.corequisites[i], self.alternatives[i]
            for name, rel in (("prerequisite", pre), ("corequisite", co), ("alternative", alt)):
                if i in rel:
                    out.append(f"course {i} lists itself as {name}")
                if any(not 0 <= j < k for j in rel):
                    out.append(f"course {i} has an out-of-range {name}")
            if pre & co or pre & alt or co & alt:
                out.append(f"rule (a): relation sets of course {i} overlap")
            for j in pre:
                if 0 <= j < k and i in self.prereq_union(j):
                    out.append(f"rule (b): courses {i} and {j} are prerequisites of each other")
            for j in co:
                if 0 <= j < k and i not in self.corequisites[j]:
                    out.append(f"rule (c): corequisite {i}->{j} is not symmetric")
            for j in alt:
                if 0 <= j < k and i not in self.alternatives[j]:
                    out.append(f"rule (d): alternative {i}->{j} is not symmetric")
            if any(not s for s in self.prerequisites[i]):
                out.append(f"course {i} has an empty prerequisite set")
        return out

    def validate(self) -> None:
        bad = self.violations()
        if bad:
            raise InstanceError("inconsistent catalog: " + "; ".join(bad))


def gen_catalog(n_courses: int, rng: np.random.Generator | int, *, prereq_density: float = 0.2,
                coreq_density: float = 0.05, alt_density: float = 0.1,
                credit_ranges: tuple[tuple[int, int], ...] = ((2, 5), (0, 2), (4, 10))
                ) -> CourseCatalog:
    """Random consistent catalog.

    Prerequisites only point to lower-index courses, so the relation is
    acyclic.  Densities are per-course probabilities of having prerequisites
    and per-course expected numbers of corequisite/alternative pairs.
    """
    if n_courses < 1:
        raise ValueError("need at least one course")
    rng = np.random.default_rng(rng)
    credits = [tuple(int(rng.integers(lo, hi + 1)) for lo, hi in credit_ranges)
               for _ in range(n_courses)]
    cat = CourseCatalog(credits)
    for i in range(1, n_courses):
        if rng.random() < prereq_density:
            for _ in range(int(rng.integers(1, 3))):
                size = int(rng.integers(1, min(3, i) + 1))
                group = frozenset(int(j) for j in rng.choice(i, size=size, replace=False))
                if group not in cat.prerequisites[i]:
                    cat.prerequisites[i].append(group)

    def related(i: int, j: int) -> bool:
        return (j in cat.prereq_union(i) or i in cat.prereq_union(j)
                or j in cat.corequisites[i] or j in cat.alternatives[i])

    def add_pairs(count: int, target: list[set[int]]) -> None:
        for _ in range(count):
            if n_courses < 2:
                return
            i, j = (int(v) for v in rng.choice(n_courses, size=2, replace=False))
            if not related(i, j):
                target[i].add(j)
                target[j].add(i)

    add_pairs(int(rng.binomial(n_courses, min(coreq_density, 1.0))), cat.corequisites)
    add_pairs(int(rng.binomial(n_courses, min(alt_density, 1.0))), cat.alternatives)
    cat.validate()
    return cat


def truncated_normal(rng: np.random.Generator, mean: float, sd: float, lo: float, hi: float
                     ) -> float:
    """Rejection sampling from the untruncated normal."""
    while True:
        v = float(rng.normal(mean, sd))
        if lo <= v <= hi:
            return v


def course_weight(a: int, b: int, hours: float) -> float:
    """Normalized workload: fixed credit hours plus sampled extra hours, capped at 1."""
    return min(HOURS_PER_CREDIT * (a + b) / HOURS_BUDGET + hours / HOURS_BUDGET, 1.0)


def cspp_rows(cat: CourseCatalog) -> list[Row]:
    k = cat.size
    rows = []
    for i in range(k):
        for group in cat.prerequisites[i]:
            a = np.zeros(k)
            a[i] = 1.0
            a[sorted(group)] = -1.0
            rows.append(Row(a, "<=", 0.0))
    for i in range(k):
        for j in sorted(cat.corequisites[i]):
            if i < j:
                a = np.zeros(k)
                a[i], a[j] = 1.0, -1.0
                rows.append(Row(a, "=", 0.0))
    for i in range(k):
        for j in sorted(cat.alternatives[i]):
            if i < j:
                a = np.zeros(k)
                a[i] = a[j] = 1.0
                rows.append(Row(a, "<=", 1.0))
    return rows


def gen_cspp(cat: CourseCatalog, rng: np.random.Generator | int) -> Instance:
    cat.validate()
    rng = np.random.default_rng(rng)
    k = cat.size
    hidden, values, hours = [], [], []
    for a, b, c in cat.credits:
        sd = float(rng.uniform(1, 28))
        extra = truncated_normal(rng, HOURS_PER_CREDIT * c, sd, 0.0, HOURS_BUDGET)
        hours.append(extra)
        hidden.append(course_weight(a, b, extra))
        values.append(a + b + c)
    tags = {
        "prerequisites": [[sorted(g) for g in p] for p in cat.prerequisites],
        "corequisites": [sorted(s) for s in cat.corequisites],
        "alternatives": [sorted(s) for s in cat.alternatives],
    }
    return Instance("cspp", 1, k, np.array(values, dtype=float)[None, :],
                    CombinatorialSpace(k, cspp_rows(cat), tags), [WeightDomain(k)],
                    np.array(hidden)[None, :],
                    {"credits": [list(c) for c in cat.credits], "extra_hours": hours})


# ---------------------------------------------------------------------------
# generalized assignment
# ---------------------------------------------------------------------------

class GapParseError(ValueError):
    pass


def gap_instance(values: np.ndarray, raw_weights: np.ndarray, capacities: np.ndarray,
                 meta: dict | None = None) -> Instance:
    values = np.asarray(values, dtype=float)
    raw = np.asarray(raw_weights, dtype=float)
    caps = np.asarray(capacities, dtype=float)
    m, n = values.shape
    if np.any(caps <= 0):
        raise GapParseError("agent capacities must be positive")
    hidden = np.minimum(raw / caps[:, None], 1.0)
    rows = []
    for j in range(n):
        a = np.zeros(m * n)
        a[np.arange(m) * n + j] = 1.0
        rows.append(Row(a, "<=", 1.0))
    info = {"raw_weights": raw.astype(int).tolist(), "capacities": caps.astype(int).tolist()}
    info.update(meta or {})
    return Instance("gap", m, n, values, CombinatorialSpace(m * n, rows, {"assignment": True}),
                    [WeightDomain(n) for _ in range(m)], hidden, info)


def parse_gap(text: str) -> list[Instance]:
    """OR-Library GAP layout: count, then per problem m n, values, weights, capacities."""
    tokens = text.split()
    pos = 0

    def take(count: int, what: str) -> list[int]:
        nonlocal pos
        if pos + count > len(tokens):
            raise GapParseError(f"{what}: expected {count} tokens at offset {pos}, "
                                f"found {len(tokens) - pos}")
        try:
            out = [int(t) for t in tokens[pos:pos + count]]
        except ValueError as exc:
            raise GapParseError(f"{what}: non-integer token near offset {pos}") from exc
        pos += count
        return out

    (count,) = take(1, "problem count")
    problems = []
    for p in range(count):
        m, n = take(2, f"problem {p + 1} header")
        if m < 1 or n < 1:
            raise GapParseError(f"problem {p + 1}: bad dimensions {m}x{n}")
        values = np.array(take(m * n, f"problem {p + 1} values")).reshape(m, n)
        weights = np.array(take(m * n, f"problem {p + 1} weights")).reshape(m, n)
        caps = np.array(take(m, f"problem {p + 1} capacities"))
        if np.any(caps <= 0):
            raise GapParseError(f"problem {p + 1}: nonpositive capacity")
        problems.append(gap_instance(values, weights, caps, {"problem": p + 1}))
    if pos != len(tokens):
        raise GapParseError(f"expected {pos} tokens, found {len(tokens)}")
    return problems


def format_gap(problems: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]]) -> str:
    lines = [str(len(problems))]
    for values, weights, caps in problems:
        m, n = np.shape(values)
        lines.append(f"{m} {n}")
        lines += [" ".join(str(int(v)) for v in row) for row in values]
        lines += [" ".join(str(int(v)) for v in row) for row in weights]
        lines.append(" ".join(str(int(c)) for c in caps))
    return "\n".join(lines) + "\n"


def gen_gap_raw(m: int, n: int, rng: np.random.Generator | int
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Synthetic problem in the style of the OR-Library small classes."""
    rng = np.random.default_rng(rng)
    values = rng.integers(15, 26, size=(m, n))
    weights = rng.integers(5, 26, size=(m, n))
    caps = np.floor(0.8 * weights.sum(axis=1) / m).astype(int)
    return values, weights, np.maximum(caps, 1)


def gen_gap(m: int, n: int, rng: np.random.Generator | int) -> Instance:
    return gap_instance(*gen_gap_raw(m, n, rng), {"synthetic": True})


# ---------------------------------------------------------------------------
# adversarial family
# ---------------------------------------------------------------------------

def adversarial_capacity(eps: float) -> int:
    frac = Fraction(str(eps))
    if not 0 < frac < 1:
        raise ValueError("eps must lie strictly between 0 and 1")
    return math.ceil(1 / frac) - 1


def gen_adversarial(n: int, eps: float) -> tuple[Instance, Callable[[Iterable[int]], Instance]]:
    """Unit-value instance where every item weighs 1/C, plus a builder for its perturbations.

    The builder lowers the weight of the C+1 items in the given set to
    1/(C+1), which makes picking exactly those items the unique optimum.
    """
    C = adversarial_capacity(eps)
    if C < 1:
        raise ValueError("eps too large: no item would fit")
    if n <= C + 1:
        raise ValueError(f"need n > C + 1 = {C + 1}")

    def build(weights: np.ndarray, meta: dict) -> Instance:
        return Instance("adversarial", 1, n, np.ones((1, n)), CombinatorialSpace(n),
                        [WeightDomain(n)], weights[None, :], {"eps": eps, "C": C, **meta})

    base = build(np.full(n, 1.0 / C), {})

    def perturbed(subset: Iterable[int]) -> Instance:
        chosen = sorted(set(int(j) for j in subset))
        if len(chosen) != C + 1:
            raise ValueError(f"subset must have exactly C + 1 = {C + 1} items")
        if any(not 0 <= j < n for j in chosen):
            raise ValueError("subset index out of range")
        w = np.full(n, 1.0 / C)
        w[chosen] = 1.0 / (C + 1)
        return build(w, {"subset": chosen})

    return base, perturbed
