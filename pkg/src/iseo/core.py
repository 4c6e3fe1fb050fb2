"""Problem and labeled-state data model shared by every other module.

Solutions are stored as tuples of 0/1 ints.  Tuples hash, compare
lexicographically and serialize trivially, which is what the rest of the
package relies on for deterministic iteration and tie-breaking.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

Bits = tuple[int, ...]

SENSES = ("<=", "=", ">=")
KINDS = ("knapsack", "cspp", "gap", "adversarial", "custom")


class InstanceError(ValueError):
    """Raised when an instance is malformed or violates a model invariant."""


def as_bits(x: Iterable[int]) -> Bits:
    bits = tuple(int(v) for v in x)
    if any(b not in (0, 1) for b in bits):
        raise ValueError(f"not a 0/1 vector: {bits}")
    return bits


def to_mask(bits: Sequence[int]) -> int:
    """Integer whose natural order equals the lexicographic order of ``bits``."""
    mask = 0
    for b in bits:
        mask = (mask << 1) | int(b)
    return mask


def from_mask(mask: int, n: int) -> Bits:
    return tuple((mask >> (n - 1 - j)) & 1 for j in range(n))


def leq(a: Sequence[int], b: Sequence[int]) -> bool:
    """Componentwise a <= b."""
    return all(x <= y for x, y in zip(a, b))


@dataclass(frozen=True)
class Row:
    coeffs: np.ndarray
    sense: str
    rhs: float

    def __post_init__(self):
        if self.sense not in SENSES:
            raise InstanceError(f"unknown row sense {self.sense!r}")
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))

    def satisfied(self, x, tol: float = 1e-9) -> bool:
        act = float(self.coeffs @ np.asarray(x, dtype=float))
        if self.sense == "<=":
            return act <= self.rhs + tol
        if self.sense == ">=":
            return act >= self.rhs - tol
        return abs(act - self.rhs) <= tol


@dataclass
class CombinatorialSpace:
    """The known part X of the feasible region, as linear rows over all m*n variables.

    ``tags`` carries structure hints: ``assignment`` (every job column is used by
    at most one block, as in GAP) and the CSPP relation lists.
    """

    size: int
    rows: list[Row] = field(default_factory=list)
    tags: dict[str, Any] = field(default_factory=dict)
    possibly_empty: bool = False

    def __post_init__(self):
        for r in self.rows:
            if r.coeffs.shape != (self.size,):
                raise InstanceError(
                    f"row has {r.coeffs.shape[0]} coefficients, expected {self.size}")
        if not self.possibly_empty and not self.contains((0,) * self.size):
            raise InstanceError("space does not contain the all-zeros point "
                                "and is not flagged possibly_empty")

    def contains(self, x, tol: float = 1e-9) -> bool:
        return all(r.satisfied(x, tol) for r in self.rows)

    def matrix(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rows as (A, sense codes, rhs) with sense code -1 for <=, 0 for =, +1 for >=."""
        if not self.rows:
            return np.zeros((0, self.size)), np.zeros(0, dtype=int), np.zeros(0)
        A = np.vstack([r.coeffs for r in self.rows])
        code = np.array([SENSES.index(r.sense) - 1 for r in self.rows])
        rhs = np.array([r.rhs for r in self.rows], dtype=float)
        return A, code, rhs

    def split(self, m: int, n: int) -> tuple[list[list[Row]], list[Row]]:
        """Partition rows into per-block rows (restricted to the block) and coupling rows."""
        blocks: list[list[Row]] = [[] for _ in range(m)]
        coupling: list[Row] = []
        for r in self.rows:
            support = {j // n for j in np.flatnonzero(r.coeffs)}
            if len(support) == 1:
                i = support.pop()
                blocks[i].append(Row(r.coeffs[i * n:(i + 1) * n], r.sense, r.rhs))
            elif len(support) == 0:
                if not r.satisfied(np.zeros(self.size)):
                    raise InstanceError("constant row is violated")
            else:
                coupling.append(r)
        return blocks, coupling


@dataclass
class WeightDomain:
    """W_i: the box [0,1]^n cut by extra rows a.w <= b."""

    n: int
    extra_rows: list[tuple[np.ndarray, float]] = field(default_factory=list)

    def __post_init__(self):
        self.extra_rows = [(np.asarray(a, dtype=float), float(b)) for a, b in self.extra_rows]
        for a, _ in self.extra_rows:
            if a.shape != (self.n,):
                raise InstanceError("weight-domain row has wrong length")

    def contains(self, w, tol: float = 1e-7) -> bool:
        w = np.asarray(w, dtype=float)
        if np.any(w < -tol) or np.any(w > 1 + tol):
            return False
        return all(a @ w <= b + tol for a, b in self.extra_rows)

    def check_nonempty(self) -> None:
        from .solvers import LinearSystem, lp_feasible

        if not self.extra_rows:
            return
        system = LinearSystem([(a, "<=", b) for a, b in self.extra_rows],
                              np.zeros(self.n), np.ones(self.n))
        if lp_feasible(system) is None:
            raise InstanceError("weight domain is empty")


@dataclass
class Instance:
    kind: str
    m: int
    n: int
    values: np.ndarray
    space: CombinatorialSpace
    weight_domains: list[WeightDomain]
    hidden_weights: np.ndarray | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.kind not in KINDS:
            raise InstanceError(f"unknown instance kind {self.kind!r}")
        if self.values.shape != (self.m, self.n):
            raise InstanceError(f"values shape {self.values.shape} != ({self.m}, {self.n})")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise InstanceError("values must be finite and nonnegative")
        if self.hidden_weights is not None:
            self.hidden_weights = np.asarray(self.hidden_weights, dtype=float)
            if self.hidden_weights.shape != (self.m, self.n):
                raise InstanceError("hidden_weights shape mismatch")
            if np.any(self.hidden_weights < 0) or np.any(self.hidden_weights > 1):
                raise InstanceError("hidden weights must lie in [0, 1]")
        if len(self.weight_domains) != self.m:
            raise InstanceError("need one weight domain per unknown constraint")
        if self.space.size != self.m * self.n:
            raise InstanceError("space variable count must be m*n")
        for d in self.weight_domains:
            d.check_nonempty()

    @property
    def size(self) -> int:
        return self.m * self.n

    def objective(self, x: Sequence[int]) -> float:
        return float(math.fsum(v for v, b in zip(self.values.ravel(), x) if b))

    def zeros(self) -> Bits:
        return (0,) * self.size

    def ones(self) -> Bits:
        return (1,) * self.size

    def block(self, x: Sequence[int], i: int) -> Bits:
        return restrict(x, i, self.m, self.n)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "kind": self.kind,
            "m": self.m,
            "n": self.n,
            "values": _plain(self.values),
            "space": {
                "rows": [{"coeffs": _plain(r.coeffs), "sense": r.sense, "rhs": _num(r.rhs)}
                         for r in self.space.rows],
                "tags": self.space.tags,
            },
            "weight_domains": [[{"a": _plain(a), "b": _num(b)} for a, b in dom.extra_rows]
                               for dom in self.weight_domains],
        }
        if self.hidden_weights is not None:
            d["hidden_weights"] = _plain(self.hidden_weights)
        if self.space.possibly_empty:
            d["space"]["possibly_empty"] = True
        if self.meta:
            d["meta"] = self.meta
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Instance":
        try:
            m, n = int(d["m"]), int(d["n"])
            sp = d.get("space", {})
            space = CombinatorialSpace(
                m * n,
                [Row(r["coeffs"], r["sense"], float(r["rhs"])) for r in sp.get("rows", [])],
                dict(sp.get("tags", {})),
                bool(sp.get("possibly_empty", False)),
            )
            doms = d.get("weight_domains") or [[] for _ in range(m)]
            domains = [WeightDomain(n, [(r["a"], r["b"]) for r in rows]) for rows in doms]
            hidden = d.get("hidden_weights")
            return cls(
                kind=d["kind"], m=m, n=n, values=np.array(d["values"], dtype=float),
                space=space, weight_domains=domains,
                hidden_weights=None if hidden is None else np.array(hidden, dtype=float),
                meta=dict(d.get("meta", {})),
            )
        except KeyError as exc:
            raise InstanceError(f"missing field {exc}") from None

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Instance":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _num(v: float):
    v = float(v)
    return int(v) if v.is_integer() and abs(v) < 2**53 else v


def _plain(a: np.ndarray):
    return [_plain(r) for r in a] if a.ndim > 1 else [_num(v) for v in a]


def restrict(solution: Sequence[int], i: int, m: int, n: int) -> Bits:
    """Sub-solution of ``solution`` for unknown constraint ``i``."""
    if len(solution) != m * n:
        raise ValueError(f"solution has length {len(solution)}, expected {m * n}")
    if not 0 <= i < m:
        raise IndexError(f"constraint index {i} out of range for m={m}")
    return tuple(int(b) for b in solution[i * n:(i + 1) * n])


def dominated_feasible(mu: Sequence[int], pool: Iterable[Sequence[int]]) -> bool:
    """True iff some labeled-feasible sub-solution covers ``mu`` componentwise."""
    return any(leq(mu, s) for s in pool)


def maximal(points: Iterable[Bits]) -> list[Bits]:
    """Componentwise-maximal elements, sorted."""
    pts = sorted(set(points), key=lambda p: (-sum(p), p))
    keep: list[Bits] = []
    for p in pts:
        if not any(leq(p, q) for q in keep):
            keep.append(p)
    return sorted(keep)


def minimal(points: Iterable[Bits]) -> list[Bits]:
    """Componentwise-minimal elements, sorted."""
    pts = sorted(set(points), key=lambda p: (sum(p), p))
    keep: list[Bits] = []
    for p in pts:
        if not any(leq(q, p) for q in keep):
            keep.append(p)
    return sorted(keep)


class LabeledPools:
    """Global and per-constraint labeled sets, each element tagged with its iteration."""

    def __init__(self, m: int, n: int):
        self.m, self.n = m, n
        self.global_pos: dict[Bits, int] = {}
        self.global_neg: dict[Bits, int] = {}
        self.pos: list[dict[Bits, int]] = [{} for _ in range(m)]
        self.neg: list[dict[Bits, int]] = [{} for _ in range(m)]

    def add_sub(self, i: int, chi: Bits, label: int, t: int) -> None:
        own, other = (self.pos[i], self.neg[i]) if label > 0 else (self.neg[i], self.pos[i])
        if chi in other:
            raise ValueError(f"sub-solution {chi} already carries the opposite label")
        own.setdefault(chi, t)

    def add_global(self, x: Bits, feasible: bool, t: int) -> None:
        own, other = ((self.global_pos, self.global_neg) if feasible
                      else (self.global_neg, self.global_pos))
        if x in other:
            raise ValueError(f"solution {x} already carries the opposite label")
        own.setdefault(x, t)

    def pos_of(self, i: int) -> list[Bits]:
        return sorted(self.pos[i])

    def neg_of(self, i: int) -> list[Bits]:
        return sorted(self.neg[i])

    def check(self) -> None:
        if self.global_pos.keys() & self.global_neg.keys():
            raise AssertionError("global pools intersect")
        for i in range(self.m):
            if self.pos[i].keys() & self.neg[i].keys():
                raise AssertionError(f"pools of constraint {i} intersect")
        # inferred labels are not stored, so a feasible restriction only needs a dominating entry
        for x in self.global_pos:
            for i in range(self.m):
                if not dominated_feasible(restrict(x, i, self.m, self.n), self.pos[i]):
                    raise AssertionError(f"restriction of {x} not covered by S+_{i}")

    def copy(self) -> "LabeledPools":
        c = LabeledPools(self.m, self.n)
        c.global_pos, c.global_neg = dict(self.global_pos), dict(self.global_neg)
        c.pos = [dict(p) for p in self.pos]
        c.neg = [dict(p) for p in self.neg]
        return c


@dataclass
class SurrogateWeights:
    w_hat: np.ndarray

    def row(self, i: int) -> np.ndarray:
        return self.w_hat[i]

    def check(self, domains: Sequence[WeightDomain], tol: float = 1e-7) -> None:
        for i, dom in enumerate(domains):
            if not dom.contains(self.w_hat[i], tol):
                raise AssertionError(f"surrogate row {i} leaves its weight domain")
