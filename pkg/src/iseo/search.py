"""Shared 0-1 search machinery: per-block candidate tables and a depth-first engine.

Bit-vectors map to integers with the first coordinate as the most significant
bit, so integer order is lexicographic order on the tuples.  Both backends
use that to break ties the same way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import Bits, Row, from_mask, to_mask

MAX_ENUM_BITS = 20
ROW_TOL = 1e-9
TIE_TOL = 1e-12


def bits_of(masks: np.ndarray, n: int) -> np.ndarray:
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((masks[:, None] >> shifts) & 1).astype(np.uint8)


class BlockCandidates:
    """Every point of {0,1}^n satisfying a block's own rows, with running no-good filters.

    ``outside_pos`` marks points not covered by any labeled-feasible point,
    ``outside_neg`` marks points not covering any labeled-infeasible point, and
    ``outside_global`` is the same as ``outside_pos`` but fed from full
    solutions (only meaningful when the block is the whole solution).
    ``excluded`` collects points known to lie outside the bounding model's
    feasible projection, together with their supersets.
    """

    def __init__(self, n: int, rows: Sequence[Row] = ()):
        if n > MAX_ENUM_BITS:
            raise ValueError(f"enumeration is limited to {MAX_ENUM_BITS} bits per block, got {n}")
        self.n = n
        masks = np.arange(1 << n, dtype=np.int64)
        bits = bits_of(masks, n)
        keep = np.ones(masks.shape[0], dtype=bool)
        for r in rows:
            act = bits @ r.coeffs
            if r.sense == "<=":
                keep &= act <= r.rhs + ROW_TOL
            elif r.sense == ">=":
                keep &= act >= r.rhs - ROW_TOL
            else:
                keep &= np.abs(act - r.rhs) <= ROW_TOL
        self.masks = masks[keep]
        self.bits = bits[keep]
        k = self.masks.shape[0]
        self.outside_pos = np.ones(k, dtype=bool)
        self.outside_neg = np.ones(k, dtype=bool)
        self.outside_global = np.ones(k, dtype=bool)
        self.excluded = np.zeros(k, dtype=bool)
        self._seen_pos: set[int] = set()
        self._seen_neg: set[int] = set()
        self._seen_global: set[int] = set()
        self._seen_excluded: set[int] = set()

    def __len__(self) -> int:
        return int(self.masks.shape[0])

    def index_of(self, mask: int) -> int | None:
        k = int(np.searchsorted(self.masks, mask))
        if k < len(self) and int(self.masks[k]) == mask:
            return k
        return None

    def point(self, k: int) -> Bits:
        return from_mask(int(self.masks[k]), self.n)

    def add_pos(self, mask: int) -> None:
        if mask not in self._seen_pos:
            self._seen_pos.add(mask)
            self.outside_pos &= (self.masks & ~mask) != 0

    def add_neg(self, mask: int) -> None:
        if mask not in self._seen_neg:
            self._seen_neg.add(mask)
            self.outside_neg &= (self.masks & mask) != mask

    def add_global(self, mask: int) -> None:
        if mask not in self._seen_global:
            self._seen_global.add(mask)
            self.outside_global &= (self.masks & ~mask) != 0

    def exclude_supersets(self, mask: int) -> None:
        if mask not in self._seen_excluded:
            self._seen_excluded.add(mask)
            self.excluded |= (self.masks & mask) == mask

    def sync(self, pos: Iterable[Bits] = (), neg: Iterable[Bits] = ()) -> None:
        for p in pos:
            self.add_pos(to_mask(p))
        for q in neg:
            self.add_neg(to_mask(q))

    @property
    def unlabeled(self) -> np.ndarray:
        return self.outside_pos & self.outside_neg


def pick_min(values: np.ndarray, exact: Callable[[int], float], tol: float = 1e-9
             ) -> tuple[int, float]:
    """Index minimizing ``values``, re-scored exactly; ties go to the lowest index.

    ``values`` is a fast vectorized approximation.  Everything within ``tol``
    of its minimum is re-scored with ``exact`` and the winner is the lowest
    index among exact scores within TIE_TOL of the best.
    """
    lo = float(values.min())
    near = np.flatnonzero(values <= lo + tol)
    scored = [(exact(int(k)), int(k)) for k in near]
    best = min(s for s, _ in scored)
    winner = min(k for s, k in scored if s <= best + TIE_TOL)
    return winner, next(s for s, k in scored if k == winner)


# ---------------------------------------------------------------------------
# Depth-first 0-1 search
# ---------------------------------------------------------------------------

@dataclass
class LinearRows:
    """Activity windows ``lo <= A x <= hi``."""

    A: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "LinearRows":
        return cls(np.zeros((0, n)), np.zeros(0), np.zeros(0))

    @classmethod
    def from_rows(cls, rows: Sequence[Row], n: int) -> "LinearRows":
        out = cls.empty(n)
        for r in rows:
            lo = -np.inf if r.sense == "<=" else r.rhs
            hi = np.inf if r.sense == ">=" else r.rhs
            out = out.append(r.coeffs, lo, hi)
        return out

    def append(self, a, lo: float, hi: float) -> "LinearRows":
        return LinearRows(np.vstack([self.A, np.asarray(a, dtype=float)[None, :]]),
                          np.append(self.lo, lo), np.append(self.hi, hi))

    def extend(self, other: "LinearRows") -> "LinearRows":
        return LinearRows(np.vstack([self.A, other.A]), np.concatenate([self.lo, other.lo]),
                          np.concatenate([self.hi, other.hi]))


@dataclass
class DFSResult:
    x: Bits | None
    value: float
    complete: bool
    nodes: int
    open_bound: float  # best bound among unexplored nodes when the limit hit


def binary_dfs(nvars: int, rows: LinearRows, bound: Callable[[tuple, int], float],
               leaf: Callable[[tuple], float | None], *, node_limit: int | None = None
               ) -> DFSResult:
    """Minimize ``leaf`` over 0-1 vectors meeting ``rows``.

    Variables are fixed in index order with the 0 branch explored first, so
    leaves appear in lexicographic order and a later leaf replaces the
    incumbent only when strictly better.  That yields the lexicographically
    smallest optimum and lets ties be pruned.  ``bound(prefix, k)`` must be a
    valid lower bound over completions of the first ``k`` fixed variables
    (``inf`` prunes).
    """
    A = rows.A
    neg_suffix = np.zeros((nvars + 1, A.shape[0]))
    pos_suffix = np.zeros((nvars + 1, A.shape[0]))
    for k in range(nvars - 1, -1, -1):
        neg_suffix[k] = neg_suffix[k + 1] + np.minimum(A[:, k], 0.0)
        pos_suffix[k] = pos_suffix[k + 1] + np.maximum(A[:, k], 0.0)

    def viable(act: np.ndarray, k: int) -> bool:
        return bool(np.all(act + neg_suffix[k] <= rows.hi + ROW_TOL)
                    and np.all(act + pos_suffix[k] >= rows.lo - ROW_TOL))

    best_x: tuple | None = None
    best = math.inf
    nodes = 0
    act0 = np.zeros(A.shape[0])
    stack: list[tuple[tuple, np.ndarray, float]] = []
    if viable(act0, 0):
        b = bound((), 0)
        if b < math.inf:
            stack.append(((), act0, b))
    complete = True
    while stack:
        prefix, act, b = stack.pop()
        if b >= best - TIE_TOL:
            continue
        nodes += 1
        if node_limit is not None and nodes > node_limit:
            stack.append((prefix, act, b))
            complete = False
            break
        k = len(prefix)
        if k == nvars:
            val = leaf(prefix)
            if val is not None and val < best - TIE_TOL:
                best, best_x = val, prefix
            continue
        children = []
        for v in (0, 1):
            child = prefix + (v,)
            cact = act + A[:, k] if v else act
            if not viable(cact, k + 1):
                continue
            cb = bound(child, k + 1)
            if cb < best - TIE_TOL:
                children.append((child, cact, cb))
        stack.extend(reversed(children))
    open_bound = min((b for _, _, b in stack), default=math.inf) if not complete else math.inf
    return DFSResult(best_x, best, complete, nodes, open_bound)
