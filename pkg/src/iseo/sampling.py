"""Picking a fresh sub-solution to label: simple margin (SIM) and closest cutting plane (CUT).

Both strategies search the points of one block that are neither covered by
a labeled-feasible point nor cover a labeled-infeasible one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Bits, Row, leq, maximal, minimal
from .search import (MAX_ENUM_BITS, BlockCandidates, LinearRows, binary_dfs,
                     pick_min)

STRATEGIES = ("sim", "cut")


class SamplerExhausted(RuntimeError):
    """No fresh point was found.

    ``proven`` is False when the search stopped at its node limit, so fresh
    points may still exist.
    """

    def __init__(self, msg: str, proven: bool = True):
        super().__init__(msg)
        self.proven = proven


def margin_distance(w: Sequence[float], mu: Sequence[int]) -> float:
    return abs(1.0 - math.fsum(wj for wj, b in zip(w, mu) if b))


def plane_distance_sq(w: Sequence[float], mu: Sequence[int]) -> float:
    """Squared distance from ``w`` to the hyperplane {p : p.mu = 1}; inf for mu = 0."""
    k = sum(mu)
    if k == 0:
        return math.inf
    return (math.fsum(wj for wj, b in zip(w, mu) if b) - 1.0) ** 2 / k


def plane_distance_sq_explicit(w: Sequence[float], mu: Sequence[int]) -> float:
    """Same quantity through the explicit projection point p (used for cross-checks)."""
    w = np.asarray(w, dtype=float)
    mu = np.asarray(mu, dtype=float)
    p = w - ((w @ mu - 1.0) / (mu @ mu)) * mu
    return float(np.sum((w - p) ** 2))


@dataclass
class SampleRequest:
    index: int
    w_hat: np.ndarray
    positives: list[Bits]
    negatives: list[Bits]
    rows: list[Row] = field(default_factory=list)


@dataclass
class SampleResult:
    point: Bits
    objective: float
    suboptimal: bool = False
    nodes: int = 0


def is_fresh(mu: Bits, positives: Sequence[Bits], negatives: Sequence[Bits]) -> bool:
    return (not any(leq(mu, s) for s in positives)
            and not any(leq(s, mu) for s in negatives))


def sample(strategy: str, w_hat, positives: Sequence[Bits], negatives: Sequence[Bits], *,
           rows: Sequence[Row] = (), block: BlockCandidates | None = None,
           backend: str = "auto", node_limit: int = 50_000) -> SampleResult:
    """Run one sampling strategy on one block.

    ``block`` is an optional persistent candidate table; it is synced with the
    given pools here.  Raises SamplerExhausted when no fresh point remains.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    w = np.asarray(w_hat, dtype=float)
    n = w.shape[0]
    if backend == "auto":
        backend = "enum" if n <= MAX_ENUM_BITS else "bnb"
    if backend == "enum":
        if block is None:
            block = BlockCandidates(n, rows)
        block.sync(positives, negatives)
        res = _sample_enum(strategy, w, block)
    elif backend == "bnb":
        res = _sample_bnb(strategy, w, positives, negatives, rows, node_limit)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    assert is_fresh(res.point, positives, negatives), "sampler returned a labeled point"
    return res


def sim_sample(req: SampleRequest, **kw) -> SampleResult:
    return sample("sim", req.w_hat, req.positives, req.negatives, rows=req.rows, **kw)


def cut_sample(req: SampleRequest, **kw) -> SampleResult:
    return sample("cut", req.w_hat, req.positives, req.negatives, rows=req.rows, **kw)


def _sample_enum(strategy: str, w: np.ndarray, block: BlockCandidates) -> SampleResult:
    alive = block.unlabeled
    if strategy == "cut":
        alive = alive & (block.masks != 0)
    idx = np.flatnonzero(alive)
    if idx.size == 0:
        raise SamplerExhausted("no unlabeled point left in this block")
    bits = block.bits[idx]
    load = bits @ w
    if strategy == "sim":
        approx = np.abs(1.0 - load)
        score = margin_distance
    else:
        approx = (load - 1.0) ** 2 / bits.sum(axis=1)
        score = plane_distance_sq
    k, val = pick_min(approx, lambda j: score(w, block.point(int(idx[j]))))
    return SampleResult(block.point(int(idx[k])), val)


def _sample_bnb(strategy: str, w: np.ndarray, positives, negatives, rows, node_limit
                ) -> SampleResult:
    n = w.shape[0]
    lin = LinearRows.from_rows(rows, n)
    for s in maximal(positives):
        lin = lin.append([1.0 - b for b in s], 1.0, np.inf)
    for s in minimal(negatives):
        lin = lin.append([float(b) for b in s], -np.inf, sum(s) - 1.0)
    if strategy == "cut":
        lin = lin.append(np.ones(n), 1.0, np.inf)

    prefix_load = _prefix_sums(w)
    free_total = prefix_load[-1] - prefix_load
    if strategy == "sim":
        def bound(prefix, k):
            s = math.fsum(wj for wj, b in zip(w, prefix) if b)
            hi = s + free_total[k]
            return max(s - 1.0, 1.0 - hi, 0.0)

        def leaf(x):
            return margin_distance(w, x)
    else:
        asc = [np.concatenate([[0.0], np.cumsum(np.sort(w[k:]))]) for k in range(n + 1)]
        desc = [np.concatenate([[0.0], np.cumsum(np.sort(w[k:])[::-1])]) for k in range(n + 1)]

        def bound(prefix, k):
            s = math.fsum(wj for wj, b in zip(w, prefix) if b)
            ones = sum(prefix)
            counts = ones + np.arange(n - k + 1)
            lo = s + asc[k]
            hi = s + desc[k]
            gap = np.where(lo > 1.0, lo - 1.0, np.where(hi < 1.0, 1.0 - hi, 0.0))
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = np.where(counts > 0, gap ** 2 / np.maximum(counts, 1), np.inf)
            # lower bound must stay below exact leaf values computed with fsum
            return max(float(vals.min()) - 1e-15, 0.0)

        def leaf(x):
            return plane_distance_sq(w, x)

    res = binary_dfs(n, lin, bound, leaf, node_limit=node_limit)
    if res.x is None:
        if res.complete:
            raise SamplerExhausted("no unlabeled point left in this block")
        raise SamplerExhausted("node limit reached before any unlabeled point was found",
                               proven=False)
    return SampleResult(tuple(res.x), res.value, suboptimal=not res.complete, nodes=res.nodes)


def _prefix_sums(w: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(w)])

