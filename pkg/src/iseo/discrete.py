"""Exact discrete steps over the known region X.

``solve_surrogate`` maximizes the objective with the learned weights in
place of the unknown constraints, under the no-good cuts.

``compute_upper_bound`` maximizes the objective over the points that some
choice of weights consistent with every label would still accept.  Once x is
fixed, the weight question splits into one small LP per unknown constraint,
which is what keeps this exact without a bilinear solver.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (Bits, Instance, LabeledPools, Row, WeightDomain, from_mask, leq,
                   maximal, minimal, to_mask)
from .search import (MAX_ENUM_BITS, TIE_TOL, BlockCandidates, LinearRows, binary_dfs,
                     pick_min)
from .solvers import LinearSystem, lp_feasible, phase_one

log = logging.getLogger(__name__)

SURROGATE_TOL = 1e-9
CERT_TOL = 1e-9


@dataclass
class NoGoodCuts:
    positive: list[Bits]             # full solutions labeled feasible
    negative: list[list[Bits]]       # per-block sub-solutions labeled infeasible

    @classmethod
    def from_pools(cls, pools: LabeledPools) -> "NoGoodCuts":
        return cls(sorted(pools.global_pos), [pools.neg_of(i) for i in range(pools.m)])


@dataclass
class SurrogateResult:
    x: Bits | None
    value: float
    complete: bool = True
    nodes: int = 0


@dataclass
class BoundResult:
    value: float
    complete: bool = True
    nodes: int = 0
    lp_calls: int = 0


class _Abort(Exception):
    def __init__(self, bound: float):
        super().__init__()
        self.bound = bound


def _coupling_filters(coupling: Sequence[Row], i: int, n: int) -> list[Row]:
    """Necessary conditions a block point must meet on its own, whatever the other blocks do."""
    out = []
    for r in coupling:
        inside = r.coeffs[i * n:(i + 1) * n]
        outside = np.delete(r.coeffs, np.s_[i * n:(i + 1) * n])
        if r.sense == "<=" and np.all(outside >= 0):
            out.append(Row(inside, "<=", r.rhs))
        elif r.sense == ">=" and np.all(outside <= 0):
            out.append(Row(inside, ">=", r.rhs))
    return out


class DiscreteContext:
    """Per-run search state: candidate tables and weight certificates that survive across iterations."""

    def __init__(self, instance: Instance, backend: str = "auto", node_limit: int = 50_000):
        self.instance = instance
        self.m, self.n = instance.m, instance.n
        if backend == "auto":
            backend = "enum" if self.n <= MAX_ENUM_BITS else "bnb"
        if backend not in ("enum", "bnb"):
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend
        self.node_limit = node_limit
        self.block_rows, self.coupling = instance.space.split(self.m, self.n)
        self.assignment = bool(instance.space.tags.get("assignment"))
        self.sample_rows = [self.block_rows[i] + _coupling_filters(self.coupling, i, self.n)
                            for i in range(self.m)]
        self.blocks: list[BlockCandidates] | None = None
        if backend == "enum":
            self.blocks = [BlockCandidates(self.n, self.sample_rows[i]) for i in range(self.m)]
        self.certificates: list[list[np.ndarray]] = [[] for _ in range(self.m)]
        self.region_cache: list[dict[int, bool]] = [{} for _ in range(self.m)]
        self.rejections: list[list[Rejection]] = [[] for _ in range(self.m)]
        self.lp_calls = 0
        self.degraded_bounds = 0

    def sync(self, pools: LabeledPools) -> None:
        if self.blocks is None:
            return
        for i, block in enumerate(self.blocks):
            block.sync(pools.pos[i], pools.neg[i])
        if self.m == 1:
            for x in pools.global_pos:
                self.blocks[0].add_global(to_mask(x))

    def _leaf_ok(self, x: Sequence[int]) -> bool:
        return all(r.satisfied(x) for r in self.coupling)

    def _values(self, i: int) -> np.ndarray:
        return self.instance.values[i]

    def value_of(self, x: Sequence[int]) -> float:
        return self.instance.objective(x)


# ---------------------------------------------------------------------------
# block-wise depth-first search (enumeration backend, any m)
# ---------------------------------------------------------------------------

def _block_search(ctx: DiscreteContext, orders: list[np.ndarray], *,
                  accept: Callable[[int, int], bool] | None = None,
                  pos_cuts: Sequence[tuple[int, ...]] = (), lex_ties: bool = False,
                  node_limit: int | None = None) -> tuple[float, tuple[int, ...] | None, bool, int]:
    """Maximize the sum of per-block candidate values.

    ``orders[b]`` lists candidate indices of block b by decreasing value,
    then increasing mask.  ``accept(b, k)`` may veto a candidate (lazily;
    it is only asked when the candidate could still improve the incumbent).
    ``pos_cuts`` are full solutions as per-block masks that the result must
    not be dominated by.  Returns (value, masks, complete, nodes).
    """
    m = ctx.m
    blocks = ctx.blocks
    # everything below is indexed by position in the search order
    vals = [(blocks[b].bits @ ctx._values(b))[orders[b]] for b in range(m)]
    masks = [blocks[b].masks[orders[b]].astype(np.int64) for b in range(m)]
    alive = [np.ones(len(orders[b]), dtype=bool) for b in range(m)]
    if ctx.assignment:
        # each job is taken at most once, so a free job adds at most its best remaining value
        gains = np.maximum(np.asarray(ctx.instance.values, dtype=float), 0.0)
        job_best = np.zeros((m + 1, ctx.n))
        for b in range(m - 1, -1, -1):
            job_best[b] = np.maximum(job_best[b + 1], gains[b])
        bits = [blocks[b].bits[orders[b]].astype(bool) for b in range(m)]
        shifts = np.arange(ctx.n - 1, -1, -1)
    best = [-math.inf, None]
    nodes = [0]

    def free(b: int, used: int) -> np.ndarray:
        ok = alive[b]
        if ctx.assignment and used:
            ok = ok & ((masks[b] & used) == 0)
        return ok

    def rest(b: int, used: int) -> float:
        total = 0.0
        for c in range(b, m):
            ok = free(c, used)
            k = int(ok.argmax())
            if not ok[k]:
                return -math.inf
            total += float(vals[c][k])
        return total

    def job_bound(b: int, used: int, cand: np.ndarray) -> np.ndarray:
        used_bits = ((used >> shifts) & 1).astype(bool)
        taken = bits[b][cand] | used_bits
        return job_best[b + 1].sum() - taken @ job_best[b + 1]

    def better(total: float, chosen: tuple[int, ...]) -> bool:
        if total > best[0] + TIE_TOL:
            return True
        return lex_ties and abs(total - best[0]) <= TIE_TOL and chosen < best[1]

    def prune(bound: float, chosen: tuple[int, ...]) -> bool:
        if bound < best[0] - TIE_TOL:
            return True
        if bound <= best[0] + TIE_TOL:
            if not lex_ties or best[1] is None:
                return True
            return chosen > best[1][:len(chosen)]
        return False

    def visit(b: int, used: int, total: float, chosen: tuple[int, ...],
              covering: list[int]) -> None:
        if b == m:
            x = tuple(bit for bb, mk in enumerate(chosen) for bit in from_mask(mk, ctx.n))
            if covering or not ctx._leaf_ok(x):
                return
            exact = ctx.value_of(x)
            if better(exact, chosen):
                best[0], best[1] = exact, chosen
            return
        # later blocks only lose options as `used` grows, so this bounds every child
        tail = rest(b + 1, used)
        if tail == -math.inf:
            return
        ok = free(b, used)
        if best[0] > -math.inf:
            ok = ok & (vals[b] + (total + tail) >= best[0] - TIE_TOL)
        cand = np.flatnonzero(ok)
        bounds = total + vals[b][cand] + tail
        if ctx.assignment and b + 1 < m and cand.size:
            bounds = np.minimum(bounds, total + vals[b][cand] + job_bound(b, used, cand))
            if best[0] > -math.inf:
                keep = bounds >= best[0] - TIE_TOL
                cand, bounds = cand[keep], bounds[keep]
        for idx, pos in enumerate(cand.tolist()):
            v = float(vals[b][pos])
            if total + v + tail < best[0] - TIE_TOL:
                break  # later candidates have smaller value
            if not alive[b][pos]:
                continue
            mk = int(masks[b][pos])
            if prune(float(bounds[idx]), chosen + (mk,)):
                continue
            nodes[0] += 1
            if node_limit is not None and nodes[0] > node_limit:
                raise _Abort(total + v + tail)
            if accept is not None and not accept(b, int(orders[b][pos])):
                alive[b][pos] = False
                continue
            cov = [c for c in covering if (mk & ~pos_cuts[c][b]) == 0]
            try:
                visit(b + 1, used | mk, total + v, chosen + (mk,), cov)
            except _Abort as ab:
                later = cand[idx + 1:]
                later = later[alive[b][later]]
                sib = total + float(vals[b][later[0]]) + tail if later.size else -math.inf
                raise _Abort(max(ab.bound, sib)) from None

    try:
        visit(0, 0, 0.0, (), list(range(len(pos_cuts))))
    except _Abort as ab:
        return max(best[0], ab.bound), best[1], False, nodes[0]
    return best[0], best[1], True, nodes[0]


# ---------------------------------------------------------------------------
# surrogate optimization
# ---------------------------------------------------------------------------

def solve_surrogate(ctx: DiscreteContext, w_hat: np.ndarray, pools: LabeledPools
                    ) -> SurrogateResult:
    """Best point of X under the surrogate rows and the no-good cuts, or x=None if none is left."""
    w_hat = np.asarray(w_hat, dtype=float)
    if ctx.backend == "bnb":
        return _surrogate_bnb(ctx, w_hat, NoGoodCuts.from_pools(pools))
    ctx.sync(pools)
    m, n = ctx.m, ctx.n
    if m == 1:
        blk = ctx.blocks[0]
        ok = blk.outside_neg & blk.outside_global & (blk.bits @ w_hat[0] <= 1 + SURROGATE_TOL)
        idx = np.flatnonzero(ok)
        if idx.size == 0:
            return SurrogateResult(None, -math.inf)
        vals = blk.bits[idx] @ ctx._values(0)
        k, val = pick_min(-vals, lambda j: -ctx.value_of(blk.point(int(idx[j]))))
        return SurrogateResult(blk.point(int(idx[k])), -val)
    orders = []
    for b in range(m):
        blk = ctx.blocks[b]
        ok = blk.outside_neg & (blk.bits @ w_hat[b] <= 1 + SURROGATE_TOL)
        idx = np.flatnonzero(ok)
        vals = blk.bits[idx] @ ctx._values(b)
        orders.append(idx[np.lexsort((blk.masks[idx], -vals))])
    cuts = [tuple(to_mask(x[b * n:(b + 1) * n]) for b in range(m)) for x in sorted(pools.global_pos)]
    value, chosen, complete, nodes = _block_search(ctx, orders, pos_cuts=cuts, lex_ties=True,
                                                   node_limit=ctx.node_limit)
    if chosen is None:
        return SurrogateResult(None, -math.inf, complete, nodes)
    x = tuple(bit for mk in chosen for bit in from_mask(mk, n))
    return SurrogateResult(x, ctx.value_of(x), complete, nodes)


def _dantzig(values: np.ndarray, weights: np.ndarray, cap: float) -> float:
    """Fractional knapsack bound; zero-weight items are free."""
    if cap < -SURROGATE_TOL:
        return -math.inf
    total = float(values[weights <= 0].sum())
    pos = weights > 0
    v, w = values[pos], weights[pos]
    order = np.argsort(-v / w, kind="stable")
    room = max(cap, 0.0)
    for j in order:
        if w[j] <= room:
            total += v[j]
            room -= w[j]
        else:
            total += v[j] * room / w[j]
            break
    return total


def _surrogate_bnb(ctx: DiscreteContext, w_hat: np.ndarray, cuts: NoGoodCuts) -> SurrogateResult:
    m, n = ctx.m, ctx.n
    N = m * n
    v = ctx.instance.values.ravel()
    lin = LinearRows.from_rows(ctx.instance.space.rows, N)
    for i in range(m):
        a = np.zeros(N)
        a[i * n:(i + 1) * n] = w_hat[i]
        lin = lin.append(a, -np.inf, 1.0 + SURROGATE_TOL)
        for s in minimal(cuts.negative[i]):
            a = np.zeros(N)
            a[i * n:(i + 1) * n] = s
            lin = lin.append(a, -np.inf, sum(s) - 1.0)
    for s in maximal(cuts.positive):
        lin = lin.append([1.0 - b for b in s], 1.0, np.inf)

    def bound(prefix, k):
        fixed = math.fsum(v[j] for j, b in enumerate(prefix) if b)
        extra = 0.0
        for i in range(m):
            lo, hi = i * n, (i + 1) * n
            if k >= hi:
                continue
            start = max(k, lo)
            used = math.fsum(w_hat[i][j - lo] for j in range(lo, min(k, hi)) if prefix[j])
            extra += _dantzig(v[start:hi], w_hat[i][start - lo:], 1.0 - used)
        return -(fixed + extra) - 1e-9

    def leaf(x):
        return -ctx.value_of(x)

    res = binary_dfs(N, lin, bound, leaf, node_limit=ctx.node_limit)
    if res.x is None:
        return SurrogateResult(None, -math.inf, res.complete, res.nodes)
    return SurrogateResult(tuple(res.x), -res.value, res.complete, res.nodes)


# ---------------------------------------------------------------------------
# upper bound
# ---------------------------------------------------------------------------

def _weight_system(domain: WeightDomain, chi: Sequence[int], positives: Sequence[Bits],
                   negatives: Sequence[Bits]) -> LinearSystem:
    n = domain.n
    rows = [(np.asarray(chi, dtype=float), "<=", 1.0)]
    rows += [(np.asarray(s, dtype=float), "<=", 1.0) for s in positives]
    rows += [(np.asarray(s, dtype=float), ">=", 1.0) for s in negatives]
    rows += [(a, "<=", b) for a, b in domain.extra_rows]
    return LinearSystem(rows, np.zeros(n), np.ones(n))


def consistent_weights(domain: WeightDomain, chi: Sequence[int], positives: Sequence[Bits],
                       negatives: Sequence[Bits]) -> np.ndarray | None:
    """Weights in the domain that accept ``chi`` and classify every labeled point correctly (or None)."""
    return lp_feasible(_weight_system(domain, chi, maximal(positives) if positives else [],
                                      minimal(negatives)))


@dataclass
class Rejection:
    """Farkas certificate that no label-consistent weights accept a family of block points.

    For a point chi', the combined row coefficients are ``base + scale * (chi' - chi)``;
    if even their most negative attainable sum over the unit box stays above
    ``rhs`` (which is negative), the weight system for chi' is infeasible.
    Labels only add rows, so a rejection never expires.
    """

    base: np.ndarray
    scale: float
    chi: np.ndarray
    rhs: float

    @classmethod
    def from_farkas(cls, y: np.ndarray, system: LinearSystem, chi: Sequence[int]
                    ) -> "Rejection":
        G, h = [], []
        for a, sense, b in system.rows:
            G.append(-a if sense == ">=" else a)
            h.append(-b if sense == ">=" else b)
        G += list(np.eye(system.n))
        h += list(system.hi - system.lo)
        G, h = np.array(G), np.array(h)
        return cls(y @ G, float(y[0]), np.asarray(chi, dtype=float), float(y @ h))

    def rejects(self, bits: np.ndarray) -> np.ndarray:
        coef = self.base + self.scale * (np.atleast_2d(bits) - self.chi)
        low = np.minimum(coef, 0.0).sum(axis=1)
        margin = 1e-9 * (1.0 + np.abs(self.base).max(initial=0.0) + abs(self.scale))
        return low > self.rhs + margin


def _any_rejects(rejections: Sequence[Rejection], chi: np.ndarray) -> bool:
    base = np.array([r.base for r in rejections])
    scale = np.array([r.scale for r in rejections])
    anchor = np.array([r.chi for r in rejections])
    rhs = np.array([r.rhs for r in rejections])
    coef = base + scale[:, None] * (chi[None, :] - anchor)
    low = np.minimum(coef, 0.0).sum(axis=1)
    margin = 1e-9 * (1.0 + np.abs(base).max(axis=1) + np.abs(scale))
    return bool(np.any(low > rhs + margin))


class _Region:
    """Membership test for one block of the bounding model, with caching.

    A block point is in the region when some weights consistent with the
    labels accept it.  The region is down-closed and only shrinks as labels
    accumulate, so rejected points (and their supersets) stay rejected, while
    accepted points are re-proved through stored weight certificates.
    """

    def __init__(self, ctx: DiscreteContext, i: int, pools: LabeledPools):
        self.ctx, self.i = ctx, i
        self.domain = ctx.instance.weight_domains[i]
        self.pos = maximal(pools.pos[i]) if pools.pos[i] else []
        self.neg = minimal(pools.neg[i])
        certs = [w for w in ctx.certificates[i] if self._valid(w)]
        ctx.certificates[i] = certs
        self.cert_matrix = np.array(certs).reshape(-1, ctx.n)
        self.accepted: dict[int, bool] = {}

    def _valid(self, w: np.ndarray) -> bool:
        return (all(float(w @ np.asarray(s)) <= 1 + CERT_TOL for s in self.pos)
                and all(float(w @ np.asarray(s)) >= 1 - CERT_TOL for s in self.neg))

    def contains(self, mask: int, bits: np.ndarray | None = None) -> bool:
        hit = self.accepted.get(mask)
        if hit is not None:
            return hit
        if mask in self.ctx.region_cache[self.i] and not self.ctx.region_cache[self.i][mask]:
            return False
        chi = from_mask(mask, self.ctx.n) if bits is None else tuple(int(b) for b in bits)
        ok = self._decide(mask, chi)
        self.accepted[mask] = ok
        return ok

    def _decide(self, mask: int, chi: Bits) -> bool:
        if any(leq(chi, s) for s in self.pos):
            return True
        if self.cert_matrix.shape[0]:
            if np.any(self.cert_matrix @ np.asarray(chi, dtype=float) <= 1 + CERT_TOL):
                return True
        if self.ctx.blocks is None and self.ctx.rejections[self.i]:
            if _any_rejects(self.ctx.rejections[self.i], np.asarray(chi, dtype=float)):
                return False
        self.ctx.lp_calls += 1
        system = _weight_system(self.domain, chi, self.pos, self.neg)
        w, farkas = phase_one(system)
        if w is None:
            self.ctx.region_cache[self.i][mask] = False
            rej = Rejection.from_farkas(farkas, system, chi)
            if rej.rejects(np.asarray(chi, dtype=float))[0]:
                self.ctx.rejections[self.i].append(rej)
                if self.ctx.blocks is not None:
                    blk = self.ctx.blocks[self.i]
                    blk.excluded |= rej.rejects(blk.bits)
            elif self.ctx.blocks is not None:
                self.ctx.blocks[self.i].exclude_supersets(mask)
            return False
        self.ctx.certificates[self.i].append(w)
        self.cert_matrix = np.vstack([self.cert_matrix, w[None, :]])
        return True


def compute_upper_bound(ctx: DiscreteContext, pools: LabeledPools) -> BoundResult:
    """Largest objective over points some label-consistent weights would accept.

    Returns value -inf when every point is cut off.  When the node limit
    stops the search early the returned value is the largest bound among the
    unexplored nodes (still valid, just weaker) and ``complete`` is False.
    """
    lp_before = ctx.lp_calls
    regions = [_Region(ctx, i, pools) for i in range(ctx.m)]
    if ctx.backend == "bnb":
        res = _bound_bnb(ctx, pools, regions)
    else:
        ctx.sync(pools)
        orders = []
        for b in range(ctx.m):
            blk = ctx.blocks[b]
            idx = np.flatnonzero(blk.outside_neg & ~blk.excluded)
            vals = blk.bits[idx] @ ctx._values(b)
            orders.append(idx[np.lexsort((blk.masks[idx], -vals))])

        def accept(b: int, k: int) -> bool:
            blk = ctx.blocks[b]
            if not blk.outside_pos[k]:
                return True
            if blk.excluded[k]:
                return False
            return regions[b].contains(int(blk.masks[k]), blk.bits[k])

        value, _, complete, nodes = _block_search(ctx, orders, accept=accept,
                                                  node_limit=ctx.node_limit)
        res = BoundResult(value, complete, nodes)
    res.lp_calls = ctx.lp_calls - lp_before
    if not res.complete:
        ctx.degraded_bounds += 1
        log.info("bounding hit the node limit; returning a weaker valid bound")
    return res


def _bound_bnb(ctx: DiscreteContext, pools: LabeledPools, regions: list[_Region]) -> BoundResult:
    m, n = ctx.m, ctx.n
    N = m * n
    v = ctx.instance.values.ravel()
    suffix = np.concatenate([np.cumsum(np.maximum(v, 0)[::-1])[::-1], [0.0]])
    lin = LinearRows.from_rows(ctx.instance.space.rows, N)
    for i in range(m):
        for s in minimal(pools.neg[i]):
            a = np.zeros(N)
            a[i * n:(i + 1) * n] = s
            lin = lin.append(a, -np.inf, sum(s) - 1.0)

    def bound(prefix, k):
        if k and prefix[-1]:
            b = (k - 1) // n
            part = prefix[b * n:k] + (0,) * ((b + 1) * n - k)
            if not regions[b].contains(to_mask(part)):
                return math.inf
        fixed = math.fsum(v[j] for j, bit in enumerate(prefix) if bit)
        return -(fixed + suffix[k]) - 1e-9

    def leaf(x):
        return -ctx.value_of(x)

    res = binary_dfs(N, lin, bound, leaf, node_limit=ctx.node_limit)
    best = -res.value if res.x is not None else -math.inf
    if not res.complete:
        best = max(best, -res.open_bound)
    return BoundResult(best, res.complete, res.nodes)


def true_optimum(instance: Instance, backend: str = "auto") -> tuple[Bits, float]:
    """Optimum of the full problem using the hidden weights (for Error% only)."""
    if instance.hidden_weights is None:
        raise ValueError("instance has no hidden weights")
    ctx = DiscreteContext(instance, backend, node_limit=10**9)
    pools = LabeledPools(instance.m, instance.n)
    res = solve_surrogate(ctx, instance.hidden_weights, pools)
    if res.x is None:
        raise ValueError("instance has no feasible point")
    return res.x, res.value
