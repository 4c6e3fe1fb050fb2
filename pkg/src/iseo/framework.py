"""The interactive loop: separate, sample, optimize, bound, until the gap closes or budgets run out."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .core import Bits, Instance, LabeledPools, restrict
from .discrete import DiscreteContext, compute_upper_bound, solve_surrogate
from .oracle import FEASIBLE, OracleSuite
from .sampling import STRATEGIES, SamplerExhausted, sample
from .separation import SEPARATORS, separate

log = logging.getLogger(__name__)

CSV_HEADER = ("t", "lb", "ub", "calls_total", "calls_max_oracle", "phase", "elapsed_ms")


@dataclass
class RunConfig:
    separator: str = "sep"
    sampler: str = "cut"
    budget: float = 2000
    thr: float = 0.01
    backend: str = "auto"
    seed: int = 0
    time_limit: float = 600.0
    bound_every: int = 1
    node_limit: int = 50_000
    max_iters: int | None = None

    def __post_init__(self):
        if self.separator not in SEPARATORS:
            raise ValueError(f"separator must be one of {SEPARATORS}")
        if self.sampler not in STRATEGIES:
            raise ValueError(f"sampler must be one of {STRATEGIES}")
        if not self.budget >= 1:
            raise ValueError("budget must be at least 1")
        if not self.thr >= 0:
            raise ValueError("thr must be nonnegative")
        if self.bound_every < 1:
            raise ValueError("bound_every must be at least 1")
        if self.backend not in ("auto", "enum", "bnb"):
            raise ValueError("backend must be auto, enum or bnb")


def relative_gap(ub: float, lb: float) -> float:
    """(UB - LB) / LB, with 0 once UB <= LB and +inf while LB <= 0."""
    if ub <= lb:
        return 0.0
    if lb <= 0:
        return math.inf
    return (ub - lb) / lb


@dataclass
class Milestone:
    calls: int
    iters: int
    seconds: float


@dataclass
class RunRecord:
    m: int
    n: int
    config: RunConfig
    rows: list[dict[str, Any]] = field(default_factory=list)
    iterations: list[dict[str, Any]] = field(default_factory=list)
    lb: float = 0.0
    ub: float = math.inf
    x_hat: Bits = ()
    w_final: np.ndarray | None = None
    calls: list[int] = field(default_factory=list)
    cache_hits: list[int] = field(default_factory=list)
    iters: int = 0
    seconds: float = 0.0
    reached_threshold: bool = False
    budget_exhausted: bool = False
    search_exhausted: bool = False
    timeout: bool = False
    z_star: float | None = None
    to_threshold: Milestone | None = None
    to_optimum: Milestone | None = None
    sep_degenerate: int = 0
    sep_misclassified: int = 0
    suboptimal_samples: int = 0
    degraded_bounds: int = 0
    bounding_lp_calls: int = 0
    final_feasible: bool | None = None
    probe_calls: int = 0
    labeled_positive: int = 0
    labeled_negative: int = 0
    pools: LabeledPools | None = field(default=None, repr=False, compare=False)

    @property
    def gap(self) -> float:
        return relative_gap(self.ub, self.lb)

    @property
    def error(self) -> float | None:
        if self.z_star is None:
            return None
        if self.z_star <= 0:
            return 0.0 if self.lb >= self.z_star else math.inf
        return max(0.0, (self.z_star - self.lb) / self.z_star)

    @property
    def error_zero(self) -> bool | None:
        err = self.error
        return None if err is None else err <= 1e-12

    @property
    def total_calls(self) -> int:
        return int(sum(self.calls))

    def summary(self) -> dict[str, Any]:
        """Everything deterministic about the run (no wall-clock values)."""
        err = self.error
        return _json_safe({
            "m": self.m, "n": self.n,
            "config": asdict(self.config),
            "opt": self.error_zero,
            "gap_zero": self.gap <= 1e-12,
            "thres": self.reached_threshold,
            "feas": self.final_feasible,
            "gap_pct": 100 * self.gap,
            "error_pct": None if err is None else 100 * err,
            "calls": self.total_calls,
            "calls_per_oracle": list(self.calls),
            "iters": self.iters,
            "lb": self.lb, "ub": self.ub, "z_star": self.z_star,
            "calls_to_thres": self.to_threshold.calls if self.to_threshold else None,
            "iters_to_thres": self.to_threshold.iters if self.to_threshold else None,
            "calls_to_opt": self.to_optimum.calls if self.to_optimum else None,
            "iters_to_opt": self.to_optimum.iters if self.to_optimum else None,
            "x_hat": list(self.x_hat),
            "w_final": None if self.w_final is None else self.w_final.tolist(),
            "budget_exhausted": self.budget_exhausted,
            "search_exhausted": self.search_exhausted,
            "timeout": self.timeout,
            "cache_hits": list(self.cache_hits),
            "probe_calls": self.probe_calls,
            "sep_degenerate": self.sep_degenerate,
            "sep_misclassified": self.sep_misclassified,
            "suboptimal_samples": self.suboptimal_samples,
            "degraded_bounds": self.degraded_bounds,
            "bounding_lp_calls": self.bounding_lp_calls,
            "labeled_positive": self.labeled_positive,
            "labeled_negative": self.labeled_negative,
            "trajectory": [{k: it[k] for k in ("t", "lb", "ub", "calls")}
                           for it in self.iterations],
        })

    def timing(self) -> dict[str, Any]:
        return _json_safe({
            "time": self.seconds,
            "time_to_thres": self.to_threshold.seconds if self.to_threshold else None,
            "time_to_opt": self.to_optimum.seconds if self.to_optimum else None,
        })


def _json_safe(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def json_float(v) -> float | None:
    """Inverse of the string encoding used for non-finite floats in summaries."""
    return None if v is None else float(v)


class _Clock:
    def __init__(self, clock: Callable[[], float]):
        self.clock = clock
        self.start = clock()

    def elapsed(self) -> float:
        return self.clock() - self.start


def run(instance: Instance, oracles: OracleSuite, config: RunConfig, *,
        z_star: float | None = None, clock: Callable[[], float] = time.perf_counter
        ) -> RunRecord:
    m, n = instance.m, instance.n
    if oracles.m != m:
        raise ValueError("need one oracle per unknown constraint")
    timer = _Clock(clock)
    rec = RunRecord(m, n, config, z_star=z_star)
    ctx = DiscreteContext(instance, config.backend, config.node_limit)
    pools = LabeledPools(m, n)
    domains = instance.weight_domains

    def snapshot(t: int, phase: str) -> None:
        rec.rows.append({"t": t, "lb": rec.lb, "ub": rec.ub, "calls_total": sum(oracles.calls),
                         "calls_max_oracle": max(oracles.calls),
                         "phase": phase, "elapsed_ms": round(1000 * timer.elapsed(), 3)})

    def note_optimum(t: int) -> None:
        if z_star is not None and rec.to_optimum is None and rec.lb >= z_star - 1e-9:
            rec.to_optimum = Milestone(sum(oracles.calls), t, timer.elapsed())

    # initial labeled sets: the empty selection is feasible, the full one is presumed infeasible
    zero, ones = instance.zeros(), instance.ones()
    pools.add_global(zero, True, 0)
    for i in range(m):
        pools.add_sub(i, restrict(zero, i, m, n), FEASIBLE, 0)
    full_labels = []
    for i in range(m):
        sub = restrict(ones, i, m, n)
        label = oracles.query(i, sub)
        pools.add_sub(i, sub, label, 0)
        full_labels.append(label)
    x_best, rec.lb = zero, instance.objective(zero)
    if all(lab == FEASIBLE for lab in full_labels) and instance.space.contains(ones):
        pools.add_global(ones, True, 0)
        x_best, rec.lb = ones, instance.objective(ones)
    else:
        pools.add_global(ones, False, 0)
    note_optimum(0)
    snapshot(0, "init")

    w_prev: list[np.ndarray | None] = [None] * m
    exhausted: set[int] = set()
    t = 0
    flag = True
    while relative_gap(rec.ub, rec.lb) > config.thr and flag:
        if timer.elapsed() > config.time_limit:
            rec.timeout = True
            break
        if config.max_iters is not None and t >= config.max_iters:
            break
        t += 1
        w_hat = np.zeros((m, n))
        for i in range(m):
            sep = separate(config.separator, domains[i], pools.pos_of(i), pools.neg_of(i),
                           w_prev[i])
            w_hat[i] = sep.w_hat
            w_prev[i] = sep.w_hat
            rec.sep_degenerate += int(sep.degenerate)
            rec.sep_misclassified += sep.misclassified
        new_pos: list[list[Bits]] = [[] for _ in range(m)]
        new_neg: list[list[Bits]] = [[] for _ in range(m)]

        def label_sub(i: int, u: Bits) -> int:
            label, inferred = oracles.infer_or_query(i, u, pools.pos[i])
            if not inferred:
                (new_pos if label == FEASIBLE else new_neg)[i].append(u)
            return label

        for phase in ("sampling", "optimization"):
            if any(oracles.calls[i] >= config.budget for i in range(m)):
                flag = False
                rec.budget_exhausted = True
                break
            if phase == "sampling":
                for i in range(m):
                    if i in exhausted:
                        continue
                    try:
                        res = sample(config.sampler, w_hat[i], pools.pos_of(i), pools.neg_of(i),
                                     rows=ctx.sample_rows[i],
                                     block=ctx.blocks[i] if ctx.blocks else None,
                                     backend=ctx.backend, node_limit=config.node_limit)
                    except SamplerExhausted as exc:
                        if exc.proven:
                            exhausted.add(i)
                            log.info("constraint %d: every sub-solution is labeled or implied", i)
                        else:
                            rec.suboptimal_samples += 1
                            log.info("constraint %d: sampler hit its node limit", i)
                        continue
                    rec.suboptimal_samples += int(res.suboptimal)
                    label_sub(i, res.point)
            else:
                # an exhausted sampler means every label of that block is known, so the
                # no-good cuts alone describe it and a misfit surrogate cannot hide points
                w_opt = w_hat.copy()
                w_opt[sorted(exhausted)] = 0.0
                opt = solve_surrogate(ctx, w_opt, pools)
                if opt.x is None:
                    if len(exhausted) == m and opt.complete:
                        rec.search_exhausted = True
                        flag = False
                    log.info("iteration %d: surrogate model has no point left", t)
                else:
                    labels = [label_sub(i, restrict(opt.x, i, m, n)) for i in range(m)]
                    if all(lab == FEASIBLE for lab in labels):
                        pools.add_global(opt.x, True, t)
                        z = instance.objective(opt.x)
                        if z > rec.lb:
                            rec.lb, x_best = z, opt.x
                            note_optimum(t)
                    else:
                        pools.add_global(opt.x, False, t)
            snapshot(t, phase)
        for i in range(m):
            for u in new_pos[i]:
                pools.add_sub(i, u, FEASIBLE, t)
            for u in new_neg[i]:
                pools.add_sub(i, u, -FEASIBLE, t)
        if t % config.bound_every == 0 or not flag:
            bound = compute_upper_bound(ctx, pools)
            rec.bounding_lp_calls += bound.lp_calls
            rec.degraded_bounds += int(not bound.complete)
            rec.ub = min(rec.ub, max(bound.value, rec.lb))
            snapshot(t, "bounding")
        rec.iterations.append({"t": t, "lb": rec.lb, "ub": rec.ub, "calls": list(oracles.calls)})
        if rec.to_threshold is None and relative_gap(rec.ub, rec.lb) <= config.thr:
            rec.to_threshold = Milestone(sum(oracles.calls), t, timer.elapsed())

    rec.iters = t
    rec.reached_threshold = relative_gap(rec.ub, rec.lb) <= config.thr
    best_pos = max(sorted(pools.global_pos), key=instance.objective)
    if instance.objective(best_pos) > rec.lb:  # cannot happen; kept as a guard
        x_best, rec.lb = best_pos, instance.objective(best_pos)
    rec.x_hat = x_best
    rec.w_final = np.vstack([
        separate(config.separator, domains[i], pools.pos_of(i), pools.neg_of(i), w_prev[i]).w_hat
        for i in range(m)])
    rec.calls = list(oracles.calls)
    rec.cache_hits = list(oracles.cache_hits)
    rec.labeled_positive = sum(len(p) for p in pools.pos)
    rec.labeled_negative = sum(len(p) for p in pools.neg)
    rec.seconds = timer.elapsed()
    pools.check()
    rec.pools = pools
    return rec


def final_feasibility_probe(instance: Instance, w_final: np.ndarray, oracles: OracleSuite,
                            backend: str = "auto") -> tuple[bool, Bits | None]:
    """Optimize with the final weights and no cuts, then ask each oracle about the result.

    Probe questions are tallied separately from the run budget.
    """
    ctx = DiscreteContext(instance, backend, node_limit=10**9)
    res = solve_surrogate(ctx, np.asarray(w_final, dtype=float),
                          LabeledPools(instance.m, instance.n))
    if res.x is None:
        return True, None
    ok = all(oracles.probe(i, restrict(res.x, i, instance.m, instance.n)) == FEASIBLE
             for i in range(instance.m))
    return ok, res.x


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------

def write_csv(rec: RunRecord, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_HEADER)
        writer.writeheader()
        for row in rec.rows:
            writer.writerow(_json_safe(row))


def write_summary(rec: RunRecord, path: str | Path, extra: dict[str, Any] | None = None) -> None:
    data = rec.summary()
    if extra:
        data.update(_json_safe(extra))
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def write_timing(rec: RunRecord, path: str | Path) -> None:
    Path(path).write_text(json.dumps(rec.timing(), indent=2, sort_keys=True) + "\n")
