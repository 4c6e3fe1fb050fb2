import csv
import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iseo.core import CombinatorialSpace, Instance, Row, WeightDomain, restrict
from iseo.framework import (CSV_HEADER, RunConfig, final_feasibility_probe, json_float,
                            relative_gap, run, write_csv, write_summary, write_timing)
from iseo.oracle import FEASIBLE, OracleSuite
from reference import brute_optimum
from states import block_label, random_instance

PAIRS = list(itertools.product(["svm", "sep"], ["sim", "cut"]))


def knap(values, hidden, rows=()):
    n = len(values)
    return Instance("knapsack", 1, n, [values], CombinatorialSpace(n, list(rows)),
                    [WeightDomain(n)], [hidden])


def simulate(inst, budget=math.inf, **kw):
    cfg = RunConfig(budget=budget, **kw)
    return run(inst, OracleSuite.simulated(inst.hidden_weights, budget), cfg,
               z_star=brute_optimum(inst))


def ticking_clock(step=0.001):
    state = {"t": 0.0}

    def clock():
        state["t"] += step
        return state["t"]
    return clock


def truly_feasible(inst, x):
    return inst.space.contains(x) and all(
        block_label(inst, i, restrict(x, i, inst.m, inst.n)) == FEASIBLE for i in range(inst.m))


@pytest.mark.parametrize("separator, sampler", PAIRS)
def test_two_item_example(separator, sampler):
    rec = simulate(knap([1, 2], [0.55, 0.60]), 50, separator=separator, sampler=sampler)
    assert rec.x_hat == (0, 1) and rec.lb == 2
    assert rec.error == 0 and rec.ub == 2 and rec.reached_threshold
    assert rec.to_optimum is not None and rec.to_threshold is not None


@pytest.mark.parametrize("separator, sampler", PAIRS)
def test_full_weight_items_are_each_feasible(separator, sampler):
    rec = simulate(knap([3, 5], [1.0, 1.0]), separator=separator, sampler=sampler, thr=0)
    assert rec.x_hat == (0, 1) and rec.lb == 5 and rec.ub == 5


def test_everything_feasible_needs_no_further_queries():
    # one round is still needed to certify the bound; every sample is implied by all-ones
    rec = simulate(knap([2, 3], [0.2, 0.3]), 10)
    assert rec.x_hat == (1, 1) and rec.iters == 1 and rec.calls == [1] and rec.ub == 5


def test_tiny_budget_sets_flag():
    inst = knap([4, 5, 6], [0.5, 0.5, 0.5])
    rec = simulate(inst, 1)
    assert rec.budget_exhausted and not rec.reached_threshold
    assert max(rec.calls) <= 1
    assert rec.x_hat == (0, 0, 0) and rec.lb == 0 and rec.gap == math.inf


def test_gap_convention():
    assert relative_gap(5, 5) == 0 and relative_gap(4, 5) == 0
    assert relative_gap(1, 0) == math.inf and relative_gap(1, -1) == math.inf
    assert relative_gap(6, 4) == 0.5


def test_config_validation_and_oracle_count():
    for bad in ({"separator": "x"}, {"sampler": "x"}, {"budget": 0}, {"thr": -1},
                {"bound_every": 0}, {"backend": "cplex"}):
        with pytest.raises(ValueError):
            RunConfig(**bad)
    inst = knap([1], [0.5])
    with pytest.raises(ValueError):
        run(inst, OracleSuite.simulated(np.ones((2, 1)), 5), RunConfig())


def test_time_limit_stops_loop():
    inst = gen = random_instance(np.random.default_rng(4), 10)
    cfg = RunConfig(time_limit=0.0, budget=math.inf, thr=0)
    rec = run(gen, OracleSuite.simulated(inst.hidden_weights, math.inf), cfg,
              clock=ticking_clock())
    assert rec.iters == 0
    assert rec.timeout or rec.reached_threshold


def _check_invariants(inst, rec, budget):
    z = brute_optimum(inst)
    assert max(rec.calls) <= budget
    for it in rec.iterations:
        assert it["lb"] <= z + 1e-9 <= it["ub"] + 2e-9
    ubs = [it["ub"] for it in rec.iterations]
    assert all(b <= a for a, b in zip(ubs, ubs[1:]))
    assert truly_feasible(inst, rec.x_hat)
    assert rec.lb == inst.objective(rec.x_hat)
    rec.pools.check()
    for i in range(inst.m):
        assert set(rec.pools.pos[i]).isdisjoint(rec.pools.neg[i])
        for chi in rec.pools.pos[i]:
            assert block_label(inst, i, chi) == FEASIBLE
        for chi in rec.pools.neg[i]:
            assert block_label(inst, i, chi) != FEASIBLE


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(PAIRS), st.integers(2, 30))
def test_run_invariants(seed, pair, budget):
    inst = random_instance(np.random.default_rng(seed), 9)
    oracles = OracleSuite.simulated(inst.hidden_weights, budget)
    rec = run(inst, oracles, RunConfig(*pair, budget=budget), z_star=brute_optimum(inst))
    _check_invariants(inst, rec, budget)
    # budgeted calls are distinct questions; repeats come from the cache
    assert rec.calls == [len(c) for c in oracles.cache]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(PAIRS))
def test_unlimited_budget_reaches_optimum(seed, pair):
    inst = random_instance(np.random.default_rng(seed), 8)
    rec = simulate(inst, separator=pair[0], sampler=pair[1], thr=0)
    assert rec.error == 0 and rec.gap == 0
    _check_invariants(inst, rec, math.inf)


def test_runs_are_deterministic(tmp_path):
    inst = random_instance(np.random.default_rng(17), 10)
    outs = []
    for k in range(2):
        cfg = RunConfig("sep", "cut", budget=40, thr=0)
        rec = run(inst, OracleSuite.simulated(inst.hidden_weights, 40), cfg,
                  z_star=brute_optimum(inst), clock=ticking_clock())
        write_summary(rec, tmp_path / f"{k}.json")
        write_csv(rec, tmp_path / f"{k}.csv")
        outs.append(((tmp_path / f"{k}.json").read_bytes(), (tmp_path / f"{k}.csv").read_bytes()))
    assert outs[0] == outs[1]


def test_output_files(tmp_path):
    rec = simulate(knap([4, 5, 6], [0.5, 0.5, 0.5]), 1)
    write_csv(rec, tmp_path / "r.csv")
    write_summary(rec, tmp_path / "r.json", {"instance": "toy"})
    write_timing(rec, tmp_path / "t.json")
    with open(tmp_path / "r.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_HEADER
    assert rows[1][CSV_HEADER.index("phase")] == "init"
    summary = json.loads((tmp_path / "r.json").read_text())
    assert summary["instance"] == "toy"
    assert summary["gap_pct"] == "inf" and json_float(summary["gap_pct"]) == math.inf
    assert "time" not in summary
    assert set(json.loads((tmp_path / "t.json").read_text())) == {
        "time", "time_to_thres", "time_to_opt"}


def test_probe_examples():
    inst = knap([1, 2, 3], [0.5, 0.4, 0.3])
    oracles = OracleSuite.simulated(inst.hidden_weights, 1)
    ok, x = final_feasibility_probe(inst, inst.hidden_weights, oracles)
    assert ok and x == (0, 1, 1)
    ok, x = final_feasibility_probe(inst, np.zeros((1, 3)), oracles)
    assert not ok and x == (1, 1, 1)
    assert oracles.calls == [0] and oracles.probe_calls == [2]
    only_zero = knap([1], [0.5], [Row([1.0], "<=", 0.0)])
    ok, x = final_feasibility_probe(only_zero, np.zeros((1, 1)),
                                    OracleSuite.simulated(only_zero.hidden_weights, 1))
    assert ok and x == (0,)
