import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iseo.core import CombinatorialSpace, Instance, LabeledPools, WeightDomain
from iseo.discrete import (DiscreteContext, NoGoodCuts, compute_upper_bound,
                           consistent_weights, solve_surrogate, true_optimum)
from iseo.oracle import FEASIBLE, INFEASIBLE
from reference import brute_optimum, brute_upper_bound, cube, dominated
from states import random_instance, random_pools

BACKENDS = ["enum", "bnb"]


def knap(values, hidden=None):
    n = len(values)
    return Instance("knapsack", 1, n, [values], CombinatorialSpace(n), [WeightDomain(n)],
                    None if hidden is None else [hidden])


def pools_from(m, n, pos, neg, global_pos=()):
    pools = LabeledPools(m, n)
    for p in pos:
        pools.add_sub(0, p, FEASIBLE, 0)
    for q in neg:
        pools.add_sub(0, q, INFEASIBLE, 0)
    for x in global_pos:
        pools.add_global(x, True, 0)
    return pools


@pytest.mark.parametrize("backend", BACKENDS)
def test_surrogate_examples(backend):
    inst = knap([1, 2])
    pools = pools_from(1, 2, [(0, 0)], [(1, 1)], [(0, 0)])
    w = np.array([[0.6, 0.6]])
    res = solve_surrogate(DiscreteContext(inst, backend), w, pools)
    assert res.x == (0, 1) and res.value == 2
    pools.add_sub(0, (0, 1), INFEASIBLE, 1)
    res = solve_surrogate(DiscreteContext(inst, backend), w, pools)
    assert res.x == (1, 0) and res.value == 1


@pytest.mark.parametrize("backend", BACKENDS)
def test_surrogate_all_cut_off(backend):
    inst = knap([1])
    pools = pools_from(1, 1, [(0,)], [(1,)], [(0,)])
    res = solve_surrogate(DiscreteContext(inst, backend), np.array([[0.5]]), pools)
    assert res.x is None


@pytest.mark.parametrize("backend", BACKENDS)
def test_upper_bound_examples(backend):
    inst = knap([1])
    pools = pools_from(1, 1, [(0,)], [(1,)])
    assert compute_upper_bound(DiscreteContext(inst, backend), pools).value == 0
    inst = knap([3, 2])
    pools = pools_from(1, 2, [(0, 0), (1, 0)], [(1, 1)])
    assert compute_upper_bound(DiscreteContext(inst, backend), pools).value == 3


def test_consistent_weights_witness():
    w = consistent_weights(WeightDomain(2), (1, 0), [(0, 0), (1, 0)], [(1, 1)])
    assert w is not None
    assert w[0] <= 1 + 1e-9 and w.sum() >= 1 - 1e-9
    # ties count as consistent: w = (1, 0) puts both labeled points exactly on the plane
    assert consistent_weights(WeightDomain(2), (1, 1), [(1, 1)], [(1, 0)]) is not None
    assert consistent_weights(WeightDomain(2), (1, 1), [], [(1, 0), (0, 1)]) is None


def test_no_good_cuts_from_pools():
    pools = pools_from(1, 2, [(0, 0)], [(1, 1)], [(0, 0)])
    cuts = NoGoodCuts.from_pools(pools)
    assert cuts.positive == [(0, 0)] and cuts.negative == [[(1, 1)]]


@pytest.mark.parametrize("backend", BACKENDS)
def test_true_optimum_matches_brute_force(backend):
    rng = np.random.default_rng(5)
    for _ in range(15):
        inst = random_instance(rng, 10)
        assert true_optimum(inst, backend)[1] == brute_optimum(inst)


def _surrogate_brute(inst, w, pools):
    m, n = inst.m, inst.n
    best = -math.inf
    for x in cube(m * n):
        if not inst.space.contains(x):
            continue
        if any(dominated(x, s) for s in pools.global_pos):
            continue
        blocks = [x[i * n:(i + 1) * n] for i in range(m)]
        if any(any(dominated(q, b) for q in pools.neg[i]) for i, b in enumerate(blocks)):
            continue
        if any(w[i] @ np.array(b) > 1 + 1e-9 for i, b in enumerate(blocks)):
            continue
        z = inst.objective(x)
        best = max(best, z)
    return best


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_surrogate_backends_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, 10)
    pools = random_pools(rng, inst)
    w = rng.uniform(0, 0.8, size=(inst.m, inst.n))
    expected = _surrogate_brute(inst, w, pools)
    for backend in BACKENDS:
        res = solve_surrogate(DiscreteContext(inst, backend), w, pools)
        assert res.value == expected
        if res.x is not None:
            assert inst.space.contains(res.x)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_upper_bound_is_exact_and_sound(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, 9)
    pools = random_pools(rng, inst)
    expected = brute_upper_bound(inst, [pools.pos_of(i) for i in range(inst.m)],
                                 [pools.neg_of(i) for i in range(inst.m)])
    for backend in BACKENDS:
        res = compute_upper_bound(DiscreteContext(inst, backend), pools)
        assert res.complete
        assert res.value == expected
        assert res.value >= brute_optimum(inst) - 1e-6


def test_upper_bound_reuse_of_context_is_monotone():
    rng = np.random.default_rng(2)
    inst = random_instance(rng, 10)
    ctx = DiscreteContext(inst, "enum")
    pools = random_pools(rng, inst, 0)
    last = math.inf
    for t in range(6):
        more = random_pools(rng, inst, 3)
        for i in range(inst.m):
            for p in more.pos[i]:
                if p not in pools.neg[i]:
                    pools.add_sub(i, p, FEASIBLE, t)
            for q in more.neg[i]:
                if q not in pools.pos[i]:
                    pools.add_sub(i, q, INFEASIBLE, t)
        ub = compute_upper_bound(ctx, pools).value
        assert ub <= last
        fresh = compute_upper_bound(DiscreteContext(inst, "enum"), pools).value
        assert ub == fresh
        last = ub


def test_upper_bound_node_limit_degrades_but_stays_valid():
    rng = np.random.default_rng(9)
    inst = random_instance(rng, 12)
    while inst.m * inst.n < 8:
        inst = random_instance(rng, 12)
    pools = random_pools(rng, inst)
    full = compute_upper_bound(DiscreteContext(inst, "bnb"), pools)
    limited = compute_upper_bound(DiscreteContext(inst, "bnb", node_limit=3), pools)
    assert not limited.complete
    assert limited.value >= full.value
