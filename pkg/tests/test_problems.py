import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iseo.core import Instance, InstanceError
from iseo.discrete import true_optimum
from iseo.oracle import FEASIBLE, SimulatedBackend
from iseo.problems import (CourseCatalog, GapParseError, adversarial_capacity, course_weight,
                           cspp_rows, format_gap, gen_adversarial, gen_catalog, gen_cspp,
                           gen_gap_raw, gen_knapsack, knapsack_from_raw, knapsack_values,
                           parse_gap, truncated_normal)


def roundtrip(inst):
    return Instance.from_dict(json.loads(inst.dumps()))


def same_instance(a, b):
    assert a.kind == b.kind and (a.m, a.n) == (b.m, b.n)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.hidden_weights, b.hidden_weights)
    assert len(a.space.rows) == len(b.space.rows)
    for r, s in zip(a.space.rows, b.space.rows):
        np.testing.assert_array_equal(r.coeffs, s.coeffs)
        assert (r.sense, r.rhs) == (s.sense, s.rhs)


# ---------------------------------------------------------------------------
# knapsack
# ---------------------------------------------------------------------------

def test_knapsack_capacity_examples():
    raw = [10, 20, 130, 150]
    tight = knapsack_from_raw([1, 1, 1, 1], raw, 1)
    assert tight.meta["capacity"] == 10
    np.testing.assert_array_equal(tight.hidden_weights[0], [1, 1, 1, 1])
    loose = knapsack_from_raw([1, 1, 1, 1], raw, 15)
    assert loose.meta["capacity"] == 150
    np.testing.assert_allclose(loose.hidden_weights[0], [0.0667, 0.1333, 0.8667, 1.0],
                               atol=5e-5)


def test_knapsack_value_classes():
    rng = np.random.default_rng(0)
    raw = np.array([500, 500, 3, 9999])
    np.testing.assert_array_equal(knapsack_values("S", raw, rng), [1500, 1500, 1003, 10999])
    w = knapsack_values("W", raw, rng)
    assert np.all(w >= 1) and np.all(np.abs(w - raw) <= 1000)
    u = knapsack_values("U", np.zeros(200, dtype=int), rng)
    assert u.min() >= 1 and u.max() <= 10_000
    with pytest.raises(ValueError):
        knapsack_values("X", raw, rng)


@pytest.mark.parametrize("h", [0, 31])
def test_knapsack_h_out_of_range(h):
    with pytest.raises(ValueError):
        gen_knapsack("U", 5, h, 0)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from("UWS"), st.integers(1, 30), st.integers(1, 40), st.integers(0, 10**6))
def test_knapsack_weights_are_clamped_and_normalized(kind, h, n, seed):
    inst = gen_knapsack(kind, n, h, seed)
    raw = np.array(inst.meta["raw_weights"], dtype=float)
    assert raw.min() >= 1 and raw.max() <= 10_000
    cap = h * raw.sum() / 31
    np.testing.assert_allclose(inst.hidden_weights[0], np.minimum(raw / cap, 1.0))
    assert np.all((inst.hidden_weights >= 0) & (inst.hidden_weights <= 1))
    assert inst.meta["clamped"] == int(np.sum(raw > cap))
    same_instance(inst, roundtrip(inst))


def test_knapsack_is_seed_deterministic():
    a, b = gen_knapsack("W", 12, 7, 42), gen_knapsack("W", 12, 7, 42)
    same_instance(a, b)


# ---------------------------------------------------------------------------
# course selection
# ---------------------------------------------------------------------------

def test_course_weight_example():
    assert abs(14 * 3 / 1700 - 0.02471) <= 5e-6
    assert abs(course_weight(3, 0, 120.0) - 0.09529) <= 5e-6
    # with no extra hours the weight is the fixed part alone
    assert course_weight(3, 0, 0.0) == 14 * 3 / 1700
    assert course_weight(100, 100, 0.0) == 1.0


def test_truncated_normal_boundary():
    rng = np.random.default_rng(1)
    draws = [truncated_normal(rng, 0.0, 1.0, 0.0, 1700.0) for _ in range(200)]
    assert min(draws) >= 0.0 and max(draws) <= 1700.0


def test_cspp_values_rows_and_dedup():
    cat = CourseCatalog([(3, 0, 9), (2, 1, 4), (4, 2, 6)],
                        prerequisites=[[], [frozenset({0})], []],
                        alternatives=[{2}, set(), {0}])
    inst = gen_cspp(cat, 3)
    np.testing.assert_array_equal(inst.values[0], [12, 7, 12])
    rows = inst.space.rows
    assert len(rows) == 2
    alt = [r for r in rows if r.sense == "<=" and r.rhs == 1.0]
    assert len(alt) == 1
    np.testing.assert_array_equal(alt[0].coeffs, [1, 0, 1])
    pre = [r for r in rows if r.rhs == 0.0]
    np.testing.assert_array_equal(pre[0].coeffs, [-1, 1, 0])
    assert inst.space.contains((1, 1, 0)) and not inst.space.contains((0, 1, 0))
    assert not inst.space.contains((1, 0, 1))
    hidden = inst.hidden_weights[0]
    for (a, b, _), h, extra in zip(cat.credits, hidden, inst.meta["extra_hours"]):
        assert abs(h - min((14 * (a + b) + extra) / 1700, 1.0)) <= 1e-12


def test_cspp_corequisite_row_is_equality():
    cat = CourseCatalog([(2, 0, 4)] * 3, corequisites=[{1}, {0}, set()])
    rows = cspp_rows(cat)
    assert [(r.sense, list(r.coeffs)) for r in rows] == [("=", [1, -1, 0])]


@pytest.mark.parametrize("bad, rule", [
    (CourseCatalog([(1, 1, 1)] * 2, corequisites=[{1}, set()]), "rule (c)"),
    (CourseCatalog([(1, 1, 1)] * 2, alternatives=[{1}, set()]), "rule (d)"),
    (CourseCatalog([(1, 1, 1)] * 2, prerequisites=[[frozenset({1})], [frozenset({0})]]),
     "rule (b)"),
    (CourseCatalog([(1, 1, 1)] * 2, prerequisites=[[], [frozenset({0})]],
                   alternatives=[set(), {0}]), "rule (a)"),
])
def test_inconsistent_catalog_names_rule(bad, rule):
    with pytest.raises(InstanceError, match=rule.replace("(", r"\(").replace(")", r"\)")):
        gen_cspp(bad, 0)


def test_single_course_and_zero_density():
    one = gen_catalog(1, 5)
    assert one.size == 1 and one.violations() == []
    flat = gen_catalog(12, 5, prereq_density=0, coreq_density=0, alt_density=0)
    assert cspp_rows(flat) == []
    assert gen_cspp(flat, 5).space.rows == []
    with pytest.raises(ValueError):
        gen_catalog(0, 5)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(0, 10**6))
def test_generated_catalogs_are_consistent(k, seed):
    cat = gen_catalog(k, seed, prereq_density=0.5, coreq_density=0.3, alt_density=0.3)
    assert cat.violations() == []
    inst = gen_cspp(cat, seed)
    assert np.all((inst.hidden_weights >= 0) & (inst.hidden_weights <= 1))
    same_instance(inst, roundtrip(inst))


# ---------------------------------------------------------------------------
# generalized assignment
# ---------------------------------------------------------------------------

def test_gap_minimal_file():
    (inst,) = parse_gap("1 2 2  3 2 1 4  5 5 5 5  10 10")
    assert (inst.m, inst.n) == (2, 2)
    np.testing.assert_array_equal(inst.values, [[3, 2], [1, 4]])
    np.testing.assert_array_equal(inst.hidden_weights, [[0.5, 0.5], [0.5, 0.5]])
    # one job per agent at most: columns of the flattened layout
    assert inst.space.contains((1, 0, 0, 1)) and not inst.space.contains((1, 0, 1, 0))
    assert true_optimum(inst)[1] == 7


def test_gap_parse_errors():
    with pytest.raises(GapParseError, match="expected 4 tokens .* found 2"):
        parse_gap("1 2 2  3 2 1 4  5 5")
    with pytest.raises(GapParseError, match="nonpositive"):
        parse_gap("1 1 1  3  5  0")
    with pytest.raises(GapParseError, match="non-integer"):
        parse_gap("1 1 1  x  5  3")
    with pytest.raises(GapParseError, match="expected 6 tokens, found 7"):
        parse_gap("1 1 1  3  5  3 9")


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(1, 8), st.integers(0, 10**6))
def test_gap_roundtrip(count, m, n, seed):
    raw = [gen_gap_raw(m, n, seed + k) for k in range(count)]
    parsed = parse_gap(format_gap(raw))
    assert len(parsed) == count
    for (values, weights, caps), inst in zip(raw, parsed):
        np.testing.assert_array_equal(inst.values, values)
        assert inst.meta["raw_weights"] == weights.tolist()
        assert inst.meta["capacities"] == caps.tolist()
        np.testing.assert_allclose(inst.hidden_weights,
                                   np.minimum(weights / caps[:, None], 1.0))
        same_instance(inst, roundtrip(inst))


# ---------------------------------------------------------------------------
# adversarial family
# ---------------------------------------------------------------------------

def test_adversarial_capacity():
    assert adversarial_capacity(0.26) == 3
    assert adversarial_capacity(0.5) == 1
    assert adversarial_capacity(0.25) == 3
    with pytest.raises(ValueError):
        adversarial_capacity(1.0)


def test_adversarial_examples():
    base, perturbed = gen_adversarial(8, 0.5)
    oracle = SimulatedBackend(base.hidden_weights[0])
    for j in range(8):
        assert oracle.label(tuple(int(k == j) for k in range(8))) == FEASIBLE
    for pair in itertools.combinations(range(8), 2):
        assert oracle.label(tuple(int(k in pair) for k in range(8))) != FEASIBLE
    inst = perturbed({2, 5})
    x, z = true_optimum(inst)
    assert x == tuple(int(k in (2, 5)) for k in range(8)) and z == 2
    with pytest.raises(ValueError):
        perturbed({1})
    with pytest.raises(ValueError):
        gen_adversarial(2, 0.5)


@pytest.mark.parametrize("n, eps", [(6, 0.5), (7, 0.4), (9, 0.3), (10, 0.26)])
def test_adversarial_labels_match_characterization(n, eps):
    base, perturbed = gen_adversarial(n, eps)
    C = base.meta["C"]
    small = [s for r in range(C + 2) for s in itertools.combinations(range(n), r)]
    bits = lambda s: tuple(int(k in s) for k in range(n))
    base_oracle = SimulatedBackend(base.hidden_weights[0])
    for s in small:
        assert (base_oracle.label(bits(s)) == FEASIBLE) == (len(s) <= C)
    for target in itertools.combinations(range(n), C + 1):
        oracle = SimulatedBackend(perturbed(target).hidden_weights[0])
        for s in small:
            assert (oracle.label(bits(s)) == FEASIBLE) == (len(s) <= C or s == target)
