import io

import numpy as np
import pytest

from iseo.oracle import (FEASIBLE, INFEASIBLE, BudgetExhausted, InteractiveBackend,
                         OracleAborted, OracleSuite, SimulatedBackend)


def test_simulated_boundary_counts_as_feasible():
    b = SimulatedBackend(np.array([0.5, 0.5, 0.6]))
    assert b.label((1, 1, 0)) == FEASIBLE
    assert b.label((1, 0, 1)) == INFEASIBLE
    # 0.1 + 0.2 + 0.7 is 1.0000000000000002 in floating point; an exact sum keeps it feasible
    assert SimulatedBackend(np.array([0.1, 0.2, 0.7])).label((1, 1, 1)) == FEASIBLE


def test_budget_and_cache():
    suite = OracleSuite.simulated(np.array([[0.55, 0.60]]), budget=2)
    assert suite.query(0, (1, 1)) == INFEASIBLE
    assert suite.query(0, (1, 1)) == INFEASIBLE
    assert suite.calls == [1] and suite.cache_hits == [1]
    assert suite.query(0, (0, 1)) == FEASIBLE
    assert suite.exhausted(0)
    with pytest.raises(BudgetExhausted):
        suite.query(0, (1, 0))
    # answered from cache even when the budget is spent
    assert suite.query(0, (0, 1)) == FEASIBLE


def test_inference_skips_the_oracle():
    suite = OracleSuite.simulated(np.array([[0.3, 0.3, 0.3]]), budget=10)
    label, inferred = suite.infer_or_query(0, (1, 0, 0), [(1, 1, 0)])
    assert (label, inferred) == (FEASIBLE, True)
    assert suite.calls == [0]
    label, inferred = suite.infer_or_query(0, (1, 1, 1), [(1, 1, 0)])
    assert (label, inferred) == (FEASIBLE, False)
    assert suite.calls == [1]


def test_probe_is_unbudgeted():
    suite = OracleSuite.simulated(np.array([[0.6, 0.6]]), budget=1)
    suite.query(0, (1, 0))
    assert suite.probe(0, (1, 1)) == INFEASIBLE
    assert suite.probe(0, (1, 0)) == FEASIBLE
    assert suite.calls == [1] and suite.probe_calls == [1]


def test_interactive_prompt_and_answers():
    out = io.StringIO()
    b = InteractiveBackend(2, io.StringIO("maybe\nYes\n"), out)
    assert b.label((0, 1, 1)) == FEASIBLE
    assert out.getvalue().startswith("oracle 2 | items {1,2} | feasible? [y/n] ")
    assert InteractiveBackend(0, io.StringIO("n\n"), io.StringIO()).label((1,)) == INFEASIBLE


def test_interactive_aborts():
    with pytest.raises(OracleAborted):
        InteractiveBackend(0, io.StringIO(""), io.StringIO()).label((1,))
    with pytest.raises(OracleAborted):
        InteractiveBackend(0, io.StringIO("a\nb\nc\n"), io.StringIO()).label((1,))


def test_budget_must_be_positive():
    with pytest.raises(ValueError):
        OracleSuite.simulated(np.array([[0.5]]), budget=0)
