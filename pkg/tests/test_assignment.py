import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import brute_force_assignment
from hbtrack.assignment import CostMatrix, solve, solve_costs


def test_two_by_two():
    res = solve_costs([[1, 2], [3, 0]])
    assert res.matches == [(0, 0), (1, 1)]
    assert res.total_cost == 1


def test_gated_diagonal():
    costs = np.full((4, 4), 10.0)
    np.fill_diagonal(costs, 0.0)
    res = solve_costs(costs, gate=5)
    assert res.matches == [(k, k) for k in range(4)]


def test_everything_gated():
    res = solve_costs(np.full((3, 2), 9.0), gate=1.0)
    assert res.matches == []
    assert res.unmatched_rows == [0, 1, 2]
    assert res.unmatched_cols == [0, 1]


def test_empty_and_rectangular():
    assert solve_costs(np.zeros((0, 3))).unmatched_cols == [0, 1, 2]
    res = solve_costs([[5, 1, 3]])
    assert res.matches == [(0, 1)]
    assert res.unmatched_cols == [0, 2]


def test_prefers_more_matches_over_cheaper():
    # one match at cost 0 vs two matches costing 0.9 each
    costs = [[0.0, 0.9], [0.9, 5.0]]
    res = solve_costs(costs, gate=1.0)
    assert sorted(res.matches) == [(0, 1), (1, 0)]


def test_lexicographic_tie_break():
    res = solve_costs(np.ones((3, 3)))
    assert res.matches == [(0, 0), (1, 1), (2, 2)]
    res = solve_costs([[1, 1, 0], [1, 1, 0], [0, 0, 5]])
    # four permutations reach cost 1; (0, 2, 1) is the smallest
    assert res.total_cost == 1
    assert res.matches == [(0, 0), (1, 2), (2, 1)]


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        CostMatrix(np.array([[1.0, -1.0]]))
    with pytest.raises(ValueError):
        CostMatrix(np.array([[np.inf]]))
    with pytest.raises(ValueError):
        CostMatrix(np.zeros(3) + 1)


def test_random_against_enumeration(rng):
    for _ in range(200):
        r, c = rng.integers(1, 6, size=2)
        costs = rng.integers(0, 5, size=(r, c)).astype(float)
        gate = float(rng.choice([math.inf, 2.0, 3.0]))
        res = solve_costs(costs, gate)
        assert (len(res.matches), res.total_cost) == brute_force_assignment(costs, gate)


def test_integer_ties_pick_lexicographic_optimum(rng):
    import itertools
    for _ in range(100):
        n = int(rng.integers(2, 5))
        costs = rng.integers(0, 3, size=(n, n)).astype(float)
        best = min(math.fsum(costs[i, p[i]] for i in range(n))
                   for p in itertools.permutations(range(n)))
        optimal = sorted(p for p in itertools.permutations(range(n))
                         if math.fsum(costs[i, p[i]] for i in range(n)) == best)
        res = solve_costs(costs)
        assert [j for _, j in res.matches] == list(optimal[0])


@given(arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(0, 100, allow_nan=False)))
def test_matching_is_valid_and_optimal(costs):
    res = solve_costs(costs)
    rows = [i for i, _ in res.matches]
    cols = [j for _, j in res.matches]
    assert len(set(rows)) == len(rows) and len(set(cols)) == len(cols)
    assert len(res.matches) == min(costs.shape)
    _, best = brute_force_assignment(costs)
    assert res.total_cost == pytest.approx(best, rel=1e-12, abs=1e-9)


@given(arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 5)),
              elements=st.integers(0, 50).map(float)),
       st.integers(0, 4), st.integers(1, 20))
def test_row_shift_keeps_matching(costs, row, shift):
    row = row % costs.shape[0]
    shifted = costs.copy()
    shifted[row] += shift
    a = solve_costs(costs)
    b = solve_costs(shifted)
    if costs.shape[0] <= costs.shape[1]:
        # every row is matched, so a row offset changes all solutions equally
        assert a.matches == b.matches


def test_deterministic(rng):
    costs = rng.uniform(0, 1, size=(6, 6))
    assert solve_costs(costs).matches == solve_costs(costs.copy()).matches
