"""Exact minimum-cost bipartite assignment with cost gating.

Entries above the gate are forbidden.  Among all matchings that use only
admissible entries, :func:`solve` returns one of maximum cardinality and, among
those, minimum total cost.  Remaining ties are broken towards the
lexicographically smallest sorted list of ``(row, col)`` pairs, with a row
being matched ranked before it being unmatched.

The heavy lifting is done by :func:`scipy.optimize.linear_sum_assignment` on a
sentinel-substituted square matrix.  Ties are detected from dual potentials
recovered from that solution: an edge can take part in an optimal matching only
if its reduced cost is zero, so if no row has a tight admissible edge that
would improve its lexicographic position the solver's answer is already the
canonical one.  Otherwise a short greedy fixing pass settles the tie exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = ["CostMatrix", "Assignment", "solve", "solve_costs"]


@dataclass(frozen=True)
class CostMatrix:
    costs: np.ndarray
    gate: float = math.inf

    def __post_init__(self):
        costs = np.asarray(self.costs, dtype=float)
        if costs.ndim != 2:
            if costs.size == 0:
                costs = costs.reshape(0, 0)
            else:
                raise ValueError(f"cost matrix must be 2-D, got shape {costs.shape}")
        if not np.all(np.isfinite(costs)):
            raise ValueError("cost matrix contains non-finite entries")
        if np.any(costs < 0):
            raise ValueError("cost matrix contains negative entries")
        if math.isnan(self.gate):
            raise ValueError("gate must not be NaN")
        object.__setattr__(self, "costs", costs)

    @property
    def rows(self) -> int:
        return self.costs.shape[0]

    @property
    def cols(self) -> int:
        return self.costs.shape[1]


@dataclass
class Assignment:
    matches: list[tuple[int, int]]
    unmatched_rows: list[int]
    unmatched_cols: list[int]
    total_cost: float = field(default=0.0)


def solve_costs(costs, gate: float = math.inf) -> Assignment:
    return solve(CostMatrix(np.asarray(costs, dtype=float), gate))


def solve(m: CostMatrix) -> Assignment:
    r, c = m.rows, m.cols
    if r == 0 or c == 0:
        return Assignment([], list(range(r)), list(range(c)), 0.0)

    admissible = m.costs <= m.gate
    if not admissible.any():
        return Assignment([], list(range(r)), list(range(c)), 0.0)

    square, n = _padded(m.costs, admissible)
    row_ind, col_ind = linear_sum_assignment(square)
    assign = np.empty(n, dtype=int)
    assign[row_ind] = col_ind

    if _needs_tiebreak(square, assign, admissible, r, c):
        assign = _lexicographic(square, admissible, r, c)

    matches = [(i, int(assign[i])) for i in range(r)
               if assign[i] < c and admissible[i, assign[i]]]
    matched_rows = {i for i, _ in matches}
    matched_cols = {j for _, j in matches}
    total = math.fsum(m.costs[i, j] for i, j in matches)
    return Assignment(
        matches,
        [i for i in range(r) if i not in matched_rows],
        [j for j in range(c) if j not in matched_cols],
        total,
    )


def _padded(costs: np.ndarray, admissible: np.ndarray) -> tuple[np.ndarray, int]:
    r, c = costs.shape
    n = max(r, c)
    top = float(costs[admissible].max())
    # one forbidden entry must outweigh any admissible matching
    sentinel = (top + 1.0) * (n + 1)
    square = np.zeros((n, n))
    square[:r, :c] = np.where(admissible, costs, sentinel)
    return square, n


def _potentials(square: np.ndarray, assign: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dual potentials certifying the optimality of ``assign``.

    Column potentials are shortest-path distances in the residual graph where
    moving row ``i`` from its column to column ``j`` costs
    ``c[i, j] - c[i, assign[i]]``.  Bellman-Ford with early exit.
    """
    n = len(assign)
    held = square[np.arange(n), assign]
    # weight[a, b]: cost of moving the row that holds column a over to column b
    owner = np.empty(n, dtype=int)
    owner[assign] = np.arange(n)
    weight = square[owner] - held[owner][:, None]
    p = np.zeros(n)
    for _ in range(n):
        relaxed = np.min(p[:, None] + weight, axis=0)
        nxt = np.minimum(p, relaxed)
        if np.array_equal(nxt, p):
            break
        p = nxt
    u = held - p[assign]
    return u, p


def _tolerance(square: np.ndarray) -> float:
    return 1e-9 * max(1.0, float(np.abs(square).max()))


def _needs_tiebreak(square, assign, admissible, r, c) -> bool:
    n = len(assign)
    if n == 1:
        return False
    u, v = _potentials(square, assign)
    reduced = square - u[:, None] - v[None, :]
    tight = reduced <= _tolerance(square)
    for i in range(r):
        j = assign[i]
        cur_matched = j < c and admissible[i, j]
        limit = j if cur_matched else c
        if np.any(tight[i, :limit] & admissible[i, :limit]):
            return True
    return False


def _lexicographic(square, admissible, r, c) -> np.ndarray:
    """Greedy fixing: row by row, take the smallest column that keeps the optimum."""
    n = square.shape[0]
    tol = _tolerance(square)
    best = _opt_value(square)
    work = square.copy()
    sentinel = float(square.max()) + 1.0
    big = sentinel * (n + 1) * 4
    for i in range(r):
        chosen = None
        for j in range(c):
            if not admissible[i, j]:
                continue
            trial = work.copy()
            trial[i, :] = big
            trial[:, j] = big
            trial[i, j] = work[i, j]
            if _opt_value(trial) <= best + tol:
                chosen = j
                break
        if chosen is None:
            # row stays unmatched: forbid all of its admissible entries
            work[i, :c] = np.where(admissible[i], big, work[i, :c])
        else:
            work[i, :] = big
            work[:, chosen] = big
            work[i, chosen] = square[i, chosen]
    row_ind, col_ind = linear_sum_assignment(work)
    assign = np.empty(n, dtype=int)
    assign[row_ind] = col_ind
    return assign


def _opt_value(square: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(square)
    return float(square[rows, cols].sum())
