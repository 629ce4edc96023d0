"""Minimum-cost bipartite assignment with deterministic tie-breaking.

The solver is the O(n^3) shortest-augmenting-path method over dual potentials
(Jonker-Volgenant style). Besides the optimal assignment it returns the dual
variables, whose reduced costs identify every edge that can participate in
*any* optimal assignment. When the optimum is not unique, a refinement pass
walks the rows in order and greedily picks the smallest feasible destination
among those tight edges, yielding the lexicographically smallest optimal
mapping. For generic float costs the optimum is unique and the refinement
does no extra work.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .symmetry import Permutation


def _augmenting_path_solve(cost: np.ndarray):
    """Returns (mapping, u, v): mapping[i] = column of row i, duals u, v."""
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    assigned_row = np.zeros(n + 1, dtype=np.int64)  # column j -> row, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        assigned_row[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = assigned_row[j0]
            free = ~used[1:]
            cur = cost[i0 - 1, :] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            if np.any(better):
                minv[1:][better] = cur[better]
                way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = minv[j1]
            u[assigned_row[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if assigned_row[j0] == 0:
                break
        while j0:
            j_prev = way[j0]
            assigned_row[j0] = assigned_row[j_prev]
            j0 = j_prev
    mapping = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        mapping[assigned_row[j] - 1] = j - 1
    return mapping, u[1:], v[1:]


def assignment_cost(cost: np.ndarray, mapping: np.ndarray) -> float:
    return float(cost[np.arange(len(mapping)), mapping].sum())


def _lexicographic_refine(cost, mapping, u, v, tol):
    """Lexicographically smallest mapping among cost-optimal assignments.

    Complementary slackness restricts optimal assignments to edges with zero
    reduced cost, so only those columns are ever probed; a probe forces the
    edge and re-solves the remaining subproblem to confirm global optimality.
    """
    n = len(mapping)
    total = assignment_cost(cost, mapping)
    reduced = cost - u[:, None] - v[None, :]
    tight = reduced <= tol
    result = mapping.copy()
    col_free = np.ones(n, dtype=bool)
    prefix = 0.0
    rows_after = np.arange(n)
    for i in range(n):
        current = result[i]
        candidates = np.nonzero(tight[i] & col_free)[0]
        candidates = candidates[candidates < current]
        for j in candidates:
            cols = np.nonzero(col_free)[0]
            cols = cols[cols != j]
            rows = rows_after[i + 1 :]
            if len(rows):
                sub_mapping, _, _ = _augmenting_path_solve(cost[np.ix_(rows, cols)])
                sub_cost = float(cost[np.ix_(rows, cols)][np.arange(len(rows)), sub_mapping].sum())
            else:
                sub_mapping, sub_cost = np.zeros(0, dtype=np.int64), 0.0
            if prefix + cost[i, j] + sub_cost <= total + tol:
                result[i] = j
                result[i + 1 :] = cols[sub_mapping]
                break
        col_free[result[i]] = False
        prefix += cost[i, result[i]]
    return result


def solve_assignment(cost: np.ndarray) -> Permutation:
    """Optimal assignment for a square cost matrix, lowest cost = best match.

    Returns the permutation sending row i to column mapping[i]. Among equal
    cost optima the lexicographically smallest mapping is returned.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ShapeError(f"cost matrix must be square, got {cost.shape}")
    if cost.size == 0:
        raise ShapeError("cost matrix is empty")
    if not np.all(np.isfinite(cost)):
        raise ShapeError("cost matrix contains non-finite entries")
    mapping, u, v = _augmenting_path_solve(cost)
    tol = 1e-9 * (1.0 + float(np.abs(cost).max()))
    mapping = _lexicographic_refine(cost, mapping, u, v, tol)
    return Permutation(mapping)
