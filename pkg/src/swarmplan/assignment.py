"""Linear sum assignment: Hungarian-class solver, cost constructions, brute-force oracle.

The solver is a shortest-augmenting-path (Jonker-Volgenant style) implementation
with O(n^3) complexity, jitted with numba for the per-step policy hot path.
Among equal-cost optima it returns the lexicographically smallest assignment;
ties are resolved by an exact refinement pass driven by the dual variables, so
no epsilon enters the decision (totals are compared with math.fsum, which is
order-independent).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "Assignment",
    "hungarian",
    "brute_force_assignment",
    "lsap_assignment",
    "capt_assignment",
]


@dataclass(frozen=True)
class Assignment:
    """goal_of[i] is the goal index assigned to agent i; a permutation of 0..n-1."""

    goal_of: np.ndarray
    total_cost: float

    def __post_init__(self):
        object.__setattr__(self, "goal_of", np.asarray(self.goal_of, dtype=np.int64))


def _perm_total(cost: np.ndarray, goal_of: np.ndarray) -> float:
    # fsum is correctly rounded and therefore independent of summation order,
    # which makes equal-cost detection exact.
    return math.fsum(cost[i, j] for i, j in enumerate(goal_of))


@njit(cache=True)
def _solve_sap(cost):  # pragma: no cover - exercised via hungarian()
    """Shortest augmenting path LSAP on a square matrix.

    Returns (col4row, row4col, u, v): the assignment and an optimal dual pair.
    """
    n = cost.shape[0]
    u = np.zeros(n)
    v = np.zeros(n)
    col4row = np.full(n, -1, np.int64)
    row4col = np.full(n, -1, np.int64)

    shortest = np.empty(n)
    pred = np.empty(n, np.int64)
    done = np.empty(n, np.bool_)
    in_tree = np.empty(n, np.bool_)

    for cur_row in range(n):
        shortest[:] = np.inf
        pred[:] = -1
        done[:] = False
        in_tree[:] = False
        min_val = 0.0
        i = cur_row
        sink = -1
        while sink == -1:
            in_tree[i] = True
            lowest = np.inf
            j_low = -1
            for j in range(n):
                if done[j]:
                    continue
                r = min_val + cost[i, j] - u[i] - v[j]
                if r < shortest[j]:
                    shortest[j] = r
                    pred[j] = i
                if shortest[j] < lowest or (
                    shortest[j] == lowest and row4col[j] == -1 and
                    (j_low == -1 or row4col[j_low] != -1)
                ):
                    lowest = shortest[j]
                    j_low = j
            min_val = lowest
            j = j_low
            done[j] = True
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
        u[cur_row] += min_val
        for ii in range(n):
            if in_tree[ii] and ii != cur_row:
                u[ii] += min_val - shortest[col4row[ii]]
        for j in range(n):
            if done[j]:
                v[j] -= min_val - shortest[j]
        j = sink
        while True:
            i = pred[j]
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur_row:
                break
    return col4row, row4col, u, v


def _validate_cost(cost: np.ndarray) -> np.ndarray:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    if np.any(cost < 0):
        raise ValueError("cost matrix contains negative entries")
    return cost


def _lex_refine(cost: np.ndarray, goal_of: np.ndarray, u: np.ndarray,
                v: np.ndarray, total: float) -> np.ndarray:
    """Replace goal_of by the lexicographically smallest equal-cost optimum.

    Every entry used by any optimal assignment has zero reduced cost against an
    optimal dual pair (complementary slackness), so the candidate set per row is
    pruned by the duals; the tolerance only over-includes, the accept test is an
    exact fsum comparison against the optimal total.
    """
    n = len(goal_of)
    scale = max(1.0, float(np.max(np.abs(cost)))) if n else 1.0
    tol = 1e-9 * scale
    reduced = cost - u[:, None] - v[None, :]

    # Fast path: unique zero-reduced-cost entry per row => unique optimum.
    support = reduced <= tol
    if np.all(support.sum(axis=1) == 1):
        return goal_of

    goal_of = goal_of.copy()
    fixed_cols = np.zeros(n, dtype=bool)
    for i in range(n - 1):
        cur = goal_of[i]
        for j in range(cur):
            if fixed_cols[j] or not support[i, j]:
                continue
            free_rows = np.arange(i + 1, n)
            free_cols = np.flatnonzero(~fixed_cols & (np.arange(n) != j))
            sub = np.ascontiguousarray(cost[np.ix_(free_rows, free_cols)])
            sub_col4row, _, _, _ = _solve_sap(sub)
            cand = goal_of.copy()
            cand[i] = j
            cand[i + 1:] = free_cols[sub_col4row]
            if _perm_total(cost, cand) == total:
                goal_of = cand
                break
        fixed_cols[goal_of[i]] = True
    return goal_of


def hungarian(cost) -> Assignment:
    """Minimum-total-cost assignment; lexicographically smallest among ties."""
    cost = _validate_cost(cost)
    n = cost.shape[0]
    if n == 0:
        return Assignment(np.empty(0, np.int64), 0.0)
    col4row, _, u, v = _solve_sap(cost)
    goal_of = col4row
    total = _perm_total(cost, goal_of)
    goal_of = _lex_refine(cost, goal_of, u, v, total)
    return Assignment(goal_of, _perm_total(cost, goal_of))


_BRUTE_FORCE_MAX = 8


def brute_force_assignment(cost) -> Assignment:
    """Exhaustive oracle: lexicographically first minimum over all n! permutations."""
    cost = _validate_cost(cost)
    n = cost.shape[0]
    if n > _BRUTE_FORCE_MAX:
        raise ValueError(f"brute force limited to n <= {_BRUTE_FORCE_MAX}, got {n}")
    best_perm = None
    best_total = math.inf
    for perm in itertools.permutations(range(n)):
        t = math.fsum(cost[i, j] for i, j in enumerate(perm))
        if t < best_total:
            best_total = t
            best_perm = perm
    if best_perm is None:
        return Assignment(np.empty(0, np.int64), 0.0)
    return Assignment(np.asarray(best_perm, np.int64), best_total)


def _distance_matrix(positions, goals) -> np.ndarray:
    positions = np.asarray(positions, dtype=np.float64)
    goals = np.asarray(goals, dtype=np.float64)
    if positions.shape != goals.shape:
        raise ValueError(
            f"agent/goal count mismatch: {positions.shape} vs {goals.shape}"
        )
    diff = positions[:, None, :] - goals[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def lsap_assignment(positions, goals) -> Assignment:
    """Assignment minimizing the sum of Euclidean distances."""
    return hungarian(_distance_matrix(positions, goals))


def capt_assignment(positions, goals) -> Assignment:
    """Assignment minimizing the sum of squared distances (CAPT cost)."""
    d = _distance_matrix(positions, goals)
    return hungarian(d * d)
