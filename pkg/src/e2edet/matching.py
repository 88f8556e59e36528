"""One-to-one assignment of ground truths to predictions.

The solver is the shortest-augmenting-path form of the Hungarian method
with row/column potentials, O(G^2 N) for a G x N matrix with G <= N.
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .geometry import GroundTruthSet, PredictionSet
from .losses import LossParams, foreground_cost

BRUTE_FORCE_CAP = 9


@dataclass
class Assignment:
    pairs: List[Tuple[int, int]]
    objective: float
    unmatched: List[int] = field(default_factory=list)

    def as_dict(self):
        return dict(self.pairs)

    @property
    def pred_indices(self) -> List[int]:
        return [j for _, j in self.pairs]


def _as_matrix(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("matrix has non-finite entries")
    return q


def solve_min_cost(cost) -> np.ndarray:
    """Column index for each row of a min-cost injective assignment.

    Columns are scanned in index order and the first minimum wins, which
    makes the result deterministic under ties.
    """
    cost = _as_matrix(cost)
    g, n = cost.shape
    if g > n:
        raise ValueError(f"cannot assign {g} rows injectively to {n} columns")
    if g == 0:
        return np.zeros(0, dtype=np.int64)
    # 1-based bookkeeping with a virtual column 0
    a = np.zeros((g + 1, n + 1))
    a[1:, 1:] = cost
    u = np.zeros(g + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, g + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            masked = np.where(free, minv, np.inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    cols = np.full(g, -1, dtype=np.int64)
    for j in range(1, n + 1):
        if p[j]:
            cols[p[j] - 1] = j - 1
    return _lexicographic_optimum(cost, cols, u[1:], v[1:])


def _lexicographic_optimum(cost: np.ndarray, cols: np.ndarray, u: np.ndarray,
                           v: np.ndarray) -> np.ndarray:
    """Among all optimal assignments, the one with the smallest column sequence.

    With optimal potentials ``u, v`` an assignment is optimal exactly when it
    uses only tight edges (zero reduced cost) and covers every column whose
    potential is negative. Rows are fixed in order to their smallest feasible
    column; feasibility of the rest is one alternating-path search in which
    implicit zero-cost filler rows may hold any column of zero potential.
    """
    g, n = cost.shape
    tol = 1e-9 * (1.0 + float(np.abs(cost).max()))
    tight = (cost - u[:, None] - v[None, :]) <= tol
    required = v < -tol
    owner = np.full(n, -1, dtype=np.int64)  # -1: held by a filler row
    owner[cols] = np.arange(g)
    cols = cols.copy()
    fixed_col = np.zeros(n, dtype=bool)

    def reroute(start_row: int, taken: int, freed: int) -> bool:
        # Breadth-first search over columns for a path that re-homes
        # ``start_row`` (a filler if -1) and ends in ``freed``.
        def moves(row):
            ok = ~fixed_col
            ok[taken] = False
            return np.flatnonzero(ok & (tight[row] if row >= 0 else ~required))

        parent = {}
        frontier = []
        for y in moves(start_row):
            parent[int(y)] = None
            frontier.append(int(y))
        while frontier:
            nxt = []
            for y in frontier:
                if y == freed:
                    path = [y]
                    while parent[path[-1]] is not None:
                        path.append(parent[path[-1]])
                    path.reverse()
                    # each row on the path steps to the next column
                    movers = [start_row] + [int(owner[c]) for c in path[:-1]]
                    for row, col in zip(movers, path):
                        owner[col] = row
                        if row >= 0:
                            cols[row] = col
                    return True
                for z in moves(int(owner[y])):
                    if int(z) not in parent:
                        parent[int(z)] = y
                        nxt.append(int(z))
            frontier = nxt
        return False

    for i in range(g):
        for j in np.flatnonzero(tight[i] & ~fixed_col):
            j = int(j)
            if j == cols[i]:
                break
            saved_cols, saved_owner = cols.copy(), owner.copy()
            prev, displaced = int(cols[i]), int(owner[j])
            cols[i] = j
            owner[j] = i
            owner[prev] = -1
            fixed_col[j] = True
            if reroute(displaced, j, prev):
                fixed_col[j] = False
                break
            fixed_col[j] = False
            cols[:], owner[:] = saved_cols, saved_owner
        fixed_col[cols[i]] = True
    return cols


def _finish(q: np.ndarray, cols) -> Assignment:
    pairs, unmatched, total = [], [], 0.0
    for i, j in enumerate(cols):
        if q[i, j] > 0.0:
            pairs.append((i, int(j)))
            total += q[i, j]
        else:
            unmatched.append(i)
    return Assignment(pairs, float(total), unmatched)


def hungarian_max(q) -> Assignment:
    """Injective assignment maximising the summed quality.

    Rows that can only be served by a zero-quality column are reported in
    ``unmatched`` rather than bound to an arbitrary prediction.
    """
    q = _as_matrix(q)
    g, n = q.shape
    if g > n:
        raise ValueError(f"more ground truths ({g}) than predictions ({n})")
    return _finish(q, solve_min_cost(-q))


@functools.lru_cache(maxsize=None)
def _permutations(n: int, g: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n), g)), dtype=np.int64).reshape(-1, g)


def brute_force_match(q) -> Assignment:
    """Exhaustive optimum over all G-permutations of N columns (N <= 9)."""
    q = _as_matrix(q)
    g, n = q.shape
    if g > n:
        raise ValueError(f"more ground truths ({g}) than predictions ({n})")
    if n > BRUTE_FORCE_CAP:
        raise ValueError(f"brute force limited to N <= {BRUTE_FORCE_CAP}, got {n}")
    if g == 0:
        return Assignment([], 0.0, [])
    perms = _permutations(n, g)
    totals = q[0, perms[:, 0]]
    for i in range(1, g):
        totals = totals + q[i, perms[:, i]]
    # argmax returns the first optimum in lexicographic order
    best_cols = perms[int(np.argmax(totals))]
    return _finish(q, best_cols)


def loss_cost_match(gts: GroundTruthSet, preds: PredictionSet,
                    params: LossParams = LossParams()) -> Assignment:
    """Assignment minimising the summed foreground loss; every gt is matched."""
    g, n = len(gts), len(preds)
    if g > n:
        raise ValueError(f"more ground truths ({g}) than predictions ({n})")
    cost = foreground_cost(gts, preds, params)
    cols = solve_min_cost(cost)
    pairs = [(i, int(j)) for i, j in enumerate(cols)]
    total = 0.0
    for i, j in pairs:
        total += cost[i, j]
    return Assignment(pairs, float(total), [])
