"""Minimum-cost linear assignment (Kuhn-Munkres with row/column potentials)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteCost


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...]
    total_cost: float

    def as_dict(self) -> dict[int, int]:
        return dict(self.pairs)


def _solve_square(a: np.ndarray) -> np.ndarray:
    """Return ``col[i]`` for an ``n x n`` cost matrix, O(n^3).

    Rows are inserted one at a time in index order; each insertion runs a
    Dijkstra-style shortest augmenting path over reduced costs and updates the
    dual potentials once at the end. Ties in the column scan go to the lowest
    column index, which makes the result deterministic.
    """
    n = a.shape[0]
    u = np.zeros(n)
    v = np.zeros(n)
    row_of = np.full(n, -1, dtype=np.int64)
    col_of = np.full(n, -1, dtype=np.int64)
    for start in range(n):
        shortest = np.full(n, np.inf)
        path = np.full(n, -1, dtype=np.int64)
        seen_rows = np.zeros(n, dtype=bool)
        todo = np.ones(n, dtype=bool)
        min_val = 0.0
        i = start
        sink = -1
        while sink < 0:
            seen_rows[i] = True
            reduced = a[i] - v
            reduced += min_val - u[i]
            better = reduced < shortest
            better &= todo
            path[better] = i
            np.copyto(shortest, reduced, where=better)
            j = int(np.where(todo, shortest, np.inf).argmin())
            min_val = float(shortest[j])
            todo[j] = False
            if row_of[j] < 0:
                sink = j
            else:
                i = int(row_of[j])
        seen_cols = ~todo
        u[start] += min_val
        others = seen_rows.copy()
        others[start] = False
        u[others] += min_val - shortest[col_of[others]]
        v[seen_cols] -= min_val - shortest[seen_cols]
        j = sink
        while True:
            i = int(path[j])
            row_of[j] = i
            col_of[i], j = j, col_of[i]
            if i == start:
                break
    return col_of


def hungarian_solve(costs) -> Assignment:
    """Minimize total cost over injective row->column maps of size min(rows, cols).

    Rectangular matrices are zero-padded to square; pairs that land on padding
    are dropped. ``total_cost`` is re-summed from the input in row order.
    """
    c = np.asarray(costs, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
        raise ValueError(f"cost matrix must be 2-D and non-empty, got shape {c.shape}")
    if not np.isfinite(c).all():
        raise NonFiniteCost("cost matrix contains NaN or infinity")
    rows, cols = c.shape
    n = max(rows, cols)
    square = np.zeros((n, n))
    square[:rows, :cols] = c
    col = _solve_square(square)
    pairs = tuple((i, int(col[i])) for i in range(rows) if col[i] < cols)
    total = 0.0
    for i, j in pairs:
        total += float(c[i, j])
    return Assignment(pairs, total)
