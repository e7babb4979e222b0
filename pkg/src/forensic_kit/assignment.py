"""Kuhn-Munkres (Hungarian) minimum-cost assignment.

Works on any exactly ordered numeric type, so it can be fed ``Fraction`` costs
and return a provably optimal matching without float tie-breaking surprises.
"""

from __future__ import annotations

from typing import Sequence


def _solve_square(cost: list[list]) -> list[int]:
    # Shortest augmenting path with row/column potentials, O(n^3).
    n = len(cost)
    zero = cost[0][0] - cost[0][0]
    u = [zero] * (n + 1)
    v = [zero] * (n + 1)
    match_col = [0] * (n + 1)  # match_col[j] = row (1-based) assigned to column j
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        match_col[0] = i
        j0 = 0
        minv = [None] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match_col[j0]
            delta = None
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1][j - 1] - u[i0] - v[j]
                if minv[j] is None or cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if delta is None or minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1
    row_to_col = [0] * n
    for j in range(1, n + 1):
        row_to_col[match_col[j] - 1] = j - 1
    return row_to_col


def linear_assignment(cost: Sequence[Sequence], pad_value=1) -> list[tuple[int, int]]:
    """Minimum-cost assignment on a rectangular ``rows x cols`` cost matrix.

    The matrix is padded to square with ``pad_value``; only pairs between real
    rows and real columns are returned, so the result has
    ``min(rows, cols)`` entries, sorted by row.
    """
    rows = len(cost)
    cols = len(cost[0]) if rows else 0
    if rows == 0 or cols == 0:
        return []
    n = max(rows, cols)
    square = [
        [cost[i][j] if i < rows and j < cols else pad_value for j in range(n)]
        for i in range(n)
    ]
    assignment = _solve_square(square)
    return [(i, j) for i, j in enumerate(assignment) if i < rows and j < cols]
