"""Spatial queries over a point set: k-nearest and radius search.

Backed by scipy's cKDTree; results are post-sorted by (distance, index) so
ties always break toward the smaller index. Query results are set-equal to
a brute-force linear scan, which the test suite checks directly.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


class SpatialIndex:
    """Immutable acceleration structure over an (n, 3) point set."""

    def __init__(self, points: np.ndarray):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise ValueError("empty point set")
        self._tree = cKDTree(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def knn(self, query, k: int):
        """k nearest points, ascending by distance then index.

        Returns (indices, distances); k is clamped to the set size.
        """
        if k < 1:
            raise ValueError(f"k={k} < 1")
        n = len(self.points)
        # Over-query so equal-distance candidates straddling the k boundary
        # are all seen before the deterministic tie-break.
        kk = min(n, 2 * k)
        d, i = self._tree.query(np.asarray(query, dtype=np.float64), k=kk)
        d = np.atleast_1d(d)
        i = np.atleast_1d(i)
        order = np.lexsort((i, d))
        take = min(k, n)
        return i[order][:take].astype(np.int64), d[order][:take]

    def ball_query(self, center, radius: float, cap: int):
        """Up to `cap` indices within `radius` of center, nearest first."""
        if radius <= 0:
            raise ValueError(f"radius={radius} <= 0")
        if cap < 1:
            raise ValueError(f"cap={cap} < 1")
        center = np.asarray(center, dtype=np.float64)
        idx = np.asarray(self._tree.query_ball_point(center, radius), dtype=np.int64)
        if len(idx) == 0:
            return idx
        d = np.linalg.norm(self.points[idx] - center, axis=1)
        order = np.lexsort((idx, d))
        return idx[order][:cap]


def knn(index: SpatialIndex, query, k: int):
    indices, distances = index.knn(query, k)
    return list(zip(indices.tolist(), distances.tolist()))


def ball_query(index: SpatialIndex, center, radius: float, cap: int):
    return index.ball_query(center, radius, cap).tolist()
