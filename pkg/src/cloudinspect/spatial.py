"""Exact nearest-neighbour and radius queries.

The tree itself is scipy's ``cKDTree`` (median split, leaf buckets). What
this module adds is the exactness contract the rest of the package relies
on: distances are recomputed with :func:`geometry.point_distance`, near-ties
are resolved by a second bounded search, and equal distances go to the
lowest point index. Results are therefore identical to a linear scan.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .geometry import GeometryError, PointCloud, point_distance

# relative window inside which two candidate distances are treated as a tie
# that needs exact re-evaluation
_TIE_RTOL = 1e-9


class KdTree:
    """Immutable spatial index over a snapshot of a cloud's points."""

    def __init__(self, points):
        pts = points.points if isinstance(points, PointCloud) else points
        pts = np.array(pts, dtype=np.float64, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise GeometryError(f"points must have shape (N, 3), got {pts.shape}")
        if len(pts) == 0:
            raise GeometryError("empty cloud")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point coordinates must be finite")
        pts.setflags(write=False)
        self.points = pts
        self._tree = cKDTree(pts, balanced_tree=True, compact_nodes=True)

    def __len__(self) -> int:
        return len(self.points)

    def nearest(self, q) -> tuple[int, float]:
        idx, dist = self.nearest_many(np.asarray(q, dtype=np.float64).reshape(1, 3))
        return int(idx[0]), float(dist[0])

    def nearest_many(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Nearest stored point for every row of ``queries``.

        Returns ``(indices, distances)``; ties go to the lowest index.
        """
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        if len(q) == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        if n == 1:
            idx = np.zeros(len(q), dtype=np.int64)
            return idx, point_distance(q, self.points[0])

        _, cand = self._tree.query(q, k=2)
        cand = cand.astype(np.int64)
        d = point_distance(q[:, None, :], self.points[cand])
        first = np.where(
            (d[:, 0] < d[:, 1]) | ((d[:, 0] == d[:, 1]) & (cand[:, 0] < cand[:, 1])), 0, 1
        )
        rows = np.arange(len(q))
        idx = cand[rows, first]
        dist = d[rows, first]

        # anything whose runner-up is within rounding distance may hide a
        # closer or lower-indexed point that the tree ordered differently
        hi = d.max(axis=1)
        lo = d.min(axis=1)
        ambiguous = np.nonzero(hi - lo <= _TIE_RTOL * hi)[0]
        for i in ambiguous:
            r = hi[i] * (1 + 4 * _TIE_RTOL) + 1e-300
            members = np.asarray(self._tree.query_ball_point(q[i], r), dtype=np.int64)
            members.sort()
            md = point_distance(self.points[members], q[i])
            j = int(np.argmin(md))  # argmin returns the first, i.e. lowest index
            idx[i] = members[j]
            dist[i] = md[j]
        return idx, dist

    def nearest_other_distances(self) -> np.ndarray:
        """Distance from each stored point to its closest other stored point."""
        if len(self.points) < 2:
            raise GeometryError("need at least two points")
        _, cand = self._tree.query(self.points, k=2)
        # the first column may be a duplicate rather than the point itself
        d = point_distance(self.points[:, None, :], self.points[cand])
        self_hit = cand == np.arange(len(self.points))[:, None]
        return np.where(self_hit[:, 0], d[:, 1], d[:, 0])

    def within_radius(self, q, r: float) -> list[int]:
        """Indices whose distance to ``q`` is ``<= r``, ascending."""
        if not r >= 0:
            raise GeometryError("invalid radius")
        q = np.asarray(q, dtype=np.float64)
        members = np.asarray(
            self._tree.query_ball_point(q, r * (1 + 4 * _TIE_RTOL) + 1e-300), dtype=np.int64
        )
        if len(members) == 0:
            return []
        members.sort()
        keep = point_distance(self.points[members], q) <= r
        return members[keep].tolist()

    def pairs_within(self, r: float) -> np.ndarray:
        """All index pairs ``(i, j)``, ``i < j``, at distance ``<= r``.

        Returned as an ``(M, 2)`` array sorted lexicographically.
        """
        if not r >= 0:
            raise GeometryError("invalid radius")
        pairs = self._tree.query_pairs(r * (1 + 4 * _TIE_RTOL) + 1e-300, output_type="ndarray")
        if len(pairs) == 0:
            return np.zeros((0, 2), dtype=np.int64)
        pairs = np.sort(pairs.astype(np.int64), axis=1)
        keep = point_distance(self.points[pairs[:, 0]], self.points[pairs[:, 1]]) <= r
        pairs = pairs[keep]
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return pairs[order]


def build(c) -> KdTree:
    return KdTree(c)


def nearest(t: KdTree, q) -> tuple[int, float]:
    return t.nearest(q)


def within_radius(t: KdTree, q, r: float) -> list[int]:
    return t.within_radius(q, r)
