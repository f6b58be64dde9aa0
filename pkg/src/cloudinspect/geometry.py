"""Point clouds, similarity transforms and the small algebra around them.

Points are plain ``(3,)`` float arrays and clouds hold an ``(N, 3)`` array.
Every value type here is immutable after construction: arrays are copied
and flagged read-only, and no function modifies its arguments.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ORTHONORMAL_TOL = 1e-9


class GeometryError(ValueError):
    pass


class PointLabel(enum.IntEnum):
    """Per-point outcome of comparing two aligned clouds."""

    MATCHED = 0
    UNMATCHED_REFERENCE = 1  # only in the reference model (green)
    UNMATCHED_CURRENT = 2  # only in the current model (red)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def as_point(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,):
        raise GeometryError(f"expected a 3-vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise GeometryError("point coordinates must be finite")
    return p


def point_distance(a, b) -> np.ndarray:
    """Euclidean distance, broadcasting over leading axes.

    This is the single distance formula used throughout the package, so
    that results from different code paths compare bit-for-bit.
    """
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return np.sqrt((d * d).sum(axis=-1))


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered 3D points with optional RGB colors and integer labels."""

    points: np.ndarray
    colors: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1 and pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise GeometryError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))

        if self.colors is not None:
            cols = np.asarray(self.colors)
            if cols.shape != pts.shape:
                raise GeometryError("colors must have one RGB triple per point")
            if np.any(cols < 0) or np.any(cols > 255):
                raise GeometryError("colors must lie in 0..255")
            object.__setattr__(self, "colors", _frozen(cols.astype(np.uint8)))

        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (len(pts),):
                raise GeometryError("labels must have one entry per point")
            object.__setattr__(self, "labels", _frozen(labels.astype(np.int64)))

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return (
            same(self.points, other.points)
            and same(self.colors, other.colors)
            and same(self.labels, other.labels)
        )

    __hash__ = None

    def subset(self, indices) -> "PointCloud":
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            self.points[idx],
            None if self.colors is None else self.colors[idx],
            None if self.labels is None else self.labels[idx],
        )

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, self.colors, self.labels)

    def with_labels(self, labels) -> "PointCloud":
        return PointCloud(self.points, self.colors, labels)


def concatenate(clouds) -> PointCloud:
    """Stack clouds; colors/labels survive only if every input carries them."""
    clouds = list(clouds)
    pts = np.concatenate([c.points for c in clouds]) if clouds else np.zeros((0, 3))
    cols = None
    if clouds and all(c.colors is not None for c in clouds):
        cols = np.concatenate([c.colors for c in clouds])
    labels = None
    if clouds and all(c.labels is not None for c in clouds):
        labels = np.concatenate([c.labels for c in clouds])
    return PointCloud(pts, cols, labels)


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """``x -> scale * rotation @ x + translation`` with a proper rotation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        s = float(self.scale)
        if r.shape != (3, 3) or t.shape != (3,):
            raise GeometryError("rotation must be 3x3 and translation a 3-vector")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t)) and np.isfinite(s)):
            raise GeometryError("transform entries must be finite")
        if not s > 0:
            raise GeometryError(f"scale must be positive, got {s}")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHONORMAL_TOL:
            raise GeometryError("rotation is not orthonormal")
        if np.linalg.det(r) <= 0:
            raise GeometryError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))
        object.__setattr__(self, "scale", s)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "SimilarityTransform":
        """Build from a 4x4 homogeneous matrix whose linear block is ``s*R``."""
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise GeometryError("expected a 4x4 matrix")
        a = m[:3, :3]
        s = np.cbrt(np.linalg.det(a))
        if not s > 0:
            raise GeometryError("linear block must have positive determinant")
        return cls(a / s, m[:3, 3], s)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimilarityTransform":
        return cls(d["rotation"], d["translation"], d.get("scale", 1.0))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SimilarityTransform):
            return NotImplemented
        return (
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
            and self.scale == other.scale
        )

    __hash__ = None

    def __repr__(self) -> str:
        return (
            f"SimilarityTransform(rotation={self.rotation.tolist()}, "
            f"translation={self.translation.tolist()}, scale={self.scale})"
        )


def apply(t: SimilarityTransform, p) -> np.ndarray:
    """Transform one point."""
    return t.scale * (t.rotation @ as_point(p)) + t.translation


def apply_points(t: SimilarityTransform, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return t.scale * (pts @ t.rotation.T) + t.translation


def apply_cloud(t: SimilarityTransform, c: PointCloud) -> PointCloud:
    """Transform every point; colors and labels ride along unchanged."""
    return c.with_points(apply_points(t, c.points))


def compose(a: SimilarityTransform, b: SimilarityTransform) -> SimilarityTransform:
    """Transform equivalent to applying ``b`` first, then ``a``."""
    return SimilarityTransform(
        a.rotation @ b.rotation,
        a.scale * (a.rotation @ b.translation) + a.translation,
        a.scale * b.scale,
    )


def invert(t: SimilarityTransform) -> SimilarityTransform:
    rt = t.rotation.T
    return SimilarityTransform(rt, -(rt @ t.translation) / t.scale, 1.0 / t.scale)


def centroid(c) -> np.ndarray:
    pts = c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=np.float64)
    if len(pts) == 0:
        raise GeometryError("empty cloud")
    return pts.mean(axis=0)


def transform_distance(a: SimilarityTransform, b: SimilarityTransform) -> float:
    """Frobenius norm of the difference of the homogeneous matrices."""
    return float(np.linalg.norm(a.matrix() - b.matrix()))


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for ``angle`` radians about ``axis``."""
    k = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(k)
    if n == 0:
        raise GeometryError("rotation axis must be non-zero")
    k = k / n
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    r = np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * (kx @ kx)
    # re-project so the result passes the orthonormality check for any angle
    u, _, vt = np.linalg.svd(r)
    return u @ vt


def rotation_angle(r) -> float:
    """Angle in radians of a rotation matrix."""
    r = np.asarray(r, dtype=np.float64)
    c = (np.trace(r) - 1.0) / 2.0
    w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return float(np.arctan2(np.linalg.norm(w) / 2.0, c))
