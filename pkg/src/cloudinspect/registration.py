"""Iterative closest point alignment with a closed-form SVD estimator.

The source cloud (the current model) is moved onto the target cloud (the
reference model). Each iteration pairs every transformed source point with
its nearest target point, then re-solves the full source-to-target
transform from those pairs in closed form (Kabsch, or Umeyama when a
uniform scale is also estimated). The loop stops once consecutive
transforms differ by less than ``tolerance`` in :func:`transform_distance`.

With scale estimation enabled the loop starts rigid and only frees the
scale once the rigid fit has settled (transform change below
``100 * tolerance``). Estimating scale from the poor early correspondences
biases it low, and the shrunken source then locks onto a wrong part of the
target; the rigid warm-up keeps the identity start while avoiding that.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .geometry import (
    GeometryError,
    PointCloud,
    SimilarityTransform,
    apply_points,
    transform_distance,
)
from .spatial import KdTree

# cross-covariance singular values below this fraction of the largest are
# treated as zero when checking the rank
_RANK_RTOL = 1e-10

# rigid warm-up ends once the transform change drops below this multiple of
# the convergence tolerance
WARMUP_TOLERANCE_FACTOR = 100.0


class RegistrationError(RuntimeError):
    def __init__(self, message: str, iteration: Optional[int] = None):
        self.reason = message
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 50
    tolerance: float = 1e-6
    with_scale: bool = False
    max_correspondence_distance: float = math.inf
    trim_fraction: float = 0.0
    subsample_size: Optional[int] = None
    seed: int = 0
    rigid_warmup: bool = True

    def __post_init__(self):
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ValueError("max_iterations must be a positive integer")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not self.max_correspondence_distance > 0:
            raise ValueError("max_correspondence_distance must be positive")
        if not 0.0 <= self.trim_fraction <= 0.5:
            raise ValueError("trim_fraction must lie in [0, 0.5]")
        if self.subsample_size is not None and self.subsample_size < 1:
            raise ValueError("subsample_size must be a positive integer")

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["max_correspondence_distance"]):
            d["max_correspondence_distance"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IcpConfig":
        d = dict(d)
        if d.get("max_correspondence_distance") is None:
            d.pop("max_correspondence_distance", None)
        return cls(**d)


@dataclass(frozen=True)
class CorrespondenceSet:
    source_indices: np.ndarray
    target_indices: np.ndarray
    distances: np.ndarray
    mean_squared_error: float
    sum_of_distances: float

    @property
    def pairs(self) -> list[tuple[int, int, float]]:
        return list(
            zip(self.source_indices.tolist(), self.target_indices.tolist(), self.distances.tolist())
        )

    def __len__(self) -> int:
        return len(self.distances)


@dataclass(frozen=True)
class IterationRecord:
    sum_of_distances: float
    mean_squared_error: float
    transform_delta: float
    pair_count: int
    scale_estimated: bool = False


@dataclass(frozen=True)
class IcpResult:
    transform: SimilarityTransform
    iterations_run: int
    converged: bool
    error_trace: list[IterationRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.to_dict(),
            "matrix": self.transform.matrix().tolist(),
            "iterations_run": self.iterations_run,
            "converged": self.converged,
            "error_trace": [asdict(r) for r in self.error_trace],
        }


def estimate_transform(src, tgt=None, with_scale: bool = False) -> SimilarityTransform:
    """Least-squares transform taking ``src`` points onto ``tgt`` points.

    Accepts either two ``(N, 3)`` arrays or a single sequence of
    ``(source_point, target_point)`` pairs. Minimises
    ``sum ||s R src_i + t - tgt_i||^2``; reflections are excluded by flipping
    the sign attached to the smallest singular value.
    """
    if tgt is None:
        pairs = np.asarray(src, dtype=np.float64)
        if pairs.ndim != 3 or pairs.shape[1:] != (2, 3):
            if len(pairs) == 0:
                raise GeometryError("underdetermined")
            raise GeometryError("pairs must have shape (N, 2, 3)")
        src, tgt = pairs[:, 0], pairs[:, 1]
    x = np.asarray(src, dtype=np.float64)
    y = np.asarray(tgt, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise GeometryError("source and target must both have shape (N, 3)")
    n = len(x)
    if n < 3:
        raise GeometryError("underdetermined")

    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    xc = x - mx
    yc = y - my
    cov = (yc.T @ xc) / n
    u, sv, vt = np.linalg.svd(cov)
    if sv[0] <= 0 or sv[1] <= _RANK_RTOL * sv[0]:
        raise GeometryError("degenerate correspondence set")

    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2] = -1.0
    r = (u * d) @ vt

    if with_scale:
        var_x = (xc * xc).sum() / n
        s = float((sv * d).sum() / var_x)
        if not s > 0:
            raise GeometryError("degenerate correspondence set")
    else:
        s = 1.0
    t = my - s * (r @ mx)
    return SimilarityTransform(r, t, s)


def _subsample(n: int, config: IcpConfig, iteration: int) -> np.ndarray:
    if config.subsample_size is None or config.subsample_size >= n:
        return np.arange(n)
    rng = np.random.default_rng([config.seed, iteration])
    return np.sort(rng.choice(n, size=config.subsample_size, replace=False))


def match(
    source: PointCloud,
    t: SimilarityTransform,
    target_tree: KdTree,
    config: IcpConfig = IcpConfig(),
    iteration: int = 0,
) -> CorrespondenceSet:
    """Pair transformed source points with their nearest target points."""
    if len(source) == 0:
        raise GeometryError("empty cloud")
    src_idx = _subsample(len(source), config, iteration)
    moved = apply_points(t, source.points[src_idx])
    tgt_idx, dist = target_tree.nearest_many(moved)

    keep = dist <= config.max_correspondence_distance
    src_idx, tgt_idx, dist = src_idx[keep], tgt_idx[keep], dist[keep]

    if config.trim_fraction > 0 and len(dist):
        n_keep = len(dist) - int(math.floor(config.trim_fraction * len(dist)))
        # stable sort keeps index order among equal distances
        order = np.sort(np.argsort(dist, kind="stable")[:n_keep])
        src_idx, tgt_idx, dist = src_idx[order], tgt_idx[order], dist[order]

    if len(dist) == 0:
        raise RegistrationError("no correspondences", iteration or None)
    return CorrespondenceSet(
        source_indices=src_idx,
        target_indices=tgt_idx,
        distances=dist,
        mean_squared_error=float(np.mean(dist * dist)),
        sum_of_distances=float(np.sum(dist)),
    )


def icp(
    source: PointCloud,
    target: PointCloud,
    config: IcpConfig = IcpConfig(),
    target_tree: Optional[KdTree] = None,
) -> IcpResult:
    """Align ``source`` onto ``target``; the returned transform maps source to target."""
    if len(source) < 3 or len(target) < 3:
        raise GeometryError("registration needs at least 3 points per cloud")
    tree = target_tree if target_tree is not None else KdTree(target)

    current = SimilarityTransform.identity()
    trace: list[IterationRecord] = []
    converged = False
    estimate_scale = config.with_scale and not config.rigid_warmup
    warmup_tol = WARMUP_TOLERANCE_FACTOR * config.tolerance
    for it in range(1, config.max_iterations + 1):
        pairs = match(source, current, tree, config, iteration=it)
        try:
            updated = estimate_transform(
                source.points[pairs.source_indices],
                tree.points[pairs.target_indices],
                with_scale=estimate_scale,
            )
        except GeometryError as exc:
            raise RegistrationError(str(exc), it) from exc
        delta = transform_distance(updated, current)
        trace.append(
            IterationRecord(
                pairs.sum_of_distances, pairs.mean_squared_error, delta, len(pairs), estimate_scale
            )
        )
        current = updated
        if config.with_scale and not estimate_scale:
            if delta < warmup_tol:
                estimate_scale = True
        elif delta < config.tolerance:
            converged = True
            break

    return IcpResult(current, len(trace), converged, trace)
