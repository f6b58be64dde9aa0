"""Matched/unmatched classification of two aligned clouds and defect regions."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .geometry import GeometryError, PointCloud, PointLabel, SimilarityTransform
from .spatial import KdTree

REFERENCE = "reference"
CURRENT = "current"

DEFAULT_THRESHOLD_FACTOR = 3.0


@dataclass(frozen=True)
class DiffConfig:
    match_threshold: float
    cluster_radius: float
    min_region_points: int = 10

    def __post_init__(self):
        if not self.match_threshold > 0:
            raise ValueError("match_threshold must be positive")
        if not self.cluster_radius > 0:
            raise ValueError("cluster_radius must be positive")
        if self.min_region_points < 1:
            raise ValueError("min_region_points must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def median_spacing(cloud: PointCloud, tree: Optional[KdTree] = None) -> float:
    """Median distance from each point to its nearest other point."""
    if len(cloud) < 2:
        raise GeometryError("spacing needs at least two points")
    tree = tree or KdTree(cloud)
    return float(np.median(tree.nearest_other_distances()))


def auto_config(
    reference: PointCloud,
    factor: float = DEFAULT_THRESHOLD_FACTOR,
    cluster_radius: Optional[float] = None,
    min_region_points: int = 10,
    tree: Optional[KdTree] = None,
) -> DiffConfig:
    """Threshold tied to sampling density: ``factor`` x median spacing.

    The cluster radius defaults to the threshold itself, which links
    neighbouring unmatched points at the same sampling density.
    """
    spacing = median_spacing(reference, tree)
    if not spacing > 0:
        raise GeometryError("cannot derive a threshold from a cloud with zero spacing")
    threshold = factor * spacing
    return DiffConfig(threshold, cluster_radius or threshold, min_region_points)


@dataclass(frozen=True)
class DefectRegion:
    cloud_side: str
    point_indices: np.ndarray
    centroid: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    max_deviation: float
    sub_minimal: bool

    @property
    def point_count(self) -> int:
        return len(self.point_indices)

    def to_dict(self, include_indices: bool = False) -> dict:
        d = {
            "cloud_side": self.cloud_side,
            "point_count": self.point_count,
            "centroid": self.centroid.tolist(),
            "bbox_min": self.bbox_min.tolist(),
            "bbox_max": self.bbox_max.tolist(),
            "max_deviation": self.max_deviation,
            "sub_minimal": self.sub_minimal,
        }
        if include_indices:
            d["point_indices"] = self.point_indices.tolist()
        return d


@dataclass(frozen=True)
class DiffReport:
    reference_labels: np.ndarray
    current_labels: np.ndarray
    reference_distances: np.ndarray
    current_distances: np.ndarray
    regions: list[DefectRegion]
    config_used: DiffConfig
    alignment_used: SimilarityTransform = field(default_factory=SimilarityTransform.identity)

    @property
    def matched_fraction_reference(self) -> float:
        return float(np.mean(self.reference_labels == PointLabel.MATCHED))

    @property
    def matched_fraction_current(self) -> float:
        return float(np.mean(self.current_labels == PointLabel.MATCHED))

    def regions_on(self, side: str) -> list[DefectRegion]:
        return [r for r in self.regions if r.cloud_side == side]

    def summary(self) -> dict:
        return {
            "reference_points": int(len(self.reference_labels)),
            "current_points": int(len(self.current_labels)),
            "unmatched_reference": int(np.sum(self.reference_labels != PointLabel.MATCHED)),
            "unmatched_current": int(np.sum(self.current_labels != PointLabel.MATCHED)),
            "matched_fraction_reference": self.matched_fraction_reference,
            "matched_fraction_current": self.matched_fraction_current,
            "region_count": len(self.regions),
            "significant_region_count": sum(not r.sub_minimal for r in self.regions),
            "regions": [r.to_dict() for r in self.regions],
            "config_used": self.config_used.to_dict(),
            "alignment_used": self.alignment_used.to_dict(),
        }


def _nearest_distances(queries: PointCloud, tree: KdTree) -> np.ndarray:
    return tree.nearest_many(queries.points)[1]


def classify(
    reference: PointCloud,
    current_aligned: PointCloud,
    config: DiffConfig,
    reference_tree: Optional[KdTree] = None,
    current_tree: Optional[KdTree] = None,
    return_distances: bool = False,
):
    """Label both clouds by nearest-neighbour distance to the other one.

    A distance equal to the threshold counts as matched.
    """
    if len(reference) == 0 or len(current_aligned) == 0:
        raise GeometryError("empty cloud")
    reference_tree = reference_tree or KdTree(reference)
    current_tree = current_tree or KdTree(current_aligned)

    cur_d = _nearest_distances(current_aligned, reference_tree)
    ref_d = _nearest_distances(reference, current_tree)
    ref_labels = np.where(
        ref_d <= config.match_threshold, PointLabel.MATCHED, PointLabel.UNMATCHED_REFERENCE
    ).astype(np.int64)
    cur_labels = np.where(
        cur_d <= config.match_threshold, PointLabel.MATCHED, PointLabel.UNMATCHED_CURRENT
    ).astype(np.int64)
    if return_distances:
        return ref_labels, cur_labels, ref_d, cur_d
    return ref_labels, cur_labels


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]

    def components(self) -> list[list[int]]:
        groups: dict[int, list[int]] = {}
        for i in range(len(self.parent)):
            groups.setdefault(self.find(i), []).append(i)
        return list(groups.values())


def connected_components(points: np.ndarray, radius: float) -> list[np.ndarray]:
    """Single-linkage groups of ``points`` (edges at distance ``<= radius``).

    Each group is an ascending array of row indices into ``points``.
    """
    n = len(points)
    if n == 0:
        return []
    uf = UnionFind(n)
    if n > 1:
        for a, b in KdTree(points).pairs_within(radius).tolist():
            uf.union(a, b)
    return [np.asarray(g, dtype=np.int64) for g in uf.components()]


def _sort_regions(regions: list[DefectRegion]) -> list[DefectRegion]:
    # largest first, then lexicographic centroid
    return sorted(regions, key=lambda r: (-r.point_count, *r.centroid.tolist()))


def cluster_regions(
    cloud: PointCloud,
    unmatched_indices,
    side: str,
    config: DiffConfig,
    deviations: Optional[np.ndarray] = None,
) -> list[DefectRegion]:
    """Group unmatched points into connected defect regions.

    ``deviations`` holds each cloud point's nearest-neighbour distance to the
    other cloud; it feeds ``max_deviation`` and is zero-filled when absent.
    """
    if side not in (REFERENCE, CURRENT):
        raise ValueError(f"side must be {REFERENCE!r} or {CURRENT!r}")
    idx = np.unique(np.asarray(unmatched_indices, dtype=np.int64))
    if len(idx) == 0:
        return []
    if idx[0] < 0 or idx[-1] >= len(cloud):
        raise IndexError("unmatched index out of range")
    pts = cloud.points[idx]

    regions = []
    for group in connected_components(pts, config.cluster_radius):
        members = idx[group]
        mpts = pts[group]
        regions.append(
            DefectRegion(
                cloud_side=side,
                point_indices=members,
                centroid=mpts.mean(axis=0),
                bbox_min=mpts.min(axis=0),
                bbox_max=mpts.max(axis=0),
                max_deviation=0.0 if deviations is None else float(np.max(deviations[members])),
                sub_minimal=len(members) < config.min_region_points,
            )
        )
    return _sort_regions(regions)


def regions_from_labels(
    reference: PointCloud,
    current_aligned: PointCloud,
    ref_labels,
    cur_labels,
    config: DiffConfig,
    ref_dist: Optional[np.ndarray] = None,
    cur_dist: Optional[np.ndarray] = None,
) -> list[DefectRegion]:
    ref_labels = np.asarray(ref_labels)
    cur_labels = np.asarray(cur_labels)
    regions = cluster_regions(
        reference, np.nonzero(ref_labels != PointLabel.MATCHED)[0], REFERENCE, config, ref_dist
    ) + cluster_regions(
        current_aligned, np.nonzero(cur_labels != PointLabel.MATCHED)[0], CURRENT, config, cur_dist
    )
    return _sort_regions(regions)


def diff(
    reference: PointCloud,
    current_aligned: PointCloud,
    alignment: Optional[SimilarityTransform] = None,
    config: Optional[DiffConfig] = None,
    reference_tree: Optional[KdTree] = None,
) -> DiffReport:
    """Classify both clouds and cluster the unmatched points of each side."""
    if len(reference) == 0 or len(current_aligned) == 0:
        raise GeometryError("empty cloud")
    reference_tree = reference_tree or KdTree(reference)
    if config is None:
        config = auto_config(reference, tree=reference_tree)
    ref_labels, cur_labels, ref_d, cur_d = classify(
        reference, current_aligned, config, reference_tree=reference_tree, return_distances=True
    )
    regions = regions_from_labels(
        reference, current_aligned, ref_labels, cur_labels, config, ref_d, cur_d
    )
    return DiffReport(
        reference_labels=ref_labels,
        current_labels=cur_labels,
        reference_distances=ref_d,
        current_distances=cur_d,
        regions=regions,
        config_used=config,
        alignment_used=alignment or SimilarityTransform.identity(),
    )
