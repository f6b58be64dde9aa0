"""Registration and change detection between a reference and a current point cloud."""

__version__ = "0.1.0"

from .diff import DefectRegion, DiffConfig, DiffReport, classify, cluster_regions, diff  # noqa: E402
from .geometry import (  # noqa: E402
    PointCloud,
    PointLabel,
    SimilarityTransform,
    apply,
    apply_cloud,
    centroid,
    compose,
    invert,
    transform_distance,
)
from .metrics import EvalResult, GroundTruth, evaluate  # noqa: E402
from .registration import IcpConfig, IcpResult, estimate_transform, icp, match  # noqa: E402
from .spatial import KdTree  # noqa: E402

__all__ = [
    "DefectRegion", "DiffConfig", "DiffReport", "classify", "cluster_regions", "diff",
    "PointCloud", "PointLabel", "SimilarityTransform", "apply", "apply_cloud", "centroid",
    "compose", "invert", "transform_distance",
    "EvalResult", "GroundTruth", "evaluate",
    "IcpConfig", "IcpResult", "estimate_transform", "icp", "match",
    "KdTree",
]  # fmt: skip
