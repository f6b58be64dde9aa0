"""Detection quality against ground truth, and per-stage wall-clock timing."""

from __future__ import annotations

import json
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .diff import DiffReport
from .geometry import PointLabel

TRUTH_SCHEMA_VERSION = 1


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Per-point defect flags for both clouds.

    ``*_regions`` hold a defect id per point (``-1`` for clean points); a
    ground-truth region is the set of points, on either side, sharing an id.
    When ids are not given, every flagged point of a side belongs to one
    region for that side.
    """

    reference: np.ndarray
    current: np.ndarray
    reference_regions: Optional[np.ndarray] = None
    current_regions: Optional[np.ndarray] = None

    def __post_init__(self):
        ref = np.asarray(self.reference, dtype=bool)
        cur = np.asarray(self.current, dtype=bool)
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "current", cur)
        for name, flags, default_id in (
            ("reference_regions", ref, 0),
            ("current_regions", cur, 1),
        ):
            ids = getattr(self, name)
            if ids is None:
                ids = np.where(flags, default_id, -1)
            ids = np.asarray(ids, dtype=np.int64)
            if ids.shape != flags.shape:
                raise EvaluationError("ground truth shape mismatch")
            if np.any((ids >= 0) != flags):
                raise EvaluationError("region ids must be set exactly on defect points")
            object.__setattr__(self, name, ids)

    def to_dict(self) -> dict:
        ref_idx = np.nonzero(self.reference)[0]
        cur_idx = np.nonzero(self.current)[0]
        return {
            "schema_version": TRUTH_SCHEMA_VERSION,
            "reference_size": int(len(self.reference)),
            "current_size": int(len(self.current)),
            "reference_defects": ref_idx.tolist(),
            "reference_region_ids": self.reference_regions[ref_idx].tolist(),
            "current_defects": cur_idx.tolist(),
            "current_region_ids": self.current_regions[cur_idx].tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        def side(prefix):
            n = int(d[f"{prefix}_size"])
            idx = np.asarray(d[f"{prefix}_defects"], dtype=np.int64)
            if len(idx) and (idx.min() < 0 or idx.max() >= n):
                raise EvaluationError(f"{prefix} defect index out of range")
            flags = np.zeros(n, dtype=bool)
            flags[idx] = True
            ids = np.full(n, -1, dtype=np.int64)
            ids[idx] = d.get(f"{prefix}_region_ids", [0] * len(idx))
            return flags, ids

        ref, ref_ids = side("reference")
        cur, cur_ids = side("current")
        return cls(ref, cur, ref_ids, cur_ids)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "GroundTruth":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class EvalResult:
    true_positives: int
    false_positives: int
    false_negatives: int
    true_negatives: int
    precision: float
    recall: float
    f1: float
    precision_defined: bool
    recall_defined: bool
    region_detection_rate: float
    truth_region_count: int
    detected_truth_regions: int
    spurious_regions: int
    wall_time_seconds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def confusion(predicted, truth) -> tuple[int, int, int, int]:
    p = np.asarray(predicted, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    tn = int(np.sum(~p & ~t))
    return tp, fp, fn, tn


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float, float, bool, bool]:
    """Precision, recall, F1 and whether each ratio had a non-zero denominator.

    An empty denominator yields 1.0 with the matching flag cleared.
    """
    precision_defined = tp + fp > 0
    recall_defined = tp + fn > 0
    precision = tp / (tp + fp) if precision_defined else 1.0
    recall = tp / (tp + fn) if recall_defined else 1.0
    f1 = 0.0 if precision == 0 or recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1, precision_defined, recall_defined


def evaluate(
    report: DiffReport, truth: GroundTruth, timing: Optional[dict] = None
) -> EvalResult:
    """Point-level confusion pooled over both clouds, plus region-level hits.

    A point is a predicted positive when it is unmatched. A ground-truth
    region counts as detected if any predicted region shares a point with
    it. Non-sub-minimal predicted regions touching no defect point are
    counted as spurious.
    """
    if len(truth.reference) != len(report.reference_labels) or len(truth.current) != len(
        report.current_labels
    ):
        raise EvaluationError("ground truth shape mismatch")

    pred = np.concatenate(
        [report.reference_labels != PointLabel.MATCHED, report.current_labels != PointLabel.MATCHED]
    )
    actual = np.concatenate([truth.reference, truth.current])
    tp, fp, fn, tn = confusion(pred, actual)
    precision, recall, f1, p_def, r_def = precision_recall(tp, fp, fn)

    truth_ids = {
        "reference": truth.reference_regions,
        "current": truth.current_regions,
    }
    all_ids = set(np.unique(truth.reference_regions[truth.reference_regions >= 0]).tolist())
    all_ids |= set(np.unique(truth.current_regions[truth.current_regions >= 0]).tolist())
    detected: set[int] = set()
    spurious = 0
    for region in report.regions:
        hit = truth_ids[region.cloud_side][region.point_indices]
        hit = hit[hit >= 0]
        detected.update(hit.tolist())
        if len(hit) == 0 and not region.sub_minimal:
            spurious += 1
    rate = len(detected) / len(all_ids) if all_ids else 1.0

    return EvalResult(
        true_positives=tp,
        false_positives=fp,
        false_negatives=fn,
        true_negatives=tn,
        precision=precision,
        recall=recall,
        f1=f1,
        precision_defined=p_def,
        recall_defined=r_def,
        region_detection_rate=rate,
        truth_region_count=len(all_ids),
        detected_truth_regions=len(detected),
        spurious_regions=spurious,
        wall_time_seconds=dict(timing or {}),
    )


class StageTimer:
    """Monotonic wall-clock durations of named pipeline stages.

    Stages that never run are simply absent from :attr:`stages`.
    """

    def __init__(self):
        self.stages: dict[str, float] = {}
        self._start = time.perf_counter()
        self._end: Optional[float] = None

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + (time.perf_counter() - t0)

    def stop(self) -> None:
        self._end = time.perf_counter()

    @property
    def total(self) -> float:
        end = self._end if self._end is not None else time.perf_counter()
        return end - self._start

    def record(self) -> dict:
        return {"stages": dict(self.stages), "total": self.total}


def time_stages(timer: StageTimer) -> dict:
    return timer.record()
