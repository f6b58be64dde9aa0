"""load -> register -> diff -> evaluate -> export, driven by a RunConfig."""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import RunConfig
from .diff import DiffConfig, DiffReport, diff, median_spacing, regions_from_labels
from .formats import load_cloud, read_ply, write_ply
from .geometry import PointCloud, SimilarityTransform, apply_cloud, concatenate
from .metrics import EvalResult, GroundTruth, StageTimer, evaluate
from .registration import IcpConfig, IcpResult, icp
from .spatial import KdTree

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1

REFERENCE_PLY = "reference_labeled.ply"
CURRENT_PLY = "current_labeled.ply"
OVERLAY_PLY = "overlay.ply"
REPORT_JSON = "report.json"
REGIONS_CSV = "regions.csv"
TRUTH_JSON = "truth.json"
FIGURES = {
    "overlay": "overlay.png",
    "convergence": "icp_convergence.png",
    "deviations": "deviation_histogram.png",
}


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage

    def to_line(self) -> str:
        return json.dumps({"error": str(self), "stage": self.stage}, sort_keys=True)


@dataclass
class RunReport:
    document: dict
    reference: PointCloud
    current_aligned: PointCloud
    diff: DiffReport
    registration: Optional[IcpResult]
    evaluation: Optional[EvalResult]
    truth: Optional[GroundTruth] = None

    def to_json(self, canonical: bool = False) -> str:
        doc = canonical_form(self.document) if canonical else self.document
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def canonical_form(document: dict) -> dict:
    """Report without run-dependent fields (timings and the output location)."""
    doc = copy.deepcopy(document)
    doc.pop("timing", None)
    if doc.get("evaluation"):
        doc["evaluation"].pop("wall_time_seconds", None)
    doc.get("config", {}).get("output", {}).pop("directory", None)
    return doc


def icp_config(section: dict) -> IcpConfig:
    mcd = section["max_correspondence_distance"]
    return IcpConfig(
        max_iterations=int(section["max_iterations"]),
        tolerance=float(section["tolerance"]),
        with_scale=bool(section["with_scale"]),
        max_correspondence_distance=math.inf if mcd is None else float(mcd),
        trim_fraction=float(section["trim_fraction"]),
        subsample_size=section["subsample_size"],
        seed=int(section["seed"]),
        rigid_warmup=bool(section["rigid_warmup"]),
    )


def diff_config(section: dict, reference: PointCloud, tree: KdTree) -> DiffConfig:
    thr = section["threshold"]
    if thr == "auto":
        thr = float(section["threshold_factor"]) * median_spacing(reference, tree)
    radius = section["cluster_radius"]
    radius = thr if radius == "auto" else float(radius)
    return DiffConfig(float(thr), radius, int(section["min_region_points"]))


def _load_inputs(cfg: RunConfig):
    inp = cfg.data["input"]
    if inp["synth"] is not None:
        from . import synth

        s = dict(inp["synth"])
        spec = synth.preset(
            s.pop("preset"),
            seed=int(s.pop("seed", 0)),
            points=s.pop("points", None),
            defects=bool(s.pop("defects", True)),
            noise_sigma=s.pop("noise_sigma", None),
            shared_sampling=bool(s.pop("shared_sampling", False)),
        )
        scene = synth.generate(spec)
        source = {"synth": spec.name, "seed": spec.seed}
        return scene.reference, scene.current, scene.truth, source, source

    def read(key):
        path = cfg.resolve(inp[key])
        try:
            return load_cloud(path)
        except OSError as exc:
            raise PipelineError("load", f"cannot read {key} cloud {str(path)!r}: {exc.strerror}")
        except ValueError as exc:
            raise PipelineError("load", f"cannot parse {key} cloud {str(path)!r}: {exc}")

    reference = read("reference")
    current = read("current")
    truth = None
    if inp["truth"] is not None:
        path = cfg.resolve(inp["truth"])
        try:
            truth = GroundTruth.load(path)
        except (OSError, ValueError, KeyError) as exc:
            raise PipelineError("load", f"cannot read truth {str(path)!r}: {exc}")
    return reference, current, truth, {"path": inp["reference"]}, {"path": inp["current"]}


def regions_csv(report: DiffReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["region", "side", "point_count", "centroid_x", "centroid_y", "centroid_z",
                "bbox_min_x", "bbox_min_y", "bbox_min_z", "bbox_max_x", "bbox_max_y",
                "bbox_max_z", "max_deviation", "sub_minimal"])  # fmt: skip
    for i, r in enumerate(report.regions):
        w.writerow([i, r.cloud_side, r.point_count, *map(repr, r.centroid.tolist()),
                    *map(repr, r.bbox_min.tolist()), *map(repr, r.bbox_max.tolist()),
                    repr(r.max_deviation), int(r.sub_minimal)])  # fmt: skip
    return buf.getvalue()


def execute(cfg: RunConfig, timer: Optional[StageTimer] = None) -> RunReport:
    """Run every stage in memory; nothing is written."""
    timer = timer or StageTimer()
    with timer.stage("load"):
        try:
            reference, current, truth, ref_src, cur_src = _load_inputs(cfg)
        except PipelineError:
            raise
        except (ValueError, KeyError) as exc:
            raise PipelineError("load", str(exc))
    if len(reference) < 3 or len(current) < 3:
        raise PipelineError("load", "each cloud needs at least 3 points")
    if truth is not None and (
        len(truth.reference) != len(reference) or len(truth.current) != len(current)
    ):
        raise PipelineError("load", "ground truth shape mismatch")

    with timer.stage("index"):
        ref_tree = KdTree(reference)

    reg = cfg.data["registration"]
    result = None
    alignment = SimilarityTransform.identity()
    if reg["enabled"]:
        with timer.stage("icp"):
            try:
                result = icp(current, reference, icp_config(reg), target_tree=ref_tree)
            except (ValueError, RuntimeError) as exc:
                raise PipelineError("icp", str(exc))
        alignment = result.transform
        logger.info("icp: %d iterations, converged=%s", result.iterations_run, result.converged)

    with timer.stage("diff"):
        try:
            current_aligned = apply_cloud(alignment, current)
            dcfg = diff_config(cfg.data["diff"], reference, ref_tree)
            report = diff(reference, current_aligned, alignment, dcfg, reference_tree=ref_tree)
        except ValueError as exc:
            raise PipelineError("diff", str(exc))

    evaluation = None
    if truth is not None:
        with timer.stage("evaluate"):
            evaluation = evaluate(report, truth)

    document = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool": {"name": "cloudinspect", "version": __version__},
        "config": cfg.echo(),
        "inputs": {
            "reference": {**ref_src, "points": len(reference)},
            "current": {**cur_src, "points": len(current)},
        },
        "registration": (
            {"enabled": True, **result.to_dict()}
            if result is not None
            else {"enabled": False, "transform": alignment.to_dict(),
                  "matrix": alignment.matrix().tolist()}
        ),
        "diff": report.summary(),
        "evaluation": None if evaluation is None else evaluation.to_dict(),
        "outputs": {},
    }
    return RunReport(document, reference, current_aligned, report, result, evaluation, truth)


def run(cfg: RunConfig, canonical: bool = False) -> RunReport:
    """Execute and write all enabled outputs.

    On any failure the files this run created are removed before the
    :class:`PipelineError` propagates.
    """
    timer = StageTimer()
    out = cfg.output_dir
    created: list[Path] = []
    made_dir = not out.exists()
    try:
        rr = execute(cfg, timer)
        opts = cfg.data["output"]
        with timer.stage("export"):
            try:
                out.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise PipelineError("export", f"cannot create {str(out)!r}: {exc.strerror}")

            def write(name: str, data) -> None:
                path = out / name
                created.append(path)
                try:
                    if isinstance(data, str):
                        path.write_text(data)
                    else:
                        path.write_bytes(data)
                except OSError as exc:
                    raise PipelineError("export", f"cannot write {str(path)!r}: {exc.strerror}")
                rr.document["outputs"][name.split(".")[0]] = name

            fmt = opts["ply_format"]
            d = rr.diff
            if opts["reference_ply"]:
                write(REFERENCE_PLY, write_ply(rr.reference, d.reference_labels, fmt))
            if opts["current_ply"]:
                write(CURRENT_PLY, write_ply(rr.current_aligned, d.current_labels, fmt))
            if opts["overlay_ply"]:
                merged = concatenate([rr.reference, rr.current_aligned])
                labels = np.concatenate([d.reference_labels, d.current_labels])
                write(OVERLAY_PLY, write_ply(merged, labels, fmt))
            if opts["regions_csv"]:
                write(REGIONS_CSV, regions_csv(d))
            if rr.truth is not None and cfg.data["input"]["synth"] is not None:
                write(TRUTH_JSON, json.dumps(rr.truth.to_dict(), sort_keys=True) + "\n")

        if opts["figures"]:
            with timer.stage("figures"):
                from . import plotting

                figs = [("overlay", lambda p: plotting.plot_overlay(
                            rr.reference, rr.current_aligned, d, p)),
                        ("deviations", lambda p: plotting.plot_deviation_histogram(d, p))]
                if rr.registration is not None:
                    figs.append(("convergence",
                                 lambda p: plotting.plot_convergence(rr.registration, p)))
                for key, draw in figs:
                    path = out / FIGURES[key]
                    created.append(path)
                    draw(path)
                    rr.document["outputs"][f"figure_{key}"] = FIGURES[key]

        timer.stop()
        rr.document["timing"] = timer.record()
        if rr.document["evaluation"] is not None:
            rr.document["evaluation"]["wall_time_seconds"] = timer.record()
        if opts["report"]:
            rr.document["outputs"]["report"] = REPORT_JSON
            path = out / REPORT_JSON
            created.append(path)
            path.write_text(rr.to_json(canonical=canonical))
        return rr
    except BaseException as exc:
        for path in created:
            path.unlink(missing_ok=True)
        if made_dir and out.exists() and not any(out.iterdir()):
            out.rmdir()
        if isinstance(exc, (PipelineError, KeyboardInterrupt)):
            raise
        if isinstance(exc, (OSError, ValueError, RuntimeError)):
            raise PipelineError("export", str(exc)) from exc
        raise


def load_labeled_outputs(report_path) -> tuple[dict, PointCloud, PointCloud]:
    """Read a report and the labeled clouds it references."""
    report_path = Path(report_path)
    doc = json.loads(report_path.read_text())
    outputs = doc.get("outputs", {})
    missing = [k for k in ("reference_labeled", "current_labeled") if k not in outputs]
    if missing:
        raise PipelineError("eval", f"report lacks labeled outputs: {', '.join(missing)}")
    ref = read_ply((report_path.parent / outputs["reference_labeled"]).read_bytes())
    cur = read_ply((report_path.parent / outputs["current_labeled"]).read_bytes())
    if ref.labels is None or cur.labels is None:
        raise PipelineError("eval", "labeled outputs carry no label property")
    return doc, ref, cur


def reevaluate(report_path, truth: GroundTruth) -> EvalResult:
    """Recompute metrics from the labels stored next to a report."""
    doc, ref, cur = load_labeled_outputs(report_path)
    dcfg = DiffConfig(**doc["diff"]["config_used"])
    alignment = SimilarityTransform.from_dict(doc["diff"]["alignment_used"])
    regions = regions_from_labels(ref, cur, ref.labels, cur.labels, dcfg)
    report = DiffReport(
        reference_labels=ref.labels,
        current_labels=cur.labels,
        reference_distances=np.zeros(len(ref)),
        current_distances=np.zeros(len(cur)),
        regions=regions,
        config_used=dcfg,
        alignment_used=alignment,
    )
    return evaluate(report, truth)


__all__ = [
    "PipelineError",
    "RunReport",
    "canonical_form",
    "execute",
    "reevaluate",
    "run",
]
