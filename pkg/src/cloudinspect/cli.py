"""Command-line entry point.

Failures print one JSON line ``{"error": ..., "stage": ...}`` on stderr and
exit with status 1; usage errors exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig
from .diff import DEFAULT_THRESHOLD_FACTOR, DiffConfig, auto_config, diff
from .formats import load_cloud, save_cloud, write_ply
from .geometry import apply_cloud
from .metrics import GroundTruth
from .pipeline import PipelineError, reevaluate, run
from .registration import IcpConfig, icp
from .spatial import KdTree

logger = logging.getLogger("cloudinspect")


def _fail(stage: str, message: str) -> int:
    print(json.dumps({"error": message, "stage": stage}, sort_keys=True), file=sys.stderr)
    return 1


def _load(path: str, stage: str = "load"):
    try:
        return load_cloud(path)
    except OSError as exc:
        raise PipelineError(stage, f"cannot read {path!r}: {exc.strerror}")
    except ValueError as exc:
        raise PipelineError(stage, f"cannot parse {path!r}: {exc}")


def _threshold(text: str):
    if text == "auto":
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("threshold must be a positive number or 'auto'")
    if not value > 0:
        raise argparse.ArgumentTypeError("threshold must be a positive number or 'auto'")
    return value


def cmd_inspect(args) -> int:
    overrides = list(args.set or [])
    if args.output:
        overrides.append(f"output.directory={json.dumps(args.output)}")
    if args.skip_registration:
        overrides.append("registration.enabled=false")
    if args.no_figures:
        overrides.append("output.figures=false")
    try:
        cfg = RunConfig.load(args.config, overrides)
    except ConfigError as exc:
        return _fail("config", str(exc))
    rr = run(cfg, canonical=args.canonical)
    summary = {
        "output_directory": str(cfg.output_dir),
        "matched_fraction_reference": rr.diff.matched_fraction_reference,
        "matched_fraction_current": rr.diff.matched_fraction_current,
        "regions": len(rr.diff.regions),
    }
    if rr.evaluation is not None:
        summary.update(precision=rr.evaluation.precision, recall=rr.evaluation.recall)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_register(args) -> int:
    reference = _load(args.reference)
    current = _load(args.current)
    config = IcpConfig(
        max_iterations=args.max_iter,
        tolerance=args.tol,
        with_scale=args.with_scale,
        max_correspondence_distance=args.max_distance or math.inf,
        trim_fraction=args.trim,
        subsample_size=args.subsample,
        seed=args.seed,
    )
    try:
        result = icp(current, reference, config)
    except (ValueError, RuntimeError) as exc:
        raise PipelineError("icp", str(exc))
    out = Path(args.out) if args.out else Path(args.current).with_name(
        Path(args.current).stem + "_aligned.ply"
    )
    try:
        save_cloud(out, apply_cloud(result.transform, current))
    except OSError as exc:
        raise PipelineError("export", f"cannot write {str(out)!r}: {exc.strerror}")
    doc = result.to_dict()
    doc["aligned_output"] = str(out)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_diff(args) -> int:
    reference = _load(args.reference)
    current = _load(args.current)
    tree = KdTree(reference)
    try:
        if args.threshold == "auto":
            cfg = auto_config(
                reference, args.factor, args.cluster_radius, args.min_region_points, tree=tree
            )
        else:
            cfg = DiffConfig(
                args.threshold, args.cluster_radius or args.threshold, args.min_region_points
            )
        report = diff(reference, current, None, cfg, reference_tree=tree)
    except ValueError as exc:
        raise PipelineError("diff", str(exc))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "reference_labeled.ply").write_bytes(write_ply(reference, report.reference_labels))
        (out / "current_labeled.ply").write_bytes(write_ply(current, report.current_labels))
    print(json.dumps(report.summary(), indent=2, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    from . import synth

    try:
        spec = synth.preset(args.preset, seed=args.seed, points=args.points, defects=not args.no_defects)
        scene = synth.generate(spec)
    except ValueError as exc:
        raise PipelineError("synth", str(exc))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_cloud(out / "reference.ply", scene.reference, format=args.format)
    save_cloud(out / "current.ply", scene.current, format=args.format)
    scene.truth.save(out / "truth.json")
    meta = {
        "spec": spec.to_dict(),
        "generator_misalignment": scene.generator_misalignment.to_dict(),
        "noise_sigma": scene.noise_sigma,
        "reference_points": len(scene.reference),
        "current_points": len(scene.current),
    }
    (out / "scene.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"out": str(out), "reference_points": len(scene.reference),
                      "current_points": len(scene.current)}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    try:
        truth = GroundTruth.load(args.truth)
    except OSError as exc:
        raise PipelineError("eval", f"cannot read {args.truth!r}: {exc.strerror}")
    except (ValueError, KeyError) as exc:
        raise PipelineError("eval", f"cannot parse {args.truth!r}: {exc}")
    try:
        result = reevaluate(args.report, truth)
    except OSError as exc:
        raise PipelineError("eval", f"cannot read report outputs: {exc}")
    except (ValueError, KeyError) as exc:
        raise PipelineError("eval", str(exc))
    print(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloudinspect",
        description="Align a current point cloud to a reference and report the differences.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="full run from a YAML config")
    p.add_argument("--config", required=True, help="YAML config (or a previous report.json)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key, e.g. diff.threshold=0.02 (repeatable)")
    p.add_argument("--output", help="output directory (same as --set output.directory=...)")
    p.add_argument("--skip-registration", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--canonical", action="store_true",
                   help="omit timings and output location from report.json")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("register", help="align current onto reference with ICP")
    p.add_argument("--reference", required=True)
    p.add_argument("--current", required=True)
    p.add_argument("--with-scale", action="store_true")
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--trim", type=float, default=0.0, help="fraction of worst pairs dropped")
    p.add_argument("--max-distance", type=float, default=None)
    p.add_argument("--subsample", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="aligned cloud path (default: <current>_aligned.ply)")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("diff", help="classify already aligned clouds")
    p.add_argument("--reference", required=True)
    p.add_argument("--current", required=True)
    p.add_argument("--threshold", required=True, type=_threshold,
                   help="match distance in scene units, or 'auto'")
    p.add_argument("--factor", type=float, default=DEFAULT_THRESHOLD_FACTOR,
                   help="spacing multiple used by --threshold auto")
    p.add_argument("--cluster-radius", type=float, default=None)
    p.add_argument("--min-region-points", type=int, default=10)
    p.add_argument("--out", help="directory for labeled PLY files")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("synth", help="write a synthetic scene with ground truth")
    p.add_argument("--preset", required=True, choices=["tower", "shiba-tail", "chair-armrest"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=None, help="expected points per cloud")
    p.add_argument("--no-defects", action="store_true")
    p.add_argument("--format", choices=["binary", "ascii"], default="binary")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="recompute metrics from a stored report")
    p.add_argument("--report", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except PipelineError as exc:
        return _fail(exc.stage, str(exc))


if __name__ == "__main__":
    sys.exit(main())
