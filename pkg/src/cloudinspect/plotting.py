"""Figures written next to a run report."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .formats import LABEL_COLORS  # noqa: E402
from .geometry import PointLabel  # noqa: E402

DPI = 120
GOLDEN = 1.618
MAX_BACKGROUND_POINTS = 20000

# PNG metadata carries a software tag and timestamp by default
_PNG_META = {"Software": None}

_RC = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "savefig.bbox": "tight",
}


def _rgb(label) -> tuple:
    return tuple(c / 255 for c in LABEL_COLORS[label])


def _save(fig, path) -> None:
    fig.savefig(path, dpi=DPI, metadata=_PNG_META)
    plt.close(fig)


def plot_overlay(reference, current_aligned, report, path) -> None:
    """Three orthographic views of both clouds coloured by label."""
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 3, figsize=(11, 11 / 3 + 0.6))
        views = [(0, 1, "x", "y"), (0, 2, "x", "z"), (1, 2, "y", "z")]

        pts = np.concatenate([reference.points, current_aligned.points])
        labels = np.concatenate([report.reference_labels, report.current_labels])
        matched = np.nonzero(labels == PointLabel.MATCHED)[0]
        if len(matched) > MAX_BACKGROUND_POINTS:
            step = int(np.ceil(len(matched) / MAX_BACKGROUND_POINTS))
            matched = matched[::step]

        for ax, (i, j, xi, yj) in zip(axes, views):
            ax.scatter(pts[matched, i], pts[matched, j], s=0.2, c=[_rgb(PointLabel.MATCHED)],
                       alpha=0.3, linewidths=0, rasterized=True)
            for label, name in ((PointLabel.UNMATCHED_REFERENCE, "reference only"),
                                (PointLabel.UNMATCHED_CURRENT, "current only")):
                sel = labels == label
                ax.scatter(pts[sel, i], pts[sel, j], s=1.5, c=[_rgb(label)], linewidths=0,
                           label=f"{name} ({int(sel.sum())})", rasterized=True)
            ax.set_xlabel(xi)
            ax.set_ylabel(yj)
            ax.set_aspect("equal", adjustable="datalim")
        axes[0].legend(loc="best", markerscale=6, frameon=False)
        fig.suptitle(
            f"{len(report.regions)} regions, threshold {report.config_used.match_threshold:.4g}"
        )
        _save(fig, path)


def plot_convergence(icp_result, path) -> None:
    trace = icp_result.error_trace
    it = np.arange(1, len(trace) + 1)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 5 / GOLDEN))
        ax.semilogy(it, [r.mean_squared_error for r in trace], "o-", ms=3, label="mean squared error")
        ax.semilogy(it, [max(r.transform_delta, 1e-300) for r in trace], "s--", ms=3,
                    label="transform change")
        ax.set_xlabel("iteration")
        ax.legend(frameon=False)
        ax.set_title("converged" if icp_result.converged else "not converged")
        _save(fig, path)


def plot_deviation_histogram(report, path) -> None:
    thr = report.config_used.match_threshold
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 5 / GOLDEN))
        hi = max(float(np.max(report.reference_distances)), float(np.max(report.current_distances)), thr)
        bins = np.linspace(0, hi, 60)
        ax.hist(report.reference_distances, bins=bins, histtype="step",
                color=_rgb(PointLabel.UNMATCHED_REFERENCE), label="reference to current")
        ax.hist(report.current_distances, bins=bins, histtype="step",
                color=_rgb(PointLabel.UNMATCHED_CURRENT), label="current to reference")
        ax.axvline(thr, color="k", lw=0.8, ls=":")
        ax.set_yscale("log")
        ax.set_xlabel("nearest-neighbour distance")
        ax.set_ylabel("points")
        ax.legend(frameon=False)
        _save(fig, path)
