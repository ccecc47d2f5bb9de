"""Figure rendering for run reports (headless, file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")  # must precede pyplot import; no display in batch runs

import matplotlib.pyplot as plt
import numpy as np

from .harness import ComparisonResult, RunReport

__all__ = [
    "render_trajectory_figure",
    "render_error_figure",
    "render_comparison_figure",
    "render_report_figures",
]


def _positions(records, attr) -> tuple[np.ndarray, np.ndarray]:
    """Collect keyframe indices and (E, N) pairs where `attr` is present."""
    idx, pts = [], []
    for r in records:
        val = getattr(r, attr)
        if val is not None:
            idx.append(r.index)
            pts.append(val[:2])
    if not pts:
        return np.empty(0, dtype=int), np.empty((0, 2))
    return np.asarray(idx), np.asarray(pts)


def render_trajectory_figure(report: RunReport, path) -> None:
    """Top-down east/north view: truth, aligned odometry, fused, fixes."""
    fig, ax = plt.subplots(figsize=(7.0, 6.0))
    truth = np.asarray([r.truth[:2] for r in report.records])
    ax.plot(truth[:, 0], truth[:, 1], color="black", lw=1.6, label="truth")

    _, vio = _positions(report.records, "vio_aligned")
    if len(vio):
        ax.plot(vio[:, 0], vio[:, 1], color="tab:orange", lw=1.2, ls="--", label="odometry (aligned)")

    _, fused = _positions(report.records, "fused")
    if len(fused):
        ax.plot(fused[:, 0], fused[:, 1], color="tab:blue", lw=1.2, label="fused")

    reg_idx, reg = _positions(report.records, "registered")
    if len(reg):
        true_flags = np.asarray([report.records[i].true_match for i in reg_idx], dtype=bool)
        if true_flags.any():
            ax.scatter(reg[true_flags, 0], reg[true_flags, 1], s=12, color="tab:green",
                       marker="o", label="registration (true)")
        if (~true_flags).any():
            ax.scatter(reg[~true_flags, 0], reg[~true_flags, 1], s=16, color="tab:red",
                       marker="x", label="registration (false)")

    ax.set_xlabel("east [m]")
    ax.set_ylabel("north [m]")
    ax.set_title(f"{report.method} seed={report.seed}")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_error_figure(report: RunReport, path) -> None:
    """Horizontal error against keyframe index for each estimate kind."""
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    truth = {r.index: np.asarray(r.truth[:2]) for r in report.records}

    for attr, style in (
        ("vio_aligned", dict(color="tab:orange", ls="--", label="odometry (aligned)")),
        ("fused", dict(color="tab:blue", label="fused")),
    ):
        idx, pts = _positions(report.records, attr)
        if len(pts):
            err = np.linalg.norm(pts - np.asarray([truth[i] for i in idx]), axis=1)
            ax.plot(idx, err, lw=1.2, **style)

    idx, reg = _positions(report.records, "registered")
    if len(reg):
        err = np.linalg.norm(reg - np.asarray([truth[i] for i in idx]), axis=1)
        ax.scatter(idx, err, s=10, color="tab:green", label="registration")

    ax.set_xlabel("keyframe")
    ax.set_ylabel("horizontal error [m]")
    ax.set_title(f"{report.method} seed={report.seed}")
    ax.set_yscale("log")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_report_figures(report: RunReport, stem) -> list[str]:
    """Render the standard pair of run figures next to an export stem."""
    stem = str(stem)
    paths = [stem + "_trajectory.png", stem + "_error.png"]
    render_trajectory_figure(report, paths[0])
    render_error_figure(report, paths[1])
    return paths


def render_comparison_figure(result: ComparisonResult, path) -> None:
    """Grouped bars of the headline metrics per method."""
    metrics = (
        ("match_rate", "match rate"),
        ("registration_rmse", "registration RMSE [m]"),
        ("fused_rmse", "fused RMSE [m]"),
        ("vio_rmse", "odometry RMSE [m]"),
    )
    fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 3.6))
    names = [row["method"] for row in result.rows]
    x = np.arange(len(names))
    for ax, (key, label) in zip(axes, metrics):
        means = [row[f"{key}_mean"] for row in result.rows]
        stds = [row[f"{key}_std"] for row in result.rows]
        present = [i for i, m in enumerate(means) if m is not None]
        if present:
            ax.bar(
                [x[i] for i in present],
                [means[i] for i in present],
                yerr=[stds[i] or 0.0 for i in present],
                width=0.6,
                color="tab:blue",
                capsize=3,
            )
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
        ax.set_title(label, fontsize=9)
        ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
