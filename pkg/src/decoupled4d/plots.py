"""Diagnostic figures rendered from a finished run directory.

Everything here reads the files a pipeline run leaves behind, so figures can
be regenerated after the fact without re-running any stage. The Agg backend
is forced so headless machines work; no interactive windows are opened.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .dtm import read_dense_map
from .geometry import load_trajectory

_DPI = 110


def _positions(path) -> np.ndarray:
    return np.array([p.translation for p in load_trajectory(path)])


def _masked(dense) -> np.ma.MaskedArray:
    return np.ma.masked_where(~dense.defined, dense.values)


def plot_trajectories(run_dir, out_path) -> Path:
    """Top-down (x, z) view of ground-truth and estimated camera paths."""
    run_dir = Path(run_dir)
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    styles = [("gt/traj_gt.txt", "ground truth", "k-"),
              ("traj_pass1.txt", "pass 1 (unmasked)", "C1--"),
              ("traj_pass2.txt", "pass 2", "C0-")]
    for rel, label, style in styles:
        path = run_dir / rel
        if not path.exists():
            continue
        pos = _positions(path)
        ax.plot(pos[:, 0], pos[:, 2], style, label=label, linewidth=1.2)
    ax.set_xlabel("x [scene units]")
    ax.set_ylabel("z [scene units]")
    ax.set_title("camera trajectory (top-down)")
    ax.legend(fontsize=8)
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    fig.savefig(out_path, dpi=_DPI)
    plt.close(fig)
    return Path(out_path)


def plot_mask_frame(run_dir, frame: int, out_path) -> Path:
    """Saliency, mined mask, and ground-truth mask for one frame."""
    run_dir = Path(run_dir)
    stem = f"{frame:03d}.dtm"
    panels = [
        (run_dir / "mask" / f"saliency_{stem}", "saliency", "saliency", "magma"),
        (run_dir / "mask" / f"mask_{stem}", "mask", "mined mask", "gray"),
        (run_dir / "gt" / f"mask_{stem}", "mask", "ground truth", "gray"),
    ]
    fig, axes = plt.subplots(1, 3, figsize=(9.6, 3.0))
    for ax, (path, role, title, cmap) in zip(axes, panels):
        if path.exists():
            dense = read_dense_map(path, role)
            im = ax.imshow(_masked(dense), cmap=cmap, interpolation="nearest")
            fig.colorbar(im, ax=ax, fraction=0.046)
        ax.set_title(f"{title} (frame {frame})", fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(out_path, dpi=_DPI)
    plt.close(fig)
    return Path(out_path)


def plot_depth_frame(run_dir, frame: int, out_path) -> Path:
    """Ground-truth depth, fused depth, absolute error, and fusion weight."""
    run_dir = Path(run_dir)
    stem = f"{frame:03d}.dtm"
    gt = read_dense_map(run_dir / "gt" / f"depth_{stem}", "depth")
    fused = read_dense_map(run_dir / "fused" / f"depth_{stem}", "depth")
    weight = read_dense_map(run_dir / "fused" / f"weight_{stem}", "confidence")
    both = gt.defined & fused.defined
    err = np.ma.masked_where(~both, np.abs(fused.values - gt.values))

    fig, axes = plt.subplots(1, 4, figsize=(12.4, 3.0))
    panels = [(_masked(gt), "gt depth", "viridis"),
              (_masked(fused), "fused depth", "viridis"),
              (err, "|error|", "inferno"),
              (_masked(weight), "pass-1 weight W", "coolwarm")]
    for ax, (img, title, cmap) in zip(axes, panels):
        im = ax.imshow(img, cmap=cmap, interpolation="nearest")
        fig.colorbar(im, ax=ax, fraction=0.046)
        ax.set_title(f"{title} (frame {frame})", fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(out_path, dpi=_DPI)
    plt.close(fig)
    return Path(out_path)


def render_run_figures(run_dir, num_frames: int) -> list[Path]:
    """Write the standard figure set for one run into ``run_dir/figures``."""
    run_dir = Path(run_dir)
    fig_dir = run_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    frame = num_frames // 2
    written = [plot_trajectories(run_dir, fig_dir / "trajectories.png")]
    if (run_dir / "mask").exists():
        written.append(plot_mask_frame(run_dir, frame,
                                       fig_dir / "mask_frame.png"))
    if (run_dir / "fused").exists():
        written.append(plot_depth_frame(run_dir, frame,
                                        fig_dir / "depth_frame.png"))
    return written


def render_ablation_figure(report, out_path) -> Path:
    """Bar chart of median chamfer distance and ATE per ablation variant."""
    labels = [row.label for row in report.rows]
    x = np.arange(len(labels))
    fig, axes = plt.subplots(1, 2, figsize=(9.2, 3.6))
    for ax, key, title in [(axes[0], "dist_mean", "chamfer distance mean"),
                           (axes[1], "ate", "ATE")]:
        med = [row.median[key] for row in report.rows]
        iqr = [row.iqr[key] for row in report.rows]
        ax.bar(x, med, yerr=iqr, capsize=3, color="C0", alpha=0.85)
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
        ax.set_title(f"{title} (median, IQR bars)", fontsize=9)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=_DPI)
    plt.close(fig)
    return out_path
