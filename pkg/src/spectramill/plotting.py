"""SVG figures for pipeline stages and sweep grids."""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

if TYPE_CHECKING:
    from .evaluation import SweepGrid
    from .pipeline import PeakReport

plt.rcParams["svg.hashsalt"] = "spectramill"  # stable element ids across runs


def stage_plot(report: "PeakReport", raw_values, path: str | Path) -> None:
    axis = report.denoised.axis
    panels = [
        ("raw (normalized)", raw_values),
        ("denoised", report.denoised.values),
        ("baseline", report.baseline),
        ("corrected", report.corrected.values),
        ("location scores", report.location_scores),
    ]
    fig, axes = plt.subplots(len(panels), 1, figsize=(7, 9), sharex=True)
    for ax, (title, y) in zip(axes, panels):
        ax.plot(axis, y, lw=1)
        ax.set_title(title, fontsize=9, loc="left")
    for p in report.peaks:
        axes[-1].axvline(p.position, color="tab:red", lw=0.8, ls="--")
        axes[3].axvline(p.position, color="tab:red", lw=0.8, ls="--")
    axes[-1].axhline(report.meta.get("threshold", 0.5), color="gray", lw=0.6)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def sweep_heatmap(grid: "SweepGrid", path: str | Path, title: str = "peak accuracy") -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    im = ax.imshow(grid.cells, vmin=0, vmax=1, cmap="viridis", origin="lower")
    ax.set_xticks(range(len(grid.windows)), [str(w) for w in grid.windows])
    ax.set_yticks(range(len(grid.thresholds)), [f"{t:g}" for t in grid.thresholds])
    ax.set_xlabel("NMS window")
    ax.set_ylabel("threshold")
    for i in range(len(grid.thresholds)):
        for j in range(len(grid.windows)):
            v = grid.cells[i, j]
            ax.text(j, i, f"{v:.3f}", ha="center", va="center", color="w" if v < 0.6 else "k", fontsize=8)
    fig.colorbar(im, ax=ax)
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def loss_curves(logs: dict, path: str | Path) -> None:
    """logs: arm name -> list of (epoch, exam_mse)."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, rows in logs.items():
        rows = np.asarray(rows, dtype=float)
        ax.semilogy(rows[:, 0], rows[:, 1], label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("exam MSE")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
