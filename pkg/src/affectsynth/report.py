"""Delimited reports and the figures rendered alongside them."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import ExperimentRow

EXPERIMENT_COLUMNS = ["components", "ccc_valence", "ccc_arousal", "mse_valence", "mse_arousal"]


def write_experiment_csv(rows: list[ExperimentRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EXPERIMENT_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.components,
                    f"{row.ccc_valence:.6f}",
                    f"{row.ccc_arousal:.6f}",
                    f"{row.mse_valence:.6f}",
                    f"{row.mse_arousal:.6f}",
                ]
            )


def format_experiment_table(rows: list[ExperimentRow]) -> str:
    """Aligned text table: component count against CCC and MSE per axis."""
    header = (
        f"{'components':>10} | {'CCC-V':>7} {'CCC-A':>7} | {'MSE-V':>7} {'MSE-A':>7}"
    )
    rule = "-" * len(header)
    lines = [header, rule]
    for row in rows:
        lines.append(
            f"{row.components:>10d} | {row.ccc_valence:>7.3f} {row.ccc_arousal:>7.3f} "
            f"| {row.mse_valence:>7.3f} {row.mse_arousal:>7.3f}"
        )
    return "\n".join(lines)


def plot_experiment(rows: list[ExperimentRow], path: str | Path) -> None:
    """CCC and MSE against the component count, one panel each."""
    hs = [r.components for r in rows]
    fig, (ax_ccc, ax_mse) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_ccc.plot(hs, [r.ccc_valence for r in rows], "o-", label="valence")
    ax_ccc.plot(hs, [r.ccc_arousal for r in rows], "s-", label="arousal")
    ax_ccc.set_xlabel("components")
    ax_ccc.set_ylabel("CCC")
    ax_ccc.set_ylim(-0.05, 1.05)
    ax_ccc.legend()
    ax_ccc.grid(True, alpha=0.3)
    ax_mse.plot(hs, [r.mse_valence for r in rows], "o-", label="valence")
    ax_mse.plot(hs, [r.mse_arousal for r in rows], "s-", label="arousal")
    ax_mse.set_xlabel("components")
    ax_mse.set_ylabel("MSE")
    ax_mse.legend()
    ax_mse.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_histogram_csv(counts: np.ndarray, path: str | Path) -> None:
    """10x10 occupancy as rows of counts, arousal row index first."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row"] + [f"col{c}" for c in range(counts.shape[1])])
        for r in range(counts.shape[0]):
            writer.writerow([r] + [int(v) for v in counts[r]])


def plot_grid_histogram(counts: np.ndarray, path: str | Path) -> None:
    """Occupancy heat map over the valence-arousal square."""
    fig, ax = plt.subplots(figsize=(5.5, 5))
    im = ax.imshow(
        counts,
        origin="lower",
        extent=(-1, 1, -1, 1),
        cmap="viridis",
        interpolation="nearest",
    )
    ax.set_xlabel("valence")
    ax.set_ylabel("arousal")
    ax.set_xticks(np.linspace(-1, 1, 11))
    ax.set_yticks(np.linspace(-1, 1, 11))
    ax.grid(True, color="w", alpha=0.15, linewidth=0.5)
    fig.colorbar(im, ax=ax, label="frames")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_mean_faces(cache, path: str | Path, render_size: int = 96) -> None:
    """Montage of each populated cell's mean face, laid out on the grid
    (valence left to right, arousal bottom to top)."""
    from .pipeline import render_preview

    grid_side = cache.histogram.shape[0]
    fig, axes = plt.subplots(grid_side, grid_side, figsize=(11, 11))
    populated = {(c.row, c.col) for c in cache.grid.nonempty_cells()}
    for row in range(grid_side):
        for col in range(grid_side):
            ax = axes[grid_side - 1 - row][col]
            ax.set_xticks([])
            ax.set_yticks([])
            if (row, col) in populated:
                from .vagrid import CellIndex

                mesh, _, _ = cache.synthesize_mesh(*CellIndex(row, col).center())
                ax.imshow(render_preview(mesh, render_size).data)
            else:
                ax.set_facecolor("#20242c")
            for spine in ax.spines.values():
                spine.set_color("#444a58")
    fig.suptitle("mean faces per valence-arousal cell", color="#333")
    fig.supxlabel("valence")
    fig.supylabel("arousal")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
