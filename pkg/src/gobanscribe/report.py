"""Session reports: a JSON summary plus diagnostic figures.

`write_report(engine, path)` dumps the SessionReport as JSON at `path`
and renders two PNGs beside it: `board_final.png` (the reconstructed
final position with move numbers) and `grid_tracking.png` (per-corner
grid displacement over the session, with correction counts in the
title).
"""
from __future__ import annotations

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .game import BLACK, WHITE
from .synth import star_points


def _draw_board(ax, state) -> None:
    n = state.n
    ax.set_facecolor("#dcb35c")
    for i in range(n):
        ax.plot([0, n - 1], [i, i], color="black", lw=0.8, zorder=1)
        ax.plot([i, i], [0, n - 1], color="black", lw=0.8, zorder=1)
    for col, row in star_points(n):
        ax.scatter([col], [row], s=14, color="black", zorder=2)
    numbers = {}
    for m in state.moves:
        numbers[m.point] = m.number
    for row in range(n):
        for col in range(n):
            v = state.cells[row, col]
            if v not in (BLACK, WHITE):
                continue
            face = "black" if v == BLACK else "white"
            ax.add_patch(plt.Circle((col, row), 0.45, facecolor=face,
                                    edgecolor="black", lw=0.7, zorder=3))
            num = numbers.get((col, row))
            if num is not None:
                ax.text(col, row, str(num), ha="center", va="center",
                        fontsize=7, zorder=4,
                        color="white" if v == BLACK else "black")
    ax.set_xlim(-0.8, n - 0.2)
    ax.set_ylim(n - 0.2, -0.8)  # row 0 at the top, as seen from the camera
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])


def _draw_tracking(ax, history, corrections: int) -> None:
    if not history:
        ax.set_title("grid tracking (no frames)")
        return
    frames = np.array([f for f, _ in history])
    corners = np.stack([c for _, c in history])  # (t, 4, 2)
    disp = np.linalg.norm(corners - corners[0], axis=2)  # (t, 4)
    labels = ["top-left", "top-right", "bottom-right", "bottom-left"]
    for k in range(4):
        ax.plot(frames, disp[:, k], lw=1.0, label=labels[k])
    ax.set_xlabel("frame")
    ax.set_ylabel("corner displacement from start (px)")
    ax.set_title(f"grid tracking ({corrections} corrections)")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)


def write_report(engine, path: str) -> list[str]:
    """Write report JSON + figures; returns the paths written."""
    out_dir = os.path.dirname(os.path.abspath(path))
    os.makedirs(out_dir, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(engine.report.to_json() + "\n")
    written = [path]

    fig, ax = plt.subplots(figsize=(6, 6))
    _draw_board(ax, engine.state)
    ax.set_title(f"final position ({len(engine.state.moves)} moves)")
    board_png = os.path.join(out_dir, "board_final.png")
    fig.savefig(board_png, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(board_png)

    fig, ax = plt.subplots(figsize=(7, 4))
    _draw_tracking(ax, engine.grid_history, engine.report.grid_corrections)
    track_png = os.path.join(out_dir, "grid_tracking.png")
    fig.savefig(track_png, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(track_png)
    return written
