"""Matplotlib figures written next to the CSV/JSON outputs.

Imported lazily by the CLI so the library itself never needs a display.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_drain_curve(curve, path, title: str | None = None) -> Path:
    """Battery level against time, with per-checkpoint minutes underneath."""
    with plt.rc_context(RC):
        fig, (top, bottom) = plt.subplots(2, 1, figsize=(5.5, 5), sharex=True,
                                          gridspec_kw={"height_ratios": [2, 1]})
        t = [0.0] + [p[1] for p in curve.points]
        level = [curve.start_level] + [p[0] for p in curve.points]
        top.plot(t, level, color="C0", lw=1.4)
        top.set_ylabel("battery (%)")
        top.set_ylim(0, 100)
        top.set_title(title or curve.id)
        bottom.bar([p[1] for p in curve.points], curve.deltas, width=max(t[-1], 1) / 120, color="C3")
        bottom.set_ylabel("min / checkpoint")
        bottom.set_xlabel("elapsed (min)")
        return _save(fig, path)


def plot_reproduction(report, path) -> Path:
    """Measured versus simulated 5%-drain minutes per component."""
    rows = report.table
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6.5, 3.2))
        x = range(len(rows))
        ax.bar([i - 0.2 for i in x], [r.paper_minutes for r in rows], width=0.4, label="measured", color="0.6")
        ax.bar([i + 0.2 for i in x], [r.simulated_minutes for r in rows], width=0.4, label="model", color="C0")
        ax.set_xticks(list(x))
        ax.set_xticklabels([r.component for r in rows], rotation=45, ha="right")
        ax.set_ylabel("minutes per 5%")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_ranking(ranked: Sequence, path) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 0.5 + 0.4 * len(ranked)))
        names = [r.name for r in ranked][::-1]
        minutes = [r.minutes for r in ranked][::-1]
        colors = ["C0" if r.feasible else "0.7" for r in ranked][::-1]
        ax.barh(names, minutes, color=colors)
        ax.set_xlabel("simulated minutes to goal")
        return _save(fig, path)
