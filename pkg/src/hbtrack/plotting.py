"""Static figures: track overlays and ablation summaries.

Uses the non-interactive Agg backend so everything works headless.  Figures
are written through :func:`hbtrack.io.atomic_write`.
"""
from __future__ import annotations

from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .geometry import BBox  # noqa: E402
from .io import atomic_write  # noqa: E402

__all__ = ["track_color", "render_frame", "plot_ablation", "plot_report"]

_STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}


def track_color(track_id: int):
    """Stable color per id, cycling through tab20."""
    return plt.get_cmap("tab20")(int(track_id) % 20)


def _save(fig, path, fmt: Optional[str] = None) -> None:
    fmt = fmt or str(path).rsplit(".", 1)[-1].lower()
    # no timestamps in metadata so reruns give identical bytes
    meta = {"Software": None} if fmt == "png" else {"CreationDate": None} if fmt == "pdf" else None
    with atomic_write(path, "wb") as fh:
        fig.savefig(fh, format=fmt, metadata=meta)
    plt.close(fig)


def render_frame(path, tracks: Sequence[tuple[int, BBox]], arena: tuple[int, int],
                 frame: Optional[int] = None, ground_truth: Sequence[tuple[int, BBox]] = (),
                 width_in: float = 8.0) -> None:
    """Draw colored track boxes (and optional dashed ground truth) on a blank arena."""
    w, h = arena
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(width_in, width_in * h / w))
        ax.set_xlim(0, w)
        ax.set_ylim(h, 0)
        ax.set_aspect("equal")
        ax.set_facecolor("0.95")
        for _, box in ground_truth:
            ax.add_patch(Rectangle((box.x, box.y), box.w, box.h, fill=False,
                                   ec="0.5", lw=0.8, ls="--"))
        for tid, box in tracks:
            c = track_color(tid)
            ax.add_patch(Rectangle((box.x, box.y), box.w, box.h, fill=False, ec=c, lw=1.5))
            ax.text(box.x, box.y - 2, str(tid), color=c, fontsize=7, va="bottom")
        if frame is not None:
            ax.set_title(f"frame {frame}: {len(tracks)} tracks")
        ax.set_xticks([])
        ax.set_yticks([])
        _save(fig, path)


def plot_ablation(path, rows: Sequence[Mapping], group_key: str, metrics: Sequence[str],
                  title: str = "") -> None:
    """Per-seed lines for each group, one panel per metric.

    ``rows`` are dicts holding ``seed``, ``group_key`` and the metric columns.
    """
    groups = sorted({r[group_key] for r in rows}, key=str)
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.6 * len(metrics), 3.0), squeeze=False)
        for ax, metric in zip(axes[0], metrics):
            for k, g in enumerate(groups):
                sel = sorted((r for r in rows if r[group_key] == g), key=lambda r: r["seed"])
                seeds = [r["seed"] for r in sel]
                vals = np.array([r[metric] for r in sel], dtype=float)
                ax.plot(seeds, vals, marker="o", ms=3, lw=1, color=f"C{k}",
                        label=f"{g} (mean {np.nanmean(vals):.3g})")
            ax.set_xlabel("seed")
            ax.set_ylabel(metric.replace("_", " "))
            ax.legend(frameon=False)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        _save(fig, path)


def plot_report(path, per_frame: Sequence, title: str = "") -> None:
    """Cumulative misses, false positives and switches over frames."""
    frames = [e.frame for e in per_frame]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        for attr, label in (("misses", "misses"), ("false_positives", "false positives"),
                            ("switches", "id switches")):
            ax.step(frames, np.cumsum([getattr(e, attr) for e in per_frame]), where="post",
                    label=label)
        ax.set_xlabel("frame")
        ax.set_ylabel("cumulative count")
        ax.legend(frameon=False)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)
