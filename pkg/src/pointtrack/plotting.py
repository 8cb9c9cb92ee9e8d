"""Figures for the report command.

Every figure is written twice: a whitespace-delimited text file with the
plotted columns (readable by any plotting tool) and a PNG rendered with the
Agg backend.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {"figure.figsize": (4.5, 3.2), "figure.dpi": 120, "axes.grid": True,
         "grid.alpha": 0.3, "font.size": 9, "legend.fontsize": 8}


def write_columns(path, header, columns):
    """Write equal-length columns with a ``#`` header line."""
    cols = [np.asarray(c) for c in columns]
    with open(path, "w") as f:
        f.write("# " + " ".join(header) + "\n")
        for row in zip(*cols):
            f.write(" ".join(_fmt(v) for v in row) + "\n")
    return Path(path)


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def curve_figure(out_dir, name, x, curves: dict, xlabel, ylabel):
    """Line plot of several curves over a shared x; returns (txt, png)."""
    out_dir = Path(out_dir)
    labels = list(curves)
    txt = write_columns(out_dir / f"{name}.txt", [xlabel] + labels, [x] + [curves[k] for k in labels])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for k in labels:
            ax.plot(x, curves[k], label=k)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_ylim(0, 1.02)
        if len(labels) > 1:
            ax.legend()
        png = _save(fig, out_dir / f"{name}.png")
    return txt, png


def histogram_figure(out_dir, name, edges, counts, xlabel="points on target"):
    out_dir = Path(out_dir)
    edges = np.asarray(edges)
    counts = np.asarray(counts)
    txt = write_columns(out_dir / f"{name}.txt", ["bin_low", "bin_high", "count"], [edges[:-1], edges[1:], counts])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", edgecolor="k", linewidth=0.4)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("frames")
        png = _save(fig, out_dir / f"{name}.png")
    return txt, png


def bucket_figure(out_dir, name, rows):
    """Average Success per point-count bucket (rows from success_vs_initial_points)."""
    out_dir = Path(out_dir)
    lo = [r["low"] for r in rows]
    hi = [r["high"] for r in rows]
    txt = write_columns(out_dir / f"{name}.txt", ["low", "high", "tracklets", "success"],
                        [lo, hi, [r["tracklets"] for r in rows], [r["success"] for r in rows]])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar([f"[{a},{b})" for a, b in zip(lo, hi)], [r["success"] for r in rows])
        ax.set_xlabel("points on target in the first frame")
        ax.set_ylabel("Success")
        ax.tick_params(axis="x", labelrotation=30)
        png = _save(fig, out_dir / f"{name}.png")
    return txt, png
