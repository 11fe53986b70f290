"""Optional SVG rendering of the plot data (needs matplotlib).

CSV files are the primary output; these figures are for viewing only. The
SVG hash salt and date are pinned so reruns write identical files.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np


@contextmanager
def _figure(path, figsize=(5.0, 4.0)):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "shapegrowth", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=figsize)
        try:
            yield fig, ax
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)


def heatmap_svg(path, x, y, values, xlabel, ylabel, clabel):
    with _figure(path) as (fig, ax):
        mesh = ax.pcolormesh(np.asarray(y), np.asarray(x), np.asarray(values), shading="auto")
        ax.set_xlabel(ylabel)
        ax.set_ylabel(xlabel)
        fig.colorbar(mesh, ax=ax, label=clabel)


def lines_svg(path, series, xlabel, ylabel, markers=None):
    """``series`` maps a label to (x, y); ``markers`` are horizontal reference levels."""
    with _figure(path) as (fig, ax):
        for label, (x, y) in series.items():
            ax.plot(x, y, label=label)
        for level in markers or ():
            ax.axhline(level, color="grey", lw=0.6, ls="--")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if len(series) > 1:
            ax.legend()


def bars_svg(path, labels, heights, xlabel, ylabel):
    with _figure(path) as (fig, ax):
        ax.bar(range(len(heights)), heights)
        ax.set_xticks(range(len(labels)), labels, rotation=90, fontsize=6)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)


def scatter_svg(path, truth, pred, label):
    with _figure(path) as (fig, ax):
        ax.scatter(truth, pred, s=10)
        lo = float(min(np.min(truth), np.nanmin(pred)))
        hi = float(max(np.max(truth), np.nanmax(pred)))
        ax.plot([lo, hi], [lo, hi], color="grey", lw=0.8)
        ax.set_xlabel("true GR (mm/month)")
        ax.set_ylabel(f"predicted GR, {label} (mm/month)")
