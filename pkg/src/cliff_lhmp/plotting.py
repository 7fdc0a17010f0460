"""Static SVG figures: map arrows with trajectory overlays, metric curves."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib
from matplotlib.figure import Figure
import numpy as np

from .core import CliffMap
from .evaluation import MetricsRow

MAX_RENDER_CELLS = 1_000_000

# fixed salt and no timestamp keep SVG output byte-identical across runs
_SVG_RC = {
    "svg.hashsalt": "cliff-lhmp",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

OBSERVED = "tab:green"
GROUND_TRUTH = "tab:red"
PREDICTED = "tab:blue"
METHOD_COLORS = {"cliff-lhmp": "tab:blue", "cvm": "tab:orange"}


class RenderError(ValueError):
    pass


def _save(fig: Figure, path) -> None:
    fig.savefig(Path(path), format="svg", metadata={"Date": None, "Creator": None})


def map_arrows(cliff_map: CliffMap) -> np.ndarray:
    """One row ``(x, y, u, v, motion_ratio)`` per cell for its dominant mode.

    The arrow points along the mode's mean direction; its length is
    proportional to the mean speed, with the fastest cell spanning 0.9 cells.
    """
    rows = []
    for cell in cliff_map.cells.values():
        mode = cell.mixture.dominant()
        rows.append((cell.location[0], cell.location[1], mode.mu[0], mode.mu[1], cell.motion_ratio))
    if not rows:
        return np.empty((0, 5))
    a = np.array(rows)
    top = a[:, 3].max()
    scale = 0.9 * cliff_map.resolution / top if top > 0 else 0.0
    length = a[:, 3] * scale
    return np.column_stack([a[:, 0], a[:, 1], length * np.cos(a[:, 2]), length * np.sin(a[:, 2]), a[:, 4]])


def render_map(cliff_map: CliffMap, path, observed: Sequence[np.ndarray] = (),
               ground_truth: Sequence[np.ndarray] = (), predictions: Sequence[np.ndarray] = (),
               title: str | None = None) -> None:
    """Write the map as an SVG quiver plot, colored by motion ratio.

    Overlays follow the usual convention: observed history green, ground
    truth red, predictions blue.
    """
    if len(cliff_map) > MAX_RENDER_CELLS:
        raise RenderError(
            f"map has {len(cliff_map)} cells (limit {MAX_RENDER_CELLS}); "
            "crop the input data or rebuild at a coarser resolution before rendering"
        )
    arrows = map_arrows(cliff_map)
    with matplotlib.rc_context(_SVG_RC):
        x0, y0, x1, y1 = cliff_map.bounds
        w, h = max(x1 - x0, 1e-9), max(y1 - y0, 1e-9)
        width = 7.0
        height = min(max(width * h / w, 2.5), 14.0)
        fig = Figure(figsize=(width + 1.2, height))
        ax = fig.add_subplot()
        if len(arrows):
            q = ax.quiver(arrows[:, 0], arrows[:, 1], arrows[:, 2], arrows[:, 3], arrows[:, 4],
                          cmap="viridis", clim=(0.0, 1.0), angles="xy", scale_units="xy", scale=1.0,
                          pivot="middle", width=0.003)
            fig.colorbar(q, ax=ax, label="motion ratio", shrink=0.8)
        for xy in predictions:
            xy = np.asarray(xy)
            ax.plot(xy[:, 0], xy[:, 1], color=PREDICTED, lw=0.8, alpha=0.6)
        for xy in ground_truth:
            xy = np.asarray(xy)
            ax.plot(xy[:, 0], xy[:, 1], color=GROUND_TRUTH, lw=1.6)
        for xy in observed:
            xy = np.asarray(xy)
            ax.plot(xy[:, 0], xy[:, 1], color=OBSERVED, lw=1.6)
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        if title:
            ax.set_title(title)
        _save(fig, path)


def plot_metrics(rows: Sequence[MetricsRow], path, title: str | None = None) -> None:
    """ADE and FDE (mean +/- one std) against prediction horizon, one line per method."""
    with matplotlib.rc_context(_SVG_RC):
        fig = Figure(figsize=(8.0, 3.2))
        axes = fig.subplots(1, 2)
        methods = list(dict.fromkeys(r.method for r in rows))
        for method in methods:
            sub = [r for r in rows if r.method == method and r.n > 0]
            if not sub:
                continue
            h = np.array([r.horizon for r in sub])
            color = METHOD_COLORS.get(method)
            for ax, mean, std in ((axes[0], "ade_mean", "ade_std"), (axes[1], "fde_mean", "fde_std")):
                m = np.array([getattr(r, mean) for r in sub])
                s = np.array([getattr(r, std) for r in sub])
                ax.plot(h, m, color=color, label=method, lw=1.4)
                ax.fill_between(h, m - s, m + s, color=color, alpha=0.15, lw=0)
        for ax, name in zip(axes, ("ADE", "FDE")):
            ax.set_xlabel("prediction horizon [s]")
            ax.set_ylabel(f"{name} [m]")
        axes[0].legend(frameon=False)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        _save(fig, path)


def plot_sweep(param: str, table: Mapping[float, Sequence[MetricsRow]], path, method: str = "cliff-lhmp") -> None:
    """ADE (mean +/- std) against horizon for each swept value."""
    with matplotlib.rc_context(_SVG_RC):
        fig = Figure(figsize=(5.0, 3.4))
        ax = fig.add_subplot()
        cmap = matplotlib.colormaps["viridis"]
        n = max(len(table) - 1, 1)
        for i, (value, rows) in enumerate(table.items()):
            sub = [r for r in rows if r.method == method and r.n > 0 and not math.isnan(r.ade_mean)]
            if not sub:
                continue
            h = np.array([r.horizon for r in sub])
            m = np.array([r.ade_mean for r in sub])
            s = np.array([r.ade_std for r in sub])
            color = cmap(i / n)
            ax.plot(h, m, color=color, lw=1.4, label=f"{param}={value:g}")
            ax.fill_between(h, m - s, m + s, color=color, alpha=0.12, lw=0)
        ax.set_xlabel("prediction horizon [s]")
        ax.set_ylabel("ADE [m]")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)
