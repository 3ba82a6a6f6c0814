"""Figure renderers: depth sweeps, ratio histograms, regime heatmaps, paths.

Each renderer returns a small info dict (raster shape, counts, output
path) so callers and tests can check the data mapping without decoding
the image.  Rendering is deterministic: the same CSV produces the same
bytes.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import LinearSegmentedColormap, TwoSlopeNorm

from .io import SchemaError, load_table, matches, numeric, require_columns

KINDS = ("sweep", "histogram", "heatmap", "paths")

# identity regime cool, explosion warm, a dark band at the critical zero
_DIVERGING = LinearSegmentedColormap.from_list(
    "regimes", ["#2166ac", "#16161d", "#b2182b"]
)

_INK = "#16161d"


@dataclass
class PlotJob:
    """One rendering request: input CSV, figure kind, output image."""

    src: str
    kind: str
    out: str
    options: dict = field(default_factory=dict)


def render(job: PlotJob) -> dict:
    if job.kind not in KINDS:
        raise SchemaError(f"unknown figure kind {job.kind!r} (use one of {KINDS})")
    fn = {
        "sweep": render_sweep,
        "histogram": render_histogram,
        "heatmap": render_heatmap,
        "paths": render_paths,
    }[job.kind]
    return fn(job.src, job.out, **job.options)


def _save(fig, out, dpi: int) -> str:
    out = Path(out)
    fig.savefig(out, dpi=dpi)
    plt.close(fig)
    return str(out)


def _sample_rows(table: dict, quantity: str, src) -> np.ndarray:
    """Selector for per-trial sample rows of one ratio quantity."""
    require_columns(table, ("quantity", "statistic", "value", "overflow"))
    sel = matches(table, "quantity", quantity) & matches(table, "statistic", "value")
    if not sel.any():
        raise SchemaError(f"{src}: no {quantity!r} sample rows")
    return sel


def render_histogram(src, out, quantity: str = "output_norm_ratio",
                     bins: int = 60, dpi: int = 150) -> dict:
    table = load_table(src)
    sel = _sample_rows(table, quantity, src)
    values = numeric(table, "value")[sel]
    overflowed = numeric(table, "overflow", 0.0)[sel] > 0
    finite = values[~overflowed & np.isfinite(values)]
    if finite.size == 0:
        raise SchemaError(f"{src}: no finite {quantity!r} values to bin")

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.hist(finite, bins=bins, color="#4878a8", edgecolor="white", linewidth=0.3)
    med = float(np.median(finite))
    ax.axvline(med, color=_INK, linestyle="--", linewidth=1.0,
               label=f"median {med:.3g}")
    ax.set_xlabel(quantity.replace("_", " "))
    ax.set_ylabel("trials")
    title = f"{quantity} over {finite.size} trials"
    if overflowed.any():
        title += f" ({int(overflowed.sum())} overflowed, not shown)"
    ax.set_title(title, fontsize=10)
    ax.legend(frameon=False)
    fig.tight_layout()
    return {
        "out": _save(fig, out, dpi),
        "count": int(finite.size),
        "overflowed": int(overflowed.sum()),
        "bins": int(bins),
    }


def render_sweep(src, out, quantity: str = "output_ratio",
                 logy: bool = True, dpi: int = 150) -> dict:
    table = load_table(src)
    sel = _sample_rows(table, quantity, src)
    require_columns(table, ("L", "trial"))
    depth = numeric(table, "L")[sel]
    trial = numeric(table, "trial")[sel]
    value = numeric(table, "value")[sel]

    depths = np.unique(depth[np.isfinite(depth)])
    trials = np.unique(trial[np.isfinite(trial)])
    if depths.size == 0 or trials.size == 0:
        raise SchemaError(f"{src}: sample rows lack L/trial indices")
    grid = np.full((trials.size, depths.size), np.nan)
    ti = np.searchsorted(trials, trial)
    di = np.searchsorted(depths, depth)
    grid[ti, di] = value

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for row in grid:
        ok = np.isfinite(row)
        if ok.any():
            ax.plot(depths[ok], row[ok], color="#999999", alpha=0.3, linewidth=0.6)
    median = np.nanmedian(grid, axis=0)
    ax.plot(depths, median, color="#b2182b", linewidth=2.0, marker="o",
            markersize=3.5, label="median")
    ax.set_xscale("log")
    finite = grid[np.isfinite(grid)]
    if logy and finite.size and np.all(finite > 0):
        ax.set_yscale("log")
    ax.set_xlabel("depth L")
    ax.set_ylabel(quantity.replace("_", " "))
    ax.legend(frameon=False)
    fig.tight_layout()
    return {
        "out": _save(fig, out, dpi),
        "depths": int(depths.size),
        "trials": int(trials.size),
    }


def _cell_edges(centers: np.ndarray) -> np.ndarray:
    """Midpoint edges for a (possibly uneven) sorted 1-d grid."""
    if centers.size == 1:
        half = 0.5 if centers[0] == 0 else 0.5 * abs(centers[0])
        return np.array([centers[0] - half, centers[0] + half])
    mids = 0.5 * (centers[:-1] + centers[1:])
    first = centers[0] - (mids[0] - centers[0])
    last = centers[-1] + (centers[-1] - mids[-1])
    return np.concatenate([[first], mids, [last]])


def render_heatmap(src, out, which: str = "output", dpi: int = 150) -> dict:
    table = load_table(src)
    stat = f"median_log10_{which}"
    require_columns(table, ("hurst", "beta", "statistic", "value", "overflow"))
    sel = matches(table, "statistic", stat)
    if not sel.any():
        raise SchemaError(f"{src}: no {stat!r} rows")
    hurst = numeric(table, "hurst")[sel]
    beta = numeric(table, "beta")[sel]
    value = numeric(table, "value")[sel]
    overflow = numeric(table, "overflow", 0.0)[sel]
    # overflowed cells carry an empty value cell: the median diverged
    value[(overflow > 0) & np.isnan(value)] = math.inf
    if np.isnan(value).any() or np.isnan(hurst).any() or np.isnan(beta).any():
        raise SchemaError(f"{src}: {stat!r} rows with missing hurst/beta/value")

    hs = np.unique(hurst)
    bs = np.unique(beta)
    grid = np.full((hs.size, bs.size), np.nan)
    grid[np.searchsorted(hs, hurst), np.searchsorted(bs, beta)] = value
    if np.isnan(grid).any():
        raise SchemaError(
            f"{src}: incomplete grid ({int(np.isnan(grid).sum())} missing cells)"
        )

    finite = grid[np.isfinite(grid)]
    limit = max(float(np.abs(finite).max()) if finite.size else 1.0, 1e-9)
    shown = np.clip(grid, -limit, limit)

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    mesh = ax.pcolormesh(
        _cell_edges(bs), _cell_edges(hs), shown, cmap=_DIVERGING,
        norm=TwoSlopeNorm(vcenter=0.0, vmin=-limit, vmax=limit),
    )
    fig.colorbar(mesh, ax=ax, label=f"median log10 {which} ratio")
    ax.set_xlabel("beta")
    ax.set_ylabel("Hurst index")
    fig.tight_layout()
    return {
        "out": _save(fig, out, dpi),
        "raster": (int(hs.size), int(bs.size)),
        "limit": limit,
    }


def render_paths(src, out, dpi: int = 150) -> dict:
    table = load_table(src)
    require_columns(table, ("statistic", "hurst", "t", "value"))
    sel = matches(table, "statistic", "path_value")
    if not sel.any():
        raise SchemaError(f"{src}: no 'path_value' rows")
    hurst = numeric(table, "hurst")[sel]
    t = numeric(table, "t")[sel]
    value = numeric(table, "value")[sel]

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    groups = np.unique(hurst[np.isfinite(hurst)])
    points = 0
    for H in groups:
        pick = hurst == H
        order = np.argsort(t[pick])
        ax.plot(t[pick][order], value[pick][order], linewidth=1.2,
                label=f"H={H:g}")
        points += int(pick.sum())
    ax.set_xlabel("t")
    ax.set_ylabel("cumulative weight")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return {
        "out": _save(fig, out, dpi),
        "paths": int(groups.size),
        "points": points,
    }
