"""Figure builders for the characterization analyses.

All figures are written as SVG with a fixed hash salt and no embedded
timestamp, so rerunning the same analysis on the same data reproduces the
file byte for byte.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import BiasSweepResult, CrosstalkResult, JitterResult
from .device import ArrayGeometry

_HASH_SALT = "snspdsim"


def _save(fig, out_path: str) -> str:
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out_path


def _new_fig(figsize=(7.0, 5.0)):
    plt.rcParams["svg.hashsalt"] = _HASH_SALT
    return plt.figure(figsize=figsize)


def plot_bias_sweep(result: BiasSweepResult, out_path: str) -> str:
    """Photon and dark count rates against bias current, log rate axis."""
    fig = _new_fig()
    ax = fig.add_subplot(111)
    bias = np.asarray(result.bias_ua)
    pcr = np.asarray(result.pcr_normalized) * result.plateau_cps
    dcr = np.asarray(result.dcr_cps)
    ax.semilogy(bias, np.maximum(pcr, 1e-3), "o-", color="tab:blue", label="photon counts")
    ax.semilogy(bias, np.maximum(dcr, 1e-3), "s--", color="tab:red", label="dark counts")
    ax.set_xlabel("bias current [uA]")
    ax.set_ylabel("count rate [cps]")
    ax.grid(True, linestyle="--", alpha=0.5)
    ax.legend()
    return _save(fig, out_path)


def plot_pixel_map(
    values: np.ndarray,
    geometry: ArrayGeometry,
    out_path: str,
    label: str = "SPDE",
    fmt: str = "{:.1f}",
    scale: float = 100.0,
) -> str:
    """Per-pixel map on the array grid with in-cell annotations.

    values is indexed by channel; scale converts to display units
    (default fraction -> percent).
    """
    grid = np.asarray(values, dtype=np.float64).reshape(geometry.rows, geometry.cols) * scale
    fig = _new_fig(figsize=(6.5, 5.5))
    ax = fig.add_subplot(111)
    im = ax.imshow(grid, origin="lower", cmap="viridis")
    fig.colorbar(im, ax=ax, label=label)
    if geometry.rows * geometry.cols <= 64:
        lo, hi = grid.min(), grid.max()
        for r in range(geometry.rows):
            for c in range(geometry.cols):
                v = grid[r, c]
                color = "black" if v > (lo + hi) / 2 else "white"
                ax.text(c, r, fmt.format(v), ha="center", va="center", fontsize=7, color=color)
    ax.set_xlabel("column")
    ax.set_ylabel("row")
    return _save(fig, out_path)


def plot_mcr_sweep(
    input_rates_cps: np.ndarray,
    measured_rates_cps: np.ndarray,
    mcr_cps: float,
    out_path: str,
    label: str = "array",
) -> str:
    """Measured against applied rate on log-log axes with the 3 dB point."""
    fig = _new_fig()
    ax = fig.add_subplot(111)
    x = np.asarray(input_rates_cps)
    y = np.asarray(measured_rates_cps)
    ax.loglog(x, y, "o-", color="tab:blue", label=f"{label} response")
    ax.loglog(x, x * (y[0] / x[0]), ":", color="gray", label="linear")
    ax.axhline(mcr_cps, color="tab:red", linestyle="--", label=f"3 dB at {mcr_cps/1e6:.1f} Mcps")
    ax.set_xlabel("applied photon rate [cps]")
    ax.set_ylabel("measured count rate [cps]")
    ax.grid(True, which="both", linestyle="--", alpha=0.4)
    ax.legend()
    return _save(fig, out_path)


def plot_jitter(result: JitterResult, out_path: str) -> str:
    """Timing histograms for the best and worst channels, peak-centered."""
    fig = _new_fig()
    ax = fig.add_subplot(111)
    for ch, color in ((result.min_channel, "tab:blue"), (result.max_channel, "tab:red")):
        h = result.histograms[ch]
        n = h.size
        t = (np.arange(n) - n // 2) * result.bin_width_ps
        keep = np.abs(t) <= 600.0
        ax.plot(
            t[keep],
            h[keep] / h.max(),
            drawstyle="steps-mid",
            color=color,
            label=f"ch {ch}: {result.fwhm_ps[ch]:.1f} ps FWHM",
        )
    ax.axhline(0.5, color="gray", linestyle=":", alpha=0.8)
    ax.set_xlabel("time from sync reference [ps]")
    ax.set_ylabel("normalized counts")
    ax.grid(True, linestyle="--", alpha=0.5)
    ax.legend()
    return _save(fig, out_path)


def plot_crosstalk(result: CrosstalkResult, out_path: str) -> str:
    """First-arrival histogram with the Poisson prediction and the count
    levels that 1% and 0.1% per-event crosstalk would add to the first bin."""
    fig = _new_fig()
    ax = fig.add_subplot(111)
    n = result.histogram.size
    t = (np.arange(n) + 0.5) * result.bin_width_ns
    ax.plot(t, result.histogram, drawstyle="steps-mid", color="tab:blue", label="measured")
    ax.plot(t, result.prediction, "--", color="black", label="Poisson model")
    base = result.prediction[0]
    for level, style in ((0.01, "-."), (0.001, ":")):
        ax.axhline(
            base + level * result.n_source_events,
            color="tab:red",
            linestyle=style,
            label=f"+{level:.1%} crosstalk",
        )
    ax.set_yscale("log")
    ax.set_xlabel("delay from source event [ns]")
    ax.set_ylabel("first-arrival counts per bin")
    ax.set_title(
        f"pair {result.pair}: excess {result.excess_fraction:.2e}, "
        f"95% bound {result.upper_bound_95:.2e}"
    )
    ax.grid(True, which="both", linestyle="--", alpha=0.4)
    ax.legend()
    return _save(fig, out_path)


def plot_interarrival(
    gaps_ps: np.ndarray,
    rate_cps: float,
    out_path: str,
    n_bins: int = 200,
) -> str:
    """Inter-arrival histogram against the exponential density, log counts."""
    fig = _new_fig()
    ax = fig.add_subplot(111)
    gaps_us = np.asarray(gaps_ps) / 1e6
    hi = np.quantile(gaps_us, 0.999)
    counts, edges = np.histogram(gaps_us, bins=n_bins, range=(0.0, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    model = gaps_us.size * width * (rate_cps / 1e6) * np.exp(-(rate_cps / 1e6) * centers)
    ax.semilogy(centers, np.maximum(counts, 0.5), drawstyle="steps-mid", color="tab:blue", label="measured")
    ax.semilogy(centers, np.maximum(model, 0.5), "--", color="black", label="exponential")
    ax.set_xlabel("inter-arrival time [us]")
    ax.set_ylabel("counts per bin")
    ax.grid(True, which="both", linestyle="--", alpha=0.4)
    ax.legend()
    return _save(fig, out_path)
