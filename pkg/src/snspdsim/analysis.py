"""Analysis toolkit: efficiency, dark counts, count-rate compression, timing
jitter, and inter-pixel crosstalk bounds, all measured from tag streams the
way a counting experiment would measure them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import exp, log
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import chi2

from .device import ArrayGeometry
from .errors import AnalysisError
from .stream import TagStream
from .tagio import stream_stats

PS_PER_S = 1.0e12


@dataclass(frozen=True)
class Recording:
    """A tag stream plus the wall duration it was acquired over."""

    stream: TagStream
    duration_s: float

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")


def detector_count(stream: TagStream) -> int:
    """Tags on detector channels (sync excluded)."""
    if stream.sync_channel < 0:
        return stream.n
    return int(np.count_nonzero(stream.channels != stream.sync_channel))


def total_rate_cps(rec: Recording) -> float:
    return detector_count(rec.stream) / rec.duration_s


# ---------------------------------------------------------------------------
# efficiency


def spde(count_rate_cps: float, dark_rate_cps: float, input_flux_cps: float) -> float:
    """System photon detection efficiency: (counts - darks) / input flux,
    clamped to [0, 1] with a warning when clamping was needed."""
    if input_flux_cps <= 0:
        raise ValueError("input_flux_cps must be positive")
    value = (count_rate_cps - dark_rate_cps) / input_flux_cps
    if value < 0 or value > 1:
        warnings.warn(
            f"SPDE {value:.4f} outside [0, 1]; clamping (check dark rate and flux)",
            stacklevel=2,
        )
        value = min(max(value, 0.0), 1.0)
    return float(value)


@dataclass(frozen=True)
class EfficiencyResult:
    per_pixel: np.ndarray  # (rows, cols) SPDE
    mean: float
    stddev: float
    polarization: str
    input_flux_cps: float

    def __post_init__(self):
        # keep the scalar summaries honest against the matrix
        assert abs(self.mean - float(np.mean(self.per_pixel))) < 1e-9
        assert abs(self.stddev - float(np.std(self.per_pixel))) < 1e-9


def spde_map(
    recordings: Mapping[int, Recording],
    dark: Recording,
    input_flux_cps: float,
    geometry: ArrayGeometry,
    polarization: str = "parallel",
) -> EfficiencyResult:
    """Per-pixel SPDE from one spot-scan recording per pixel position.

    Each recording has the focused spot centered on one pixel; the measured
    count rate is the total over the whole array, so light spilling onto
    neighbors still counts. The dark recording provides the array dark rate.
    """
    missing = sorted(set(range(geometry.n_pixels)) - set(recordings))
    if missing:
        raise AnalysisError(f"missing spot recordings for pixels {missing}")
    dark_rate = total_rate_cps(dark)
    out = np.empty((geometry.rows, geometry.cols))
    for ch, rec in sorted(recordings.items()):
        row, col = geometry.rowcol_of(ch)
        out[row, col] = spde(total_rate_cps(rec), dark_rate, input_flux_cps)
    return EfficiencyResult(
        per_pixel=out,
        mean=float(np.mean(out)),
        stddev=float(np.std(out)),
        polarization=polarization,
        input_flux_cps=input_flux_cps,
    )


def array_sde(
    rec: Recording, dark: Recording, input_flux_cps: float
) -> float:
    """Array system detection efficiency for an extended (defocused) beam:
    total array counts minus darks over the full input flux."""
    return spde(total_rate_cps(rec), total_rate_cps(dark), input_flux_cps)


# ---------------------------------------------------------------------------
# bias sweep


@dataclass(frozen=True)
class BiasPoint:
    bias_ua: float
    illuminated: Recording
    dark: Recording


@dataclass(frozen=True)
class BiasSweepResult:
    bias_ua: np.ndarray
    pcr_normalized: np.ndarray  # photon count rate / plateau
    dcr_cps: np.ndarray  # absolute aggregate dark rate
    plateau_cps: float


def bias_sweep(points: Sequence[BiasPoint]) -> BiasSweepResult:
    """Photon count rate (normalized to the plateau, the mean of the top-3
    bias points) and absolute dark count rate versus bias."""
    if len(points) < 2:
        raise AnalysisError("bias_sweep needs at least 2 bias points")
    pts = sorted(points, key=lambda p: p.bias_ua)
    bias = np.array([p.bias_ua for p in pts])
    dcr = np.array([total_rate_cps(p.dark) for p in pts])
    pcr = np.array([total_rate_cps(p.illuminated) for p in pts]) - dcr
    plateau = float(np.mean(pcr[-3:])) if len(pts) >= 3 else float(pcr[-1])
    if plateau <= 0:
        raise AnalysisError(
            "degenerate sweep: no photon counts above dark level at high bias"
        )
    return BiasSweepResult(bias, pcr / plateau, dcr, plateau)


# ---------------------------------------------------------------------------
# maximum count rate


def mcr_3db(points: Sequence[tuple[float, float]]) -> float:
    """Measured count rate at 3 dB compression.

    points are (input_rate, measured_rate) with strictly increasing input
    rates. Efficiency measured/input is normalized to the low-rate plateau
    (mean of the 3 lowest-input points); the 0.5 crossing is interpolated
    linearly in log(measured) vs log(normalized efficiency).
    """
    if len(points) < 4:
        raise AnalysisError("mcr_3db needs at least 4 sweep points")
    inp = np.array([p[0] for p in points], dtype=np.float64)
    meas = np.array([p[1] for p in points], dtype=np.float64)
    if np.any(np.diff(inp) <= 0):
        raise AnalysisError("input rates must be strictly increasing")
    if np.any(inp <= 0) or np.any(meas <= 0):
        raise AnalysisError("rates must be positive")
    eff = meas / inp
    plateau = float(np.mean(eff[:3]))
    norm = eff / plateau
    below = norm < 0.5
    crossing = np.flatnonzero(~below[:-1] & below[1:])
    if crossing.size == 0:
        raise AnalysisError("3-dB point not bracketed by the sweep")
    j = int(crossing[0])
    le0, le1 = log(norm[j]), log(norm[j + 1])
    lm0, lm1 = log(meas[j]), log(meas[j + 1])
    t = (log(0.5) - le0) / (le1 - le0)
    return exp(lm0 + t * (lm1 - lm0))


def nonparalyzable_rate(input_rate_cps: float, dead_time_s: float) -> float:
    """Closed-form kept rate R/(1 + R*tau) of a non-paralyzable detector."""
    return input_rate_cps / (1.0 + input_rate_cps * dead_time_s)


# ---------------------------------------------------------------------------
# timing jitter


def histogram_fwhm(counts: np.ndarray, bin_width: float) -> float:
    """FWHM of a peaked histogram by linear interpolation at half maximum.

    Bin k is centered at k * bin_width. A single-populated-bin histogram has
    FWHM of one bin width by the same interpolation rule.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0 or counts.max() <= 0:
        raise AnalysisError("empty histogram")
    counts = np.pad(counts, 1)  # guarantee below-half samples on both flanks
    peak = int(np.argmax(counts))
    half = counts[peak] / 2.0

    left = peak
    while left > 0 and counts[left - 1] >= half:
        left -= 1
    if left == 0 or counts[left - 1] >= half:
        raise AnalysisError("histogram does not fall below half maximum on the left")
    x_left = (left - 1) + (half - counts[left - 1]) / (counts[left] - counts[left - 1])

    right = peak
    while right < counts.size - 1 and counts[right + 1] >= half:
        right += 1
    if right == counts.size - 1 or counts[right + 1] >= half:
        raise AnalysisError("histogram does not fall below half maximum on the right")
    x_right = right + (counts[right] - half) / (counts[right] - counts[right + 1])

    return float((x_right - x_left) * bin_width)


@dataclass(frozen=True)
class JitterResult:
    fwhm_ps: dict[int, float]
    histograms: dict[int, np.ndarray]  # counts per TDC tick bin, peak-centered
    bin_width_ps: float
    skipped_tags: int  # detections with fewer than 8 preceding sync tags
    min_channel: int = field(default=-1)
    max_channel: int = field(default=-1)


def jitter_fwhm(
    stream: TagStream,
    rep_period_ps: float,
    sync_channel: int | None = None,
    n_reference_syncs: int = 8,
    min_counts: int = 16,
) -> JitterResult:
    """Per-channel timing jitter against a sync reference.

    The reference for each detection is the uniformly weighted mean of the
    preceding n_reference_syncs sync tags, extrapolated forward by whole
    periods: the histogram collects (tag - reference) mod rep_period at TDC
    tick binning. Detections with too few preceding syncs are skipped and
    counted. Histograms are rolled so the peak is centered before the FWHM
    interpolation; no smoothing is applied. Reported widths carry a grouping
    correction for the one-bin rectangle the histogram convolves in, floored
    at one bin width so a single-bin histogram reports one tick.
    """
    sync = stream.sync_channel if sync_channel is None else sync_channel
    if sync < 0:
        raise AnalysisError("stream has no sync channel")
    tick_ps = stream.tick_ps
    sync_t = stream.ticks[stream.channels == sync].astype(np.float64) * tick_ps
    if sync_t.size == 0:
        raise AnalysisError("no sync tags in stream")
    det_mask = stream.channels != sync
    det_t = stream.ticks[det_mask].astype(np.float64) * tick_ps
    det_ch = stream.channels[det_mask]

    # Rolling mean of the last n syncs, indexed by how many syncs precede t.
    # A cumulative sum of absolute times overflows float64 precision within a
    # fraction of a second (sums reach ~1e18 ps where the grid is hundreds of
    # ps wide), so express the window mean relative to its newest sync via
    # sync-to-sync differences: mean = s[e] - sum((n-k) * d[e-k], k=1..n-1) / n,
    # where every summed term is at most a few periods.
    n_prec = np.searchsorted(sync_t, det_t, side="left")
    ok = n_prec >= n_reference_syncs
    skipped = int(det_t.size - np.count_nonzero(ok))
    idx = n_prec[ok]
    if n_reference_syncs < 2:
        offsets = np.zeros(sync_t.size)
    elif sync_t.size >= n_reference_syncs:
        gaps = np.diff(sync_t)
        kernel = np.arange(float(n_reference_syncs - 1), 0.0, -1.0)
        offsets = np.convolve(gaps, kernel, mode="valid") / n_reference_syncs
    else:
        offsets = np.empty(0, dtype=np.float64)
    ref = sync_t[idx - 1] - offsets[idx - n_reference_syncs]
    delta = np.mod(det_t[ok] - ref, rep_period_ps)

    n_bins = int(np.ceil(rep_period_ps / tick_ps))
    bins = np.minimum((delta / tick_ps).astype(np.int64), n_bins - 1)
    chans = det_ch[ok]

    # Sheppard-style grouping correction: the tick-binned histogram samples
    # the timing density convolved with a one-bin rectangle, which inflates
    # FWHM^2 by (8 ln 2) * tick^2 / 12.  Floor at one bin width.
    group_var = 8.0 * np.log(2.0) * tick_ps * tick_ps / 12.0

    fwhm: dict[int, float] = {}
    hists: dict[int, np.ndarray] = {}
    for ch in np.unique(chans):
        h = np.bincount(bins[chans == ch], minlength=n_bins)
        if h.sum() < min_counts:
            continue
        h = np.roll(h, n_bins // 2 - int(np.argmax(h)))  # center the peak
        hists[int(ch)] = h
        raw = histogram_fwhm(h, tick_ps)
        fwhm[int(ch)] = float(np.sqrt(max(raw * raw - group_var, tick_ps * tick_ps)))
    if not fwhm:
        raise AnalysisError("no channel collected enough referenced detections")
    min_ch = min(fwhm, key=fwhm.get)
    max_ch = max(fwhm, key=fwhm.get)
    return JitterResult(fwhm, hists, tick_ps, skipped, min_ch, max_ch)


# ---------------------------------------------------------------------------
# crosstalk


def poisson_interarrival_prediction(
    rate_cps: float, bin_width_ns: float, n_bins: int, n_pairs: int
) -> np.ndarray:
    """Expected first-arrival histogram for a Poisson process of the given
    rate: bin k holds n_pairs * (exp(-lambda t_k) - exp(-lambda t_{k+1}))."""
    lam_per_ns = rate_cps * 1.0e-9
    edges = np.arange(n_bins + 1) * bin_width_ns
    surv = np.exp(-lam_per_ns * edges)
    return n_pairs * (surv[:-1] - surv[1:])


def poisson_upper_limit(n_obs: int, background: float, cl: float = 0.95) -> float:
    """One-sided Poisson upper limit on a signal over a known background:
    the mean mu with P(N <= n_obs | mu) = 1 - cl, minus the background,
    floored at zero."""
    mu_up = chi2.ppf(cl, 2 * (n_obs + 1)) / 2.0
    return float(max(0.0, mu_up - background))


@dataclass(frozen=True)
class CrosstalkResult:
    pair: tuple[int, int]
    bin_width_ns: float
    histogram: np.ndarray
    prediction: np.ndarray
    n_source_events: int
    excess_fraction: float
    upper_bound_95: float
    degenerate: bool = False


def crosstalk_bound(
    stream: TagStream,
    pair: tuple[int, int],
    duration_s: float,
    bin_width_ns: float = 10.0,
    window_us: float = 2.0,
    min_source_events: int = 10_000,
) -> CrosstalkResult:
    """First-arrival histogram from source to neighbor channel with a Poisson
    null prediction, the first-bin excess fraction, and its one-sided 95%
    upper limit, all normalized per source event.

    Source events within one window of the end of the recording are excluded
    so every used event has a full observation window.
    """
    src, dst = pair
    tick_ps = stream.tick_ps
    t_src = stream.ticks[stream.channels == src].astype(np.float64) * tick_ps
    t_dst = stream.ticks[stream.channels == dst].astype(np.float64) * tick_ps

    window_ps = window_us * 1.0e6
    end_ps = duration_s * PS_PER_S
    t_src = t_src[t_src <= end_ps - window_ps]
    n_src = int(t_src.size)
    if n_src < min_source_events:
        raise AnalysisError(
            f"crosstalk bound needs >= {min_source_events} source events inside the "
            f"observation window, got {n_src}"
        )

    n_bins = int(round(window_us * 1.0e3 / bin_width_ns))
    if t_dst.size == 0:
        zeros = np.zeros(n_bins)
        return CrosstalkResult(
            pair=(src, dst),
            bin_width_ns=bin_width_ns,
            histogram=zeros,
            prediction=zeros.copy(),
            n_source_events=n_src,
            excess_fraction=float("nan"),
            upper_bound_95=float("nan"),
            degenerate=True,
        )

    nxt = np.searchsorted(t_dst, t_src, side="right")
    has_next = nxt < t_dst.size
    delays_ns = (t_dst[np.minimum(nxt, t_dst.size - 1)] - t_src) * 1.0e-3
    delays_ns = delays_ns[has_next]
    hist, _ = np.histogram(delays_ns, bins=n_bins, range=(0.0, window_us * 1.0e3))

    rate_dst = t_dst.size / duration_s
    pred = poisson_interarrival_prediction(rate_dst, bin_width_ns, n_bins, n_src)
    excess = (hist[0] - pred[0]) / n_src
    ub = poisson_upper_limit(int(hist[0]), float(pred[0])) / n_src
    return CrosstalkResult(
        pair=(src, dst),
        bin_width_ns=bin_width_ns,
        histogram=hist.astype(np.float64),
        prediction=pred,
        n_source_events=n_src,
        excess_fraction=float(excess),
        upper_bound_95=float(ub),
    )


def crosstalk_neighbor_total(
    stream: TagStream,
    source_channel: int,
    geometry: ArrayGeometry,
    duration_s: float,
    topology: str = "4-neighbor",
    **kwargs,
) -> float:
    """Total crosstalk probability from one pixel: sum of the first-bin excess
    fractions over its topology neighbors (the per-event spawn probability is
    split uniformly among neighbors, so the pairwise excess alone
    underestimates it)."""
    return float(
        sum(
            crosstalk_bound(stream, (source_channel, v), duration_s, **kwargs).excess_fraction
            for v in geometry.neighbors(source_channel, topology)
        )
    )


# ---------------------------------------------------------------------------
# imaging


def heatmap(stream: TagStream, geometry: ArrayGeometry, normalize: bool = False) -> np.ndarray:
    """Per-pixel tag totals arranged (rows, cols); optionally scaled to a
    maximum of 1. Totals match stream_stats counts exactly."""
    counts = stream_stats(stream).counts[: geometry.n_pixels].astype(np.float64)
    grid = counts.reshape(geometry.rows, geometry.cols)
    if normalize and grid.max() > 0:
        grid = grid / grid.max()
    return grid
