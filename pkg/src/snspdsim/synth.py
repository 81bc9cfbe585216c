"""Time-tag stream synthesis: arrival generation, dead time, crosstalk, TDC.

Event times are float64 picoseconds until digitize() quantizes them to TDC
ticks. Randomness is counter-based (Philox) keyed by (seed, channel, stage),
so per-channel generation is bitwise deterministic regardless of worker count
or evaluation order.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import sqrt
from typing import TYPE_CHECKING, Mapping

import numpy as np
from scipy.special import ndtr, ndtri

from . import _kernels
from .device import FWHM_SIGMA, ArrayGeometry, expected_rate_maps
from .errors import RateCapError
from .stream import TagStream

if TYPE_CHECKING:  # pragma: no cover
    from .scenario import Scenario

PS_PER_S = 1.0e12

# RNG stage ids (Philox key lane): one stream per (seed, channel, stage)
STAGE_ARRIVAL = 0
STAGE_DARK = 1
STAGE_CROSSTALK = 2
STAGE_JITTER = 3
STAGE_DEVICE_SPREAD = 9


@dataclass(frozen=True)
class TdcModel:
    """Time-to-digital converter: tick quantization, electrical jitter, and a
    hard tag-rate budget over a sliding window."""

    tick_num: int = 15625  # tick duration in ps, as tick_num/tick_den
    tick_den: int = 1000
    rms_jitter_ps: float = 20.0
    max_tag_rate_cps: float = 900.0e6
    drop_policy: str = "drop_newest"
    window_ms: float = 1.0

    def __post_init__(self):
        if self.tick_num <= 0 or self.tick_den <= 0:
            raise ValueError("tick ratio must be positive")
        if self.rms_jitter_ps < 0:
            raise ValueError("rms_jitter_ps must be >= 0")
        if self.max_tag_rate_cps <= 0 or self.window_ms <= 0:
            raise ValueError("max_tag_rate_cps and window_ms must be positive")
        if self.drop_policy not in ("drop_newest", "error"):
            raise ValueError(f"unknown drop_policy {self.drop_policy!r}")

    @property
    def tick_ps(self) -> float:
        return self.tick_num / self.tick_den


@dataclass(frozen=True)
class CrosstalkModel:
    """Per-detection probability of inducing one event on a random adjacent
    pixel after a normally distributed delay (truncated at zero)."""

    probability: float = 0.0
    delay_mean_ns: float = 2.0
    delay_sigma_ns: float = 1.0
    topology: str = "4-neighbor"

    def __post_init__(self):
        if not (0 <= self.probability <= 1):
            raise ValueError("probability must be in [0, 1]")
        if self.delay_sigma_ns < 0:
            raise ValueError("delay_sigma_ns must be >= 0")
        if self.topology not in ("4-neighbor", "8-neighbor"):
            raise ValueError(f"unknown topology {self.topology!r}")


@dataclass(frozen=True)
class SourceModel:
    """Illumination timing: continuous-wave, or pulsed with a sync output."""

    kind: str = "cw"
    rep_rate_mhz: float = 20.0
    pulse_width_ps: float = 0.4
    sync_channel: int = 64

    def __post_init__(self):
        if self.kind not in ("cw", "pulsed"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.kind == "pulsed":
            if self.rep_rate_mhz <= 0:
                raise ValueError("rep_rate_mhz must be positive")
            if self.sync_channel < 0:
                raise ValueError("pulsed source needs a sync_channel >= 0")

    @property
    def rep_period_ps(self) -> float:
        return 1.0e6 / self.rep_rate_mhz


def keyed_rng(seed: int, channel: int, stage: int) -> np.random.Generator:
    """Counter-based generator for one (seed, channel, stage) lane."""
    key = np.array(
        [seed & 0xFFFFFFFFFFFFFFFF, ((stage & 0xFFFFFFFF) << 32) | (channel & 0xFFFFFFFF)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def poisson_times_ps(
    rate_cps: float, duration_s: float, rng: np.random.Generator, t0_ps: float = 0.0
) -> np.ndarray:
    """Homogeneous Poisson arrival times on (t0, t0 + duration], float64 ps."""
    if rate_cps < 0:
        raise ValueError("rate_cps must be >= 0")
    if rate_cps == 0 or duration_s <= 0:
        return np.empty(0, dtype=np.float64)
    end_ps = t0_ps + duration_s * PS_PER_S
    scale_ps = PS_PER_S / rate_cps
    expect = rate_cps * duration_s
    block = max(1024, int(expect + 6 * sqrt(expect) + 16))
    chunks = []
    t = t0_ps
    while True:
        gaps = rng.exponential(scale_ps, block)
        times = t + np.cumsum(gaps)
        if times[-1] > end_ps:
            chunks.append(times[times <= end_ps])
            break
        chunks.append(times)
        t = times[-1]
        block = max(1024, int(0.25 * block))
    return np.concatenate(chunks) if len(chunks) > 1 else chunks[0]


def _pulsed_detection_times(
    prob: float, n_pulses: int, period_ps: float, rng: np.random.Generator
) -> np.ndarray:
    """Times of Bernoulli-thinned pulse detections via geometric gap sampling."""
    if prob <= 0 or n_pulses == 0:
        return np.empty(0, dtype=np.float64)
    expect = n_pulses * prob
    block = max(256, int(expect + 6 * sqrt(expect) + 16))
    idx_chunks = []
    last = -1  # pulse index of the previous detection
    while True:
        gaps = rng.geometric(prob, block)
        idx = last + np.cumsum(gaps)
        if idx[-1] >= n_pulses:
            idx_chunks.append(idx[idx < n_pulses])
            break
        idx_chunks.append(idx)
        last = int(idx[-1])
        block = max(256, int(0.25 * block))
    indices = np.concatenate(idx_chunks) if len(idx_chunks) > 1 else idx_chunks[0]
    return indices.astype(np.float64) * period_ps


def generate_arrivals(
    scenario: "Scenario", duration_s: float, seed: int, jobs: int = 1
) -> dict[int, np.ndarray]:
    """Per-channel arrival times (ps) before dead time, darks included.

    CW: one Poisson process per pixel at the expected detected rate. Pulsed:
    per-pulse Bernoulli detections with probability photon_rate/rep_rate plus
    Poissonian darks, and the sync channel carrying every pulse epoch.
    Bitwise deterministic for a given (scenario, seed), whatever `jobs` is.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    photon, dark = expected_rate_maps(
        scenario.geometry, scenario.pixels, scenario.optics, scenario.beam, scenario.bias_ua
    )
    source = scenario.source

    if source.kind == "pulsed":
        period_ps = source.rep_period_ps
        n_pulses = int(duration_s * PS_PER_S // period_ps)
        probs = photon / (source.rep_rate_mhz * 1.0e6)
        if np.any(probs > 1.0):
            worst = int(np.argmax(probs))
            raise ValueError(
                f"per-pulse detection probability {probs[worst]:.3f} > 1 on channel "
                f"{worst}: photon rate exceeds the pulse rate"
            )
        if np.any(probs > 0.1):
            warnings.warn(
                "per-pulse detection probability above 0.1; multi-photon pulses are "
                "not modeled and the Bernoulli approximation degrades",
                stacklevel=2,
            )

    def one_pixel(ch: int) -> np.ndarray:
        if source.kind == "cw":
            rng = keyed_rng(seed, ch, STAGE_ARRIVAL)
            return poisson_times_ps(photon[ch] + dark[ch], duration_s, rng)
        hits = _pulsed_detection_times(
            float(probs[ch]), n_pulses, period_ps, keyed_rng(seed, ch, STAGE_ARRIVAL)
        )
        darks = poisson_times_ps(dark[ch], duration_s, keyed_rng(seed, ch, STAGE_DARK))
        if darks.size == 0:
            return hits
        merged = np.concatenate([hits, darks])
        merged.sort(kind="stable")
        return merged

    n_px = scenario.geometry.n_pixels
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one_pixel, range(n_px)))
        events = {ch: results[ch] for ch in range(n_px)}
    else:
        events = {ch: one_pixel(ch) for ch in range(n_px)}

    if source.kind == "pulsed":
        events[source.sync_channel] = np.arange(n_pulses, dtype=np.float64) * period_ps
    return events


def apply_dead_time(
    times_ps: np.ndarray, dead_time_ps: float, last_kept_ps: float = -np.inf
) -> np.ndarray:
    """Non-paralyzable dead-time filter for one channel's sorted arrival times.

    An event is kept iff it arrives >= dead_time_ps after the last kept event.
    Pass the final kept time of the previous chunk as last_kept_ps to filter a
    long stream in pieces.
    """
    times_ps = np.asarray(times_ps, dtype=np.float64)
    if dead_time_ps < 0:
        raise ValueError("dead_time_ps must be >= 0")
    if times_ps.size == 0:
        return times_ps
    if np.any(np.diff(times_ps) < 0):
        raise ValueError("apply_dead_time requires time-sorted input")
    if dead_time_ps == 0:
        return times_ps
    keep = _kernels.dead_time_keep_mask(times_ps, float(dead_time_ps), float(last_kept_ps))
    return times_ps[keep]


def truncated_normal_delays(
    mean_ps: float, sigma_ps: float, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Normal(mean, sigma) truncated to [0, inf) via inverse-CDF sampling."""
    if n == 0:
        return np.empty(0, dtype=np.float64)
    if sigma_ps == 0:
        return np.full(n, max(mean_ps, 0.0))
    lo = ndtr(-mean_ps / sigma_ps)
    u = lo + rng.random(n) * (1.0 - lo)
    return mean_ps + sigma_ps * ndtri(u)


def inject_crosstalk(
    events: Mapping[int, np.ndarray],
    model: CrosstalkModel,
    geometry: ArrayGeometry,
    dead_time_ps: Mapping[int, float],
    seed: int,
) -> dict[int, np.ndarray]:
    """Spawn induced events on neighboring pixels and re-enforce dead time.

    Each kept detection independently spawns, with model.probability, one
    event on a uniformly chosen topology neighbor at a truncated-normal delay.
    Induced events then pass through the victim pixel's non-paralyzable
    dead-time filter together with the victim's own events. Sync and other
    non-pixel channels neither spawn nor receive crosstalk.
    """
    out = {ch: np.asarray(t, dtype=np.float64) for ch, t in events.items()}
    if model.probability == 0:
        return out

    mean_ps = model.delay_mean_ns * 1.0e3
    sigma_ps = model.delay_sigma_ns * 1.0e3
    induced: dict[int, list[np.ndarray]] = {}
    for ch in sorted(events):
        if ch >= geometry.n_pixels:
            continue
        src = out[ch]
        if src.size == 0:
            continue
        rng = keyed_rng(seed, ch, STAGE_CROSSTALK)
        spawn = rng.random(src.size) < model.probability
        k = int(np.count_nonzero(spawn))
        if k == 0:
            continue
        nbrs = geometry.neighbors(ch, model.topology)
        victim_idx = rng.integers(0, len(nbrs), size=k)
        delays = truncated_normal_delays(mean_ps, sigma_ps, k, rng)
        times = src[spawn] + delays
        nbrs_arr = np.asarray(nbrs)
        for v in np.unique(victim_idx):
            vch = int(nbrs_arr[v])
            induced.setdefault(vch, []).append(times[victim_idx == v])

    for vch, chunks in induced.items():
        own = out.get(vch, np.empty(0, dtype=np.float64))
        merged = np.concatenate([own, *chunks])
        merged.sort(kind="stable")
        out[vch] = apply_dead_time(merged, float(dead_time_ps.get(vch, 0.0)))
    return out


def digitize(
    events: Mapping[int, np.ndarray],
    tdc: TdcModel,
    det_sigma_ps: Mapping[int, float],
    seed: int,
    channel_count: int,
    sync_channel: int = -1,
) -> tuple[TagStream, int]:
    """Jitter, quantize, merge and rate-limit events into a TagStream.

    Per event: add Gaussian noise with sigma = sqrt(detector^2 + TDC^2) for
    the event's channel, floor the result to ticks, sort by (tick, channel),
    then enforce the tag-rate budget over the sliding window. Returns the
    stream and the exact number of dropped tags (drop_newest policy); the
    'error' policy raises RateCapError at the first violation.
    """
    tick_ps = tdc.tick_ps
    chunks_t = []
    chunks_c = []
    for ch in sorted(events):
        t = np.asarray(events[ch], dtype=np.float64)
        if t.size == 0:
            continue
        sigma = sqrt(float(det_sigma_ps.get(ch, 0.0)) ** 2 + tdc.rms_jitter_ps**2)
        if sigma > 0:
            t = t + keyed_rng(seed, ch, STAGE_JITTER).normal(0.0, sigma, t.size)
        ticks = np.floor(t / tick_ps).astype(np.int64)
        np.clip(ticks, 0, None, out=ticks)  # jitter can push early events below t=0
        chunks_t.append(ticks)
        chunks_c.append(np.full(ticks.size, ch, dtype=np.uint8))

    if not chunks_t:
        from .stream import empty_stream

        return (
            empty_stream(channel_count, sync_channel, tdc.tick_num, tdc.tick_den),
            0,
        )

    ticks = np.concatenate(chunks_t)
    chans = np.concatenate(chunks_c)
    order = np.lexsort((chans, ticks))
    ticks = ticks[order]
    chans = chans[order]

    budget = int(tdc.max_tag_rate_cps * tdc.window_ms * 1.0e-3)
    window_ticks = int(round(tdc.window_ms * 1.0e9 / tick_ps))
    dropped = 0
    if ticks.size > budget:
        # fast path: if every (budget+1)-tag span covers a full window, no drops
        spans = ticks[budget:] - ticks[:-budget]
        if np.any(spans < window_ticks):
            keep = _kernels.rate_cap_keep_mask(ticks, budget, window_ticks)
            if not keep.all():
                first = int(np.argmin(keep))
                if tdc.drop_policy == "error":
                    raise RateCapError((ticks[first] - window_ticks) * tick_ps)
                dropped = int(ticks.size - np.count_nonzero(keep))
                ticks = ticks[keep]
                chans = chans[keep]

    stream = TagStream(
        channels=chans,
        ticks=ticks.astype(np.uint64),
        tick_num=tdc.tick_num,
        tick_den=tdc.tick_den,
        channel_count=channel_count,
        sync_channel=sync_channel,
    )
    return stream, dropped


def merge_streams(
    per_channel_ticks: Mapping[int, np.ndarray],
    channel_count: int,
    sync_channel: int = -1,
    tick_num: int = 15625,
    tick_den: int = 1000,
) -> TagStream:
    """K-way merge of per-channel sorted tick sequences into one TagStream,
    globally sorted by tick with ties broken by ascending channel."""
    chunks_t = []
    chunks_c = []
    for ch in sorted(per_channel_ticks):
        t = np.asarray(per_channel_ticks[ch], dtype=np.uint64)
        if t.size == 0:
            continue
        if np.any(np.diff(t.astype(np.int64)) < 0):
            raise ValueError(f"channel {ch} ticks are not sorted")
        chunks_t.append(t)
        chunks_c.append(np.full(t.size, ch, dtype=np.uint8))
    if not chunks_t:
        from .stream import empty_stream

        return empty_stream(channel_count, sync_channel, tick_num, tick_den)
    ticks = np.concatenate(chunks_t)
    chans = np.concatenate(chunks_c)
    order = np.lexsort((chans, ticks))
    return TagStream(
        channels=chans[order],
        ticks=ticks[order],
        tick_num=tick_num,
        tick_den=tick_den,
        channel_count=channel_count,
        sync_channel=sync_channel,
    )
