"""Numba kernels for the two inherently sequential passes.

Both loops carry state from tag to tag (last kept time, ring of recent kept
tags), so they cannot be vectorized exactly; numba keeps them at C speed.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def dead_time_keep_mask(times, dead_time, last_kept):
    """Non-paralyzable dead time: keep an event iff it arrives at least
    dead_time after the last *kept* event. last_kept carries state across
    chunks (use -inf for a fresh stream). Units must match times."""
    keep = np.empty(times.size, dtype=np.bool_)
    last = last_kept
    for i in range(times.size):
        if times[i] - last >= dead_time:
            keep[i] = True
            last = times[i]
        else:
            keep[i] = False
    return keep


@numba.njit(cache=True)
def rate_cap_keep_mask(ticks, budget, window_ticks):
    """Sliding-window tag-rate cap: keep a tag iff fewer than `budget` tags
    were kept in the half-open window (t - window_ticks, t]. Dropped tags do
    not occupy the window (drop-newest semantics)."""
    n = ticks.size
    keep = np.ones(n, dtype=np.bool_)
    ring = np.empty(budget, dtype=np.int64)
    kept = 0
    for i in range(n):
        t = ticks[i]
        if kept >= budget and t - ring[(kept - budget) % budget] < window_ticks:
            keep[i] = False
        else:
            ring[kept % budget] = t
            kept += 1
    return keep
