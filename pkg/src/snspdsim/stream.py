"""In-memory time-tag stream container.

A tag is (channel, tick): 8-bit channel id plus an unsigned tick count of the
TDC clock. Streams are kept sorted by tick, ties broken by ascending channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np


class TimeTag(NamedTuple):
    channel: int
    tick: int


@dataclass
class TagStream:
    channels: np.ndarray  # uint8
    ticks: np.ndarray  # uint64
    tick_num: int = 15625  # tick duration in ps as a rational tick_num/tick_den
    tick_den: int = 1000
    channel_count: int = 64
    sync_channel: int = -1  # -1: no sync channel present

    def __post_init__(self):
        self.channels = np.ascontiguousarray(self.channels, dtype=np.uint8)
        self.ticks = np.ascontiguousarray(self.ticks, dtype=np.uint64)
        if self.channels.shape != self.ticks.shape:
            raise ValueError("channels and ticks must have equal length")
        if self.tick_num <= 0 or self.tick_den <= 0:
            raise ValueError("tick ratio must be positive")
        if self.channel_count < 1 or self.channel_count > 256:
            raise ValueError("channel_count must be in 1..256")

    @property
    def n(self) -> int:
        return int(self.ticks.size)

    def __len__(self) -> int:
        return self.n

    @property
    def tick_ps(self) -> float:
        return self.tick_num / self.tick_den

    def times_ps(self) -> np.ndarray:
        """Tick timestamps as float64 picoseconds."""
        return self.ticks.astype(np.float64) * self.tick_ps

    def is_sorted(self) -> bool:
        """Non-decreasing ticks, ties in ascending channel order."""
        if self.n < 2:
            return True
        t = self.ticks
        c = self.channels
        dt = np.diff(t.astype(np.int64))
        if np.any(dt < 0):
            return False
        ties = dt == 0
        return not np.any(ties & (np.diff(c.astype(np.int16)) < 0))

    def channel_ticks(self, channel: int) -> np.ndarray:
        return self.ticks[self.channels == channel]

    def iter_tags(self) -> Iterator[TimeTag]:
        for c, t in zip(self.channels, self.ticks):
            yield TimeTag(int(c), int(t))

    def equals(self, other: "TagStream") -> bool:
        return (
            self.n == other.n
            and (self.tick_num, self.tick_den) == (other.tick_num, other.tick_den)
            and self.channel_count == other.channel_count
            and self.sync_channel == other.sync_channel
            and bool(np.array_equal(self.channels, other.channels))
            and bool(np.array_equal(self.ticks, other.ticks))
        )


def empty_stream(channel_count: int = 64, sync_channel: int = -1,
                 tick_num: int = 15625, tick_den: int = 1000) -> TagStream:
    return TagStream(
        channels=np.empty(0, dtype=np.uint8),
        ticks=np.empty(0, dtype=np.uint64),
        tick_num=tick_num,
        tick_den=tick_den,
        channel_count=channel_count,
        sync_channel=sync_channel,
    )
