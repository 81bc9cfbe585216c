"""Shared fixtures and stream-building helpers."""

from __future__ import annotations

import numpy as np
import pytest

from snspdsim.stream import TagStream

PAIR_GEOMETRY = {
    "rows": 1,
    "cols": 2,
    "pitch_um": 30.0,
    "active_width_um": 27.8,
    "active_height_um": 27.5,
}


def build_stream(
    channels,
    ticks,
    channel_count: int = 64,
    sync_channel: int = -1,
    tick_num: int = 15625,
    tick_den: int = 1000,
    sort: bool = True,
) -> TagStream:
    """Fabricate a TagStream from plain sequences, sorted by (tick, channel)."""
    channels = np.asarray(channels, dtype=np.uint8)
    ticks = np.asarray(ticks, dtype=np.uint64)
    if sort:
        order = np.lexsort((channels, ticks))
        channels, ticks = channels[order], ticks[order]
    return TagStream(
        channels=channels,
        ticks=ticks,
        tick_num=tick_num,
        tick_den=tick_den,
        channel_count=channel_count,
        sync_channel=sync_channel,
    )


def random_sorted_stream(rng: np.random.Generator, n: int, channel_count: int = 64) -> TagStream:
    ticks = np.sort(rng.integers(0, 1 << 56, size=n, dtype=np.uint64))
    channels = rng.integers(0, channel_count, size=n).astype(np.uint8)
    return build_stream(channels, ticks, channel_count=channel_count)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    """Collect an acceptance verdict for the end-of-run summary block."""
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_cfg_dict():
    from snspdsim.scenario import default_scenario_dict

    return default_scenario_dict()


@pytest.fixture(scope="session")
def default_cfg():
    from snspdsim.scenario import default_scenario

    return default_scenario()
