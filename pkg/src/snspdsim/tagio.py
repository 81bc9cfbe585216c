"""Binary tag file format and streaming reader.

Layout (little-endian throughout):
  header, 30 bytes packed:
    magic        8s   b"SNSPDTAG"
    version      u16  format version (currently 1)
    tick_num     u32  tick duration numerator, ps
    tick_den     u32  tick duration denominator
    channel_count u16
    sync_channel i16  -1 if none
    record_count u64
  records, 8 bytes each: bits 0..7 channel, bits 8..63 tick count.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import TagFormatError
from .stream import TagStream, empty_stream

MAGIC = b"SNSPDTAG"
VERSION = 1
_HEADER = struct.Struct("<8sHIIHhQ")
HEADER_SIZE = _HEADER.size  # 30
RECORD_SIZE = 8
MAX_TICK = (1 << 56) - 1


@dataclass(frozen=True)
class TagFileHeader:
    version: int
    tick_num: int
    tick_den: int
    channel_count: int
    sync_channel: int
    record_count: int


def _pack_header(stream: TagStream, record_count: int) -> bytes:
    return _HEADER.pack(
        MAGIC,
        VERSION,
        stream.tick_num,
        stream.tick_den,
        stream.channel_count,
        stream.sync_channel,
        record_count,
    )


def write_tags(stream: TagStream, path: str | Path, chunk_records: int = 1 << 22) -> int:
    """Write a sorted stream to disk; returns the number of records written."""
    if not stream.is_sorted():
        raise ValueError("write_tags requires a stream sorted by (tick, channel)")
    if stream.n and int(stream.ticks.max()) > MAX_TICK:
        raise ValueError("tick count exceeds the 56-bit record field")
    with open(path, "wb") as f:
        f.write(_pack_header(stream, stream.n))
        for lo in range(0, stream.n, chunk_records):
            hi = min(lo + chunk_records, stream.n)
            rec = (stream.ticks[lo:hi] << np.uint64(8)) | stream.channels[lo:hi].astype(
                np.uint64
            )
            f.write(rec.astype("<u8").tobytes())
    return stream.n


def read_header(path: str | Path) -> TagFileHeader:
    with open(path, "rb") as f:
        raw = f.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise TagFormatError(f"{path}: file ends at byte {len(raw)} inside the header")
    magic, version, num, den, nch, sync, count = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise TagFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise TagFormatError(f"{path}: unsupported format version {version}")
    return TagFileHeader(version, num, den, nch, sync, count)


def read_tags(path: str | Path, chunk_records: int = 1 << 20) -> Iterator[TagStream]:
    """Stream the file back as TagStream chunks of at most chunk_records tags.

    Memory use is bounded by the chunk size. Raises TagFormatError on a bad
    magic/version or a payload that does not match record_count, naming the
    byte offset where the file went wrong.
    """
    header = read_header(path)
    size = Path(path).stat().st_size
    payload = size - HEADER_SIZE
    if payload % RECORD_SIZE != 0:
        raise TagFormatError(
            f"{path}: truncated record at byte offset "
            f"{HEADER_SIZE + (payload // RECORD_SIZE) * RECORD_SIZE}"
        )
    found = payload // RECORD_SIZE
    if found != header.record_count:
        raise TagFormatError(
            f"{path}: header promises {header.record_count} records but the file "
            f"holds {found} (payload ends at byte offset {size})"
        )
    with open(path, "rb") as f:
        f.seek(HEADER_SIZE)
        remaining = header.record_count
        while remaining > 0:
            n = min(chunk_records, remaining)
            raw = np.fromfile(f, dtype="<u8", count=n)
            if raw.size != n:  # size changed underneath us
                raise TagFormatError(
                    f"{path}: short read at byte offset "
                    f"{HEADER_SIZE + (header.record_count - remaining) * RECORD_SIZE}"
                )
            yield TagStream(
                channels=(raw & np.uint64(0xFF)).astype(np.uint8),
                ticks=raw >> np.uint64(8),
                tick_num=header.tick_num,
                tick_den=header.tick_den,
                channel_count=header.channel_count,
                sync_channel=header.sync_channel,
            )
            remaining -= n


def load_tags(path: str | Path) -> TagStream:
    """Read a whole file into one TagStream."""
    header = read_header(path)
    chunks = list(read_tags(path, chunk_records=1 << 24))
    if not chunks:
        return empty_stream(
            header.channel_count, header.sync_channel, header.tick_num, header.tick_den
        )
    if len(chunks) == 1:
        return chunks[0]
    return TagStream(
        channels=np.concatenate([c.channels for c in chunks]),
        ticks=np.concatenate([c.ticks for c in chunks]),
        tick_num=header.tick_num,
        tick_den=header.tick_den,
        channel_count=header.channel_count,
        sync_channel=header.sync_channel,
    )


@dataclass(frozen=True)
class StreamStats:
    """Per-channel tallies. Channels with no tags have zeroed entries."""

    counts: np.ndarray  # (channel_count,) int64
    first_tick: np.ndarray  # (channel_count,) int64, 0 when empty
    last_tick: np.ndarray
    mean_rate_cps: np.ndarray  # count / (last - first), 0 when the span is zero
    total: int


def stream_stats(stream: TagStream) -> StreamStats:
    c = stream.channel_count
    counts = np.bincount(stream.channels, minlength=c).astype(np.int64)
    first = np.zeros(c, dtype=np.int64)
    last = np.zeros(c, dtype=np.int64)
    if stream.n:
        t = stream.ticks.astype(np.int64)
        big = np.iinfo(np.int64).max
        fmin = np.full(c, big)
        np.minimum.at(fmin, stream.channels, t)
        np.maximum.at(last, stream.channels, t)
        first = np.where(counts > 0, fmin, 0)
        last = np.where(counts > 0, last, 0)
    span_ps = (last - first).astype(np.float64) * stream.tick_ps
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.where(span_ps > 0, counts / (span_ps * 1.0e-12), 0.0)
    return StreamStats(counts, first, last, rate, int(stream.n))


def export_csv(stream: TagStream, path: str | Path, chunk_records: int = 1 << 20) -> None:
    """Dump the stream as 'channel,tick' rows with a header line."""
    with open(path, "w") as f:
        f.write("channel,tick\n")
        for lo in range(0, stream.n, chunk_records):
            hi = min(lo + chunk_records, stream.n)
            block = np.column_stack(
                [stream.channels[lo:hi].astype(np.uint64), stream.ticks[lo:hi]]
            )
            f.writelines(f"{ch},{tk}\n" for ch, tk in block)
