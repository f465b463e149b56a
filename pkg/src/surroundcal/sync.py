"""Timestamped multi-stream record store.

Timestamps are integer microseconds on a shared clock (producers are assumed
already synchronised).  Logs are immutable once built.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyStream, NonMonotonicTimestamps

SENSOR_KINDS = ("camera", "lidar", "radar", "gps_imu", "can")


def period_us(rate_hz: float) -> float:
    if rate_hz <= 0:
        raise ValueError(f"rate must be positive, got {rate_hz}")
    return 1e6 / rate_hz


def uniform_grid(start_us: int, end_us: int, rate_hz: float) -> np.ndarray:
    """``start + round(k * 1e6 / rate)`` for every k that stays within ``end``."""
    p = period_us(rate_hz)
    n = int(np.floor((end_us - start_us) / p + 1e-9)) + 1
    grid = start_us + np.round(np.arange(n) * p).astype(np.int64)
    return grid[grid <= end_us]


@dataclass(frozen=True)
class Record:
    timestamp_us: int
    payload: str


@dataclass(frozen=True, eq=False)
class StreamLog:
    """Records of one sensor stream, strictly increasing in time."""

    stream_id: str
    sensor_kind: str
    timestamps: np.ndarray
    payloads: Tuple[str, ...]

    def __post_init__(self):
        if self.sensor_kind not in SENSOR_KINDS:
            raise ValueError(f"unknown sensor kind {self.sensor_kind!r}")
        ts = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
        if len(ts) != len(self.payloads):
            raise ValueError("timestamps and payloads differ in length")
        if ts.size and ts.min() < 0:
            raise ValueError(f"stream {self.stream_id}: negative timestamp at index {int(np.argmax(ts < 0))}")
        bad = np.flatnonzero(np.diff(ts) <= 0)
        if bad.size:
            i = int(bad[0]) + 1
            raise NonMonotonicTimestamps(
                f"stream {self.stream_id}: timestamp {ts[i]} at index {i} does not follow {ts[i - 1]}", i
            )
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "payloads", tuple(self.payloads))

    def __len__(self):
        return len(self.timestamps)

    def __getitem__(self, i) -> Record:
        return Record(int(self.timestamps[i]), self.payloads[i])

    @property
    def span(self) -> Tuple[int, int]:
        if not len(self):
            raise EmptyStream(f"stream {self.stream_id} is empty")
        return int(self.timestamps[0]), int(self.timestamps[-1])


def ingest(stream_id: str, sensor_kind: str, records: Iterable[Tuple[int, str]]) -> StreamLog:
    """Build a validated log from ``(timestamp_us, payload)`` pairs in arrival order."""
    ts, payloads = [], []
    for t, p in records:
        if isinstance(t, float) and not float(t).is_integer():
            raise ValueError(f"timestamp {t} is not an integer number of microseconds")
        ts.append(int(t))
        payloads.append(str(p))
    return StreamLog(stream_id, sensor_kind, np.array(ts, dtype=np.int64), tuple(payloads))


def nearest_index(log: StreamLog, t: int) -> int:
    """Index of the record closest to ``t``; equidistant ties go to the earlier record."""
    n = len(log)
    if n == 0:
        raise EmptyStream(f"stream {log.stream_id} is empty")
    ts = log.timestamps
    i = int(np.searchsorted(ts, t, side="left"))
    if i == 0:
        return 0
    if i == n:
        return n - 1
    return i - 1 if t - ts[i - 1] <= ts[i] - t else i


def nearest(log: StreamLog, t: int) -> Tuple[Record, int]:
    """Closest record and its offset ``record.ts - t``."""
    i = nearest_index(log, int(t))
    rec = log[i]
    return rec, rec.timestamp_us - int(t)


def nearest_many(log: StreamLog, queries) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`nearest`: (indices, offsets) for an array of queries."""
    if len(log) == 0:
        raise EmptyStream(f"stream {log.stream_id} is empty")
    q = np.asarray(queries, dtype=np.int64)
    ts = log.timestamps
    i = np.searchsorted(ts, q, side="left")
    lo = np.clip(i - 1, 0, len(ts) - 1)
    hi = np.clip(i, 0, len(ts) - 1)
    pick_lo = (i > 0) & ((i == len(ts)) | (q - ts[lo] <= ts[hi] - q))
    idx = np.where(pick_lo, lo, hi)
    return idx, ts[idx] - q


@dataclass(frozen=True)
class Match:
    record: Record
    offset_us: int


@dataclass(frozen=True)
class AlignedBundle:
    query_us: int
    tolerance_us: Optional[int]
    matches: Dict[str, Optional[Match]] = field(default_factory=dict)

    def present(self) -> List[str]:
        return sorted(k for k, m in self.matches.items() if m is not None)

    def absent(self) -> List[str]:
        return sorted(k for k, m in self.matches.items() if m is None)


def align(streams: Sequence[StreamLog], t: int, tolerance_us: Optional[int] = None) -> AlignedBundle:
    """Nearest record per stream; anything farther than ``tolerance_us`` is marked absent.

    ``tolerance_us=None`` accepts every nearest record.  Empty streams are absent.
    """
    if tolerance_us is not None and tolerance_us < 0:
        raise ValueError("tolerance must be non-negative")
    t = int(t)
    out: Dict[str, Optional[Match]] = {}
    for log in streams:
        if log.stream_id in out:
            raise ValueError(f"duplicate stream id {log.stream_id!r}")
        if len(log) == 0:
            out[log.stream_id] = None
            continue
        rec, off = nearest(log, t)
        out[log.stream_id] = Match(rec, off) if tolerance_us is None or abs(off) <= tolerance_us else None
    return AlignedBundle(t, tolerance_us, dict(sorted(out.items())))


def resample_track(
    log: StreamLog,
    rate_hz: float,
    tolerance_us: Optional[int] = None,
    streams: Optional[Sequence[StreamLog]] = None,
) -> List[AlignedBundle]:
    """:func:`align` on a uniform grid spanning ``log``; aligns ``streams`` (default: ``log`` alone)."""
    start, end = log.span
    targets = [log] if streams is None else list(streams)
    return [align(targets, int(q), tolerance_us) for q in uniform_grid(start, end, rate_hz)]
