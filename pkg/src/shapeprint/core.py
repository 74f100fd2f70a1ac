"""Packet, trace, histogram and windowing types shared by every module.

Traces are stored column-wise in numpy arrays; :class:`PacketRecord` is the
row view used when iterating or building small traces by hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional

import numpy as np

#: Largest inter-arrival bin; longer gaps are folded into it.
MAX_GAP_BIN = 108


class EmptyFeatureError(ValueError):
    """Raised when a timing feature needs more packets than the trace has."""


@dataclass(frozen=True)
class PacketRecord:
    timestamp: float
    size: int
    device_id: Optional[str] = None
    is_cover: bool = False
    is_attack: bool = False


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Trace:
    """Time-ordered packets. ``device_ids`` holds ``None`` once NAT erased them.

    ``is_cover``/``is_attack`` are simulator ground truth and must only be read
    when scoring results.
    """

    timestamps: np.ndarray
    sizes: np.ndarray
    device_ids: np.ndarray
    is_cover: np.ndarray
    is_attack: np.ndarray
    duration: float

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        sizes = np.asarray(self.sizes, dtype=np.int64)
        n = len(ts)
        dev = self.device_ids
        if dev is None or (np.ndim(dev) == 0):
            dev = np.full(n, dev, dtype=object)
        else:
            dev = np.asarray(dev, dtype=object)
        cover = np.zeros(n, bool) if self.is_cover is None else np.asarray(self.is_cover, dtype=bool)
        attack = np.zeros(n, bool) if self.is_attack is None else np.asarray(self.is_attack, dtype=bool)
        if not (len(sizes) == len(dev) == len(cover) == len(attack) == n):
            raise ValueError("trace columns have different lengths")
        if n:
            if ts[0] < 0:
                raise ValueError("timestamps must be non-negative")
            if np.any(np.diff(ts) < 0):
                raise ValueError("timestamps must be non-decreasing")
            if sizes.min() < 1:
                raise ValueError("packet sizes must be >= 1")
        duration = float(self.duration)
        if n and ts[-1] > duration + 1e-9:
            raise ValueError(f"timestamp {ts[-1]} exceeds duration {duration}")
        object.__setattr__(self, "timestamps", _readonly(ts))
        object.__setattr__(self, "sizes", _readonly(sizes))
        object.__setattr__(self, "device_ids", _readonly(dev))
        object.__setattr__(self, "is_cover", _readonly(cover))
        object.__setattr__(self, "is_attack", _readonly(attack))
        object.__setattr__(self, "duration", duration)

    @classmethod
    def empty(cls, duration: float = 0.0) -> "Trace":
        return cls(np.empty(0), np.empty(0, np.int64), np.empty(0, object), None, None, duration)

    @classmethod
    def from_records(cls, records: Iterable[PacketRecord], duration: Optional[float] = None) -> "Trace":
        records = list(records)
        ts = [r.timestamp for r in records]
        if duration is None:
            duration = max(ts) if ts else 0.0
        return cls(
            np.array(ts, dtype=np.float64),
            np.array([r.size for r in records], dtype=np.int64),
            np.array([r.device_id for r in records], dtype=object),
            np.array([r.is_cover for r in records], dtype=bool),
            np.array([r.is_attack for r in records], dtype=bool),
            duration,
        )

    @classmethod
    def from_arrays(cls, timestamps, sizes, device_id=None, duration=None, is_cover=None, is_attack=None) -> "Trace":
        """Build a trace from (possibly unsorted) arrays; sorts stably by time."""
        ts = np.asarray(timestamps, dtype=np.float64)
        order = np.argsort(ts, kind="stable")
        sizes = np.asarray(sizes, dtype=np.int64)[order]
        if device_id is None or isinstance(device_id, str):
            dev = np.full(len(ts), device_id, dtype=object)
        else:
            dev = np.asarray(device_id, dtype=object)[order]
        cover = None if is_cover is None else np.asarray(is_cover, bool)[order]
        attack = None if is_attack is None else np.asarray(is_attack, bool)[order]
        ts = ts[order]
        if duration is None:
            duration = float(ts[-1]) if len(ts) else 0.0
        return cls(ts, sizes, dev, cover, attack, duration)

    def __len__(self) -> int:
        return len(self.timestamps)

    def __iter__(self) -> Iterator[PacketRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i: int) -> PacketRecord:
        return PacketRecord(
            float(self.timestamps[i]),
            int(self.sizes[i]),
            self.device_ids[i],
            bool(self.is_cover[i]),
            bool(self.is_attack[i]),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.duration == other.duration
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.sizes, other.sizes)
            and list(self.device_ids) == list(other.device_ids)
            and np.array_equal(self.is_cover, other.is_cover)
            and np.array_equal(self.is_attack, other.is_attack)
        )

    __hash__ = None

    @property
    def rate(self) -> float:
        """Mean packets per second over the whole duration."""
        return len(self) / self.duration if self.duration > 0 else 0.0

    def take(self, index, duration: Optional[float] = None) -> "Trace":
        """Sub-trace of the packets selected by a boolean mask or sorted index."""
        return Trace(
            self.timestamps[index],
            self.sizes[index],
            self.device_ids[index],
            self.is_cover[index],
            self.is_attack[index],
            self.duration if duration is None else duration,
        )

    def between(self, start: float, end: float) -> "Trace":
        """Packets with ``start <= t < end`` (timestamps kept absolute)."""
        lo, hi = np.searchsorted(self.timestamps, [start, end], side="left")
        return self.take(slice(lo, hi))

    def for_device(self, device_id: str) -> "Trace":
        return self.take(self.device_ids == device_id)

    def devices(self) -> list:
        return sorted({d for d in self.device_ids if d is not None})

    def with_device_id(self, device_id: Optional[str]) -> "Trace":
        return Trace(
            self.timestamps, self.sizes, np.full(len(self), device_id, dtype=object),
            self.is_cover, self.is_attack, self.duration,
        )

    def shifted(self, offset: float) -> "Trace":
        """Same packets moved ``offset`` seconds later."""
        return Trace(
            self.timestamps + offset, self.sizes, self.device_ids,
            self.is_cover, self.is_attack, self.duration + offset,
        )


@dataclass(frozen=True, eq=False)
class SizeHistogram:
    """Sparse frequency vector: ``sizes`` strictly increasing, ``counts`` > 0.

    Keys need not be packet sizes; the inter-arrival feature reuses this type
    keyed by gap bin.
    """

    sizes: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=np.int64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if sizes.shape != counts.shape:
            raise ValueError("sizes and counts differ in length")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if len(sizes) > 1 and np.any(np.diff(sizes) <= 0):
            order = np.argsort(sizes, kind="stable")
            sizes, counts = sizes[order], counts[order]
            uniq, inv = np.unique(sizes, return_inverse=True)
            merged = np.zeros(len(uniq), np.int64)
            np.add.at(merged, inv, counts)
            sizes, counts = uniq, merged
        keep = counts > 0
        object.__setattr__(self, "sizes", _readonly(sizes[keep]))
        object.__setattr__(self, "counts", _readonly(counts[keep]))

    @classmethod
    def from_values(cls, values) -> "SizeHistogram":
        values = np.asarray(values, dtype=np.int64)
        if len(values) == 0:
            return cls(np.empty(0, np.int64), np.empty(0, np.int64))
        sizes, counts = np.unique(values, return_counts=True)
        return cls(sizes, counts)

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, int]) -> "SizeHistogram":
        items = sorted(mapping.items())
        return cls(np.array([k for k, _ in items], np.int64), np.array([v for _, v in items], np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __len__(self) -> int:
        return len(self.sizes)

    def __bool__(self) -> bool:
        return self.total > 0

    def __getitem__(self, size: int) -> int:
        i = np.searchsorted(self.sizes, size)
        if i < len(self.sizes) and self.sizes[i] == size:
            return int(self.counts[i])
        return 0

    def get(self, size: int, default: int = 0) -> int:
        return self[size] or default

    def __contains__(self, size) -> bool:
        return self[size] > 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, SizeHistogram):
            return NotImplemented
        return np.array_equal(self.sizes, other.sizes) and np.array_equal(self.counts, other.counts)

    __hash__ = None

    def __add__(self, other: "SizeHistogram") -> "SizeHistogram":
        return SizeHistogram(
            np.concatenate([self.sizes, other.sizes]),
            np.concatenate([self.counts, other.counts]),
        )

    def as_dict(self) -> dict:
        return {int(s): int(c) for s, c in zip(self.sizes, self.counts)}

    def items(self):
        return self.as_dict().items()

    def keys(self):
        return [int(s) for s in self.sizes]

    def normalized(self) -> dict:
        t = self.total
        if t == 0:
            return {}
        return {int(s): c / t for s, c in zip(self.sizes, self.counts)}

    def vector(self, index: np.ndarray) -> np.ndarray:
        """Dense float counts aligned to a sorted key ``index`` (absent keys -> 0)."""
        index = np.asarray(index)
        out = np.zeros(len(index), dtype=np.float64)
        pos = np.searchsorted(index, self.sizes)
        ok = pos < len(index)
        ok[ok] &= index[pos[ok]] == self.sizes[ok]
        out[pos[ok]] = self.counts[ok]
        return out

    def lookup(self, keys) -> np.ndarray:
        """Counts for arbitrary (unsorted, repeated) keys; absent keys -> 0."""
        keys = np.asarray(keys, dtype=np.int64)
        if len(self.sizes) == 0:
            return np.zeros(keys.shape, np.int64)
        top = int(self.sizes[-1])
        if top <= 1 << 16 and self.sizes[0] >= 0:
            # dense table: packet sizes are small integers
            table = np.zeros(top + 2, np.int64)
            table[self.sizes] = self.counts
            return table[np.clip(keys, -1, top + 1)]
        pos = np.minimum(np.searchsorted(self.sizes, keys), len(self.sizes) - 1)
        return np.where(self.sizes[pos] == keys, self.counts[pos], 0)

    def most_common(self) -> list:
        """``(size, count)`` pairs by descending count, ties by ascending size."""
        order = np.lexsort((self.sizes, -self.counts))
        return [(int(self.sizes[i]), int(self.counts[i])) for i in order]


@dataclass(frozen=True)
class JointHistogram:
    """Counts over (gap bin, size bin) cells; gap bin numbering starts at 1."""

    bins: Mapping[tuple, int]
    time_bin_width: float
    size_bin_width: int

    def __post_init__(self):
        if self.time_bin_width <= 0 or self.size_bin_width <= 0:
            raise ValueError("bin widths must be positive")

    @property
    def total(self) -> int:
        return int(sum(self.bins.values()))

    def table(self):
        """Dense contingency table plus its row (gap) and column (size) labels."""
        rows = sorted({i for i, _ in self.bins})
        cols = sorted({j for _, j in self.bins})
        ri = {r: k for k, r in enumerate(rows)}
        ci = {c: k for k, c in enumerate(cols)}
        t = np.zeros((len(rows), len(cols)), dtype=np.int64)
        for (i, j), c in self.bins.items():
            t[ri[i], ci[j]] = c
        return t, rows, cols

    def items(self):
        return self.bins.items()

    def keys(self):
        return self.bins.keys()

    def __getitem__(self, key):
        return self.bins.get(key, 0)


@dataclass(frozen=True)
class TimeWindow:
    start: float
    length: float
    packets: Trace = field(repr=False)

    @property
    def end(self) -> float:
        return self.start + self.length

    @property
    def is_empty(self) -> bool:
        return len(self.packets) == 0


def size_histogram(trace: Trace) -> SizeHistogram:
    return SizeHistogram.from_values(trace.sizes)


def _gap_bins(trace: Trace, width: float = 1.0, max_gap: float = MAX_GAP_BIN) -> np.ndarray:
    if len(trace) < 2:
        raise EmptyFeatureError("timing features need at least 2 packets")
    gaps = np.diff(trace.timestamps)
    last = max(1, math.ceil(max_gap / width - 1e-9))
    return np.clip(np.ceil(gaps / width - 1e-12), 1, last).astype(np.int64)


def interarrival_histogram(trace: Trace) -> SizeHistogram:
    """Gap counts keyed by bin 1..108; a gap ``g`` lands in ``ceil(g)``."""
    return SizeHistogram.from_values(_gap_bins(trace))


def joint_histogram(trace: Trace, time_bin_width: float = 1.0, size_bin_width: int = 1) -> JointHistogram:
    """Each packet after the first adds one count at (gap bin, size bin).

    Gap bin is ``ceil(gap / width)`` clamped to the bin holding 108 s; size bin
    is ``size // size_bin_width``.
    """
    if time_bin_width <= 0 or size_bin_width <= 0:
        raise ValueError("bin widths must be positive")
    gb = _gap_bins(trace, time_bin_width)
    sb = trace.sizes[1:] // size_bin_width
    keys, counts = np.unique(np.stack([gb, sb], axis=1), axis=0, return_counts=True)
    bins = {(int(i), int(j)): int(c) for (i, j), c in zip(keys, counts)}
    return JointHistogram(bins, float(time_bin_width), int(size_bin_width))


def split_windows(trace: Trace, window_length: float, offset: float = 0.0) -> list:
    """Cut ``trace`` into ``[offset + k*L, offset + (k+1)*L)`` windows.

    Packets before ``offset`` go to a partial leading window ``[0, offset)``.
    Empty windows are kept (``TimeWindow.is_empty``).
    """
    if window_length <= 0:
        raise ValueError("window_length must be positive")
    if not 0 <= offset < window_length:
        raise ValueError("offset must lie in [0, window_length)")
    ts = trace.timestamps
    n = max(0, math.ceil((trace.duration - offset) / window_length - 1e-9))
    if len(ts) and ts[-1] >= offset:
        n = max(n, int(math.floor((ts[-1] - offset) / window_length)) + 1)
    windows = []
    if offset > 0:
        hi = np.searchsorted(ts, offset, side="left")
        windows.append(TimeWindow(0.0, offset, trace.take(slice(0, hi))))
    starts = offset + window_length * np.arange(n + 1)
    bounds = np.searchsorted(ts, starts, side="left")
    for k in range(n):
        windows.append(TimeWindow(float(starts[k]), window_length, trace.take(slice(bounds[k], bounds[k + 1]))))
    return windows


def as_rng(seed_or_rng=None) -> np.random.Generator:
    """Accept an int seed, a key tuple, a Generator or None."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)
