"""Device identification from packet-size distributions.

Used directly by a local adversary on per-device (MAC-filtered) traces and,
unchanged, by an external adversary when one device dominates the aggregate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .core import (
    SizeHistogram,
    Trace,
    interarrival_histogram,
    joint_histogram,
    size_histogram,
)
from .metrics import cosine_distance


class EmptyProfileError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceProfile:
    """Learned model of one device.

    ``duration`` is the length of the learning trace; ``common_sizes`` lists
    every observed size by descending count (FSBC keeps a top fraction).
    """

    device_id: str
    histogram: SizeHistogram
    mean_rate: float
    duration: float
    top_unique_size: Optional[int] = None
    common_sizes: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.histogram.total <= 0:
            raise EmptyProfileError(f"profile {self.device_id!r} has no packets")
        if self.mean_rate < 0:
            raise ValueError("mean_rate must be >= 0")
        if not self.common_sizes:
            object.__setattr__(self, "common_sizes", tuple(self.histogram.most_common()))

    def top_common(self, f1: float) -> list:
        """The ``ceil(f1% * distinct sizes)`` most frequent ``(size, count)`` pairs."""
        n = math.ceil(len(self.common_sizes) * f1 / 100.0 - 1e-9)
        return list(self.common_sizes[:n])


def learn_profile(trace: Trace, device_id: Optional[str] = None) -> DeviceProfile:
    """Profile a shaped (or raw) trace. Ground-truth flags are not consulted."""
    if len(trace) == 0:
        raise EmptyProfileError("cannot learn a profile from an empty trace")
    if device_id is None:
        ids = trace.devices()
        device_id = ids[0] if len(ids) == 1 else "aggregate"
    return DeviceProfile(device_id, size_histogram(trace), trace.rate, trace.duration)


def unique_sizes(profiles: Sequence[DeviceProfile]) -> list:
    """For each profile, the sizes no other profile in the corpus has emitted."""
    out = []
    for i, p in enumerate(profiles):
        others = [q.histogram.sizes for j, q in enumerate(profiles) if j != i]
        other = np.unique(np.concatenate(others)) if others else np.empty(0, np.int64)
        out.append(np.setdiff1d(p.histogram.sizes, other, assume_unique=True))
    return out


def with_unique_sizes(profiles: Sequence[DeviceProfile]) -> list:
    """Fill in ``top_unique_size`` (most frequent unique size, or None) per profile."""
    result = []
    for p, uniq in zip(profiles, unique_sizes(profiles)):
        top = None
        if len(uniq):
            counts = np.array([p.histogram[s] for s in uniq])
            top = int(uniq[int(np.argmax(counts))])
        result.append(replace(p, top_unique_size=top))
    return result


def classify_dominant(profiles: Sequence[DeviceProfile], test: SizeHistogram):
    """Closest profile under cosine distance; ties go to the earliest profile."""
    if not profiles:
        raise ValueError("need at least one profile")
    if not test:
        raise EmptyProfileError("test histogram is empty")
    d = [cosine_distance(p.histogram, test) for p in profiles]
    best = int(np.argmin(d))
    return profiles[best].device_id, d[best]


def rank_devices(profiles: Sequence[DeviceProfile], test: SizeHistogram) -> list:
    """All ``(device_id, distance)`` pairs, closest first."""
    d = [(p.device_id, cosine_distance(p.histogram, test)) for p in profiles]
    return sorted(d, key=lambda x: x[1])


@dataclass(frozen=True)
class ConfusionMatrix:
    """``entries[i, j]`` = distance(model of labels[i], test of labels[j])."""

    entries: np.ndarray
    labels: tuple

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1] or e.shape[0] != len(self.labels):
            raise ValueError("confusion matrix must be square and match its labels")
        object.__setattr__(self, "entries", e)


FEATURES: dict = {
    "size": size_histogram,
    "interarrival": interarrival_histogram,
    "joint": lambda t: joint_histogram(t, 1.0, 1),
}


def _feature(x, extract: Callable):
    if isinstance(x, DeviceProfile):
        if extract is not size_histogram:
            raise TypeError("profiles only carry the size feature; pass learning traces instead")
        return x.histogram
    if isinstance(x, Trace):
        return extract(x)
    return x


def confusion_matrix(models: Mapping, tests: Mapping, feature="size") -> ConfusionMatrix:
    """Cosine-distance matrix between learned models and test traces.

    ``models`` and ``tests`` map device id to a DeviceProfile, Trace or feature
    vector. ``feature`` is ``size``, ``interarrival``, ``joint`` or a callable.
    """
    if set(models) != set(tests):
        raise ValueError(f"label mismatch: {sorted(set(models) ^ set(tests))}")
    extract = FEATURES[feature] if isinstance(feature, str) else feature
    labels = tuple(models)
    mf = [_feature(models[k], extract) for k in labels]
    tf = [_feature(tests[k], extract) for k in labels]
    e = np.array([[cosine_distance(m, t) for t in tf] for m in mf])
    return ConfusionMatrix(e, labels)


def diagonal_rate(m: ConfusionMatrix) -> float:
    """Fraction of columns whose strict minimum sits on the diagonal."""
    e = m.entries
    n = len(e)
    hits = 0
    for j in range(n):
        col = e[:, j]
        others = np.delete(col, j)
        if len(others) == 0 or col[j] < others.min():
            hits += 1
    return hits / n if n else 0.0
