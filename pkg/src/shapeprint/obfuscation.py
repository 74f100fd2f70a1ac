"""Padding and shaping defenses: random padding, Level-100, STP and ILP.

Shaped output lives on a slot grid: slot ``i`` is emitted at ``i / rate``.
STP fills every slot of any period (``[j*T, (j+1)*T)``) that carries real
traffic, and adds T-long cover injections that start at a random offset after
a period boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import SizeHistogram, Trace, as_rng, size_histogram

LEVEL100_MAX = 1600


class OverloadError(RuntimeError):
    """Real traffic arrives faster than the shaping rate can drain it."""


class UnsupportedSizeError(ValueError):
    pass


@dataclass(frozen=True)
class StpParams:
    """Shaping parameters.

    inject_prob: chance of a cover injection at each period boundary.
    period: period length in seconds.
    rate: emission rate in packets per second.
    max_pad: upper bound of the random padding in bytes.
    cover_distribution: unpadded cover sizes; ``None`` means "use the sizes of
    the trace being shaped".
    """

    inject_prob: float = 0.1
    period: float = 1.0
    rate: float = 100.0
    max_pad: int = 80
    cover_distribution: Optional[SizeHistogram] = None

    def __post_init__(self):
        if not 0.0 <= self.inject_prob <= 1.0:
            raise ValueError("inject_prob must lie in [0, 1]")
        if self.period <= 0 or self.rate <= 0:
            raise ValueError("period and rate must be positive")
        spp = self.period * self.rate
        if spp < 1 - 1e-9:
            raise ValueError("period * rate must be at least one slot")
        if abs(spp - round(spp)) > 1e-6:
            raise ValueError("period * rate must be a whole number of slots")
        if self.max_pad < 1:
            raise ValueError("max_pad must be >= 1")

    @property
    def slots_per_period(self) -> int:
        return int(round(self.period * self.rate))

    def with_(self, **kw) -> "StpParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class PaddingScheme:
    """``kind`` is one of ``random``, ``level100``, ``constant``."""

    kind: str = "random"
    max_pad: int = 80
    size: int = 1600

    def __post_init__(self):
        if self.kind not in ("random", "level100", "constant"):
            raise ValueError(f"unknown padding kind {self.kind!r}")
        if self.kind == "random" and self.max_pad < 1:
            raise ValueError("random padding needs max_pad >= 1")

    @classmethod
    def random(cls, max_pad: int = 80) -> "PaddingScheme":
        return cls("random", max_pad=max_pad)

    @classmethod
    def level100(cls) -> "PaddingScheme":
        return cls("level100")

    @classmethod
    def constant(cls, size: int) -> "PaddingScheme":
        return cls("constant", size=size)

    def apply(self, sizes: np.ndarray, rng) -> np.ndarray:
        sizes = np.asarray(sizes, dtype=np.int64)
        if self.kind == "random":
            return random_pad_array(sizes, self.max_pad, rng)
        if self.kind == "level100":
            return level100_pad_array(sizes, rng)
        if len(sizes) and sizes.max() > self.size:
            raise UnsupportedSizeError(f"packet of {sizes.max()} B exceeds constant pad size {self.size}")
        return np.full(len(sizes), self.size, dtype=np.int64)


def random_pad(size: int, max_pad: int, rng=None) -> int:
    """``size + u`` with ``u`` uniform on ``1..max_pad``."""
    return int(random_pad_array(np.array([size]), max_pad, as_rng(rng))[0])


def random_pad_array(sizes: np.ndarray, max_pad: int, rng) -> np.ndarray:
    if max_pad < 1:
        raise ValueError("max_pad must be >= 1")
    return sizes + as_rng(rng).integers(1, max_pad, size=len(sizes), endpoint=True)


def level100_pad(size: int, rng=None) -> int:
    return int(level100_pad_array(np.array([size]), as_rng(rng))[0])


def level100_pad_array(sizes: np.ndarray, rng) -> np.ndarray:
    """Level-100 table: <=100, <=200, <=300 round up; (300, 999) -> U[s, 1000];
    [999, 1399] -> U[s, 1400]; [1400, 1600] -> 1600."""
    sizes = np.asarray(sizes, dtype=np.int64)
    if len(sizes) and (sizes.max() > LEVEL100_MAX or sizes.min() < 1):
        raise UnsupportedSizeError(f"Level-100 padding supports sizes 1..{LEVEL100_MAX}")
    rng = as_rng(rng)
    out = np.empty_like(sizes)
    out[sizes <= 100] = 100
    out[(sizes > 100) & (sizes <= 200)] = 200
    out[(sizes > 200) & (sizes <= 300)] = 300
    band = (sizes > 300) & (sizes <= 1399)
    low = sizes[band]
    out[band] = rng.integers(low, np.where(low < 999, 1000, 1400), endpoint=True)
    out[sizes >= 1400] = 1600
    return out


@dataclass(frozen=True)
class StpSchedule:
    """Slot layout produced by STP before sizes are drawn.

    slots: sorted emitted slot indices.
    real_slots: slot assigned to each input packet (same order as the input).
    real_periods: periods that carried real traffic.
    injections: number of cover injections started by the coin flips.
    """

    slots: np.ndarray
    real_slots: np.ndarray
    real_periods: np.ndarray
    injections: int
    slots_per_period: int


def _queue_slots(due: np.ndarray, backlog_limit: int) -> np.ndarray:
    """One packet per slot, first come first served: a_i = max(d_i, a_{i-1} + 1)."""
    if len(due) == 0:
        return due.copy()
    i = np.arange(len(due))
    assigned = i + np.maximum.accumulate(due - i)
    delay = assigned - due
    if delay.max() >= backlog_limit:
        worst = int(np.argmax(delay))
        raise OverloadError(
            f"real traffic backlog of {int(delay[worst])} slots at packet {worst}; "
            f"shaping rate is lower than the device's rate"
        )
    return assigned


def stp_schedule(timestamps: np.ndarray, duration: float, params: StpParams, rng) -> StpSchedule:
    """Decide which slots STP emits. Random draws do not depend on ``inject_prob``,
    so equal seeds give nested injection sets across probabilities."""
    rng = as_rng(rng)
    spp = params.slots_per_period
    rate = params.rate
    n_periods = max(1, math.ceil(duration / params.period - 1e-9))

    coins = rng.random(n_periods)
    offsets = rng.random(n_periods) * params.period

    due = np.ceil(np.asarray(timestamps, dtype=np.float64) * rate - 1e-9).astype(np.int64)
    real_slots = _queue_slots(due, spp)
    real_periods = np.unique(real_slots // spp)

    # Cover injections with start/end bookkeeping: an injection landing inside
    # the running one extends it by a full period instead of starting anew.
    inject_end = -1
    starts, ends = [], []
    injections = 0
    for j in np.flatnonzero(coins < params.inject_prob):
        injections += 1
        start = int(j) * spp + int(math.ceil(offsets[j] * rate - 1e-9))
        if start > inject_end:
            starts.append(start)
            ends.append(start + spp)
        else:
            ends[-1] += spp
        inject_end = ends[-1]

    n_full = max(n_periods, int(real_periods[-1]) + 1 if len(real_periods) else 0)
    if ends:
        n_full = max(n_full, -(-ends[-1] // spp))
    mask = np.zeros(n_full * spp, dtype=bool)
    for s, e in zip(starts, ends):
        mask[s:e] = True
    mask.reshape(n_full, spp)[real_periods] = True
    return StpSchedule(np.flatnonzero(mask), real_slots, real_periods, injections, spp)


def _draw_cover(hist: SizeHistogram, n: int, rng) -> np.ndarray:
    if n == 0:
        return np.empty(0, np.int64)
    if hist is None or hist.total == 0:
        raise ValueError("cover traffic needed but the cover distribution is empty")
    return rng.choice(hist.sizes, size=n, p=hist.counts / hist.total)


def _single_device(trace: Trace):
    ids = {d for d in trace.device_ids}
    return ids.pop() if len(ids) == 1 else None


def stp_shape(
    trace: Trace,
    params: StpParams = StpParams(),
    padding: Optional[PaddingScheme] = None,
    rng=None,
) -> Trace:
    """Shape and pad ``trace`` with STP.

    Every real packet is emitted exactly once, in the first free slot at or
    after its own time; all other emitted slots carry cover packets
    (``is_cover``) whose unpadded sizes come from ``params.cover_distribution``.
    Real and cover packets are padded by the same scheme.
    """
    rng = as_rng(rng)
    padding = padding or PaddingScheme.random(params.max_pad)
    sched = stp_schedule(trace.timestamps, trace.duration, params, rng)
    slots = sched.slots
    n = len(slots)
    is_real = np.zeros(n, bool)
    real_pos = np.searchsorted(slots, sched.real_slots)
    is_real[real_pos] = True

    cover_hist = params.cover_distribution
    if cover_hist is None:
        cover_hist = size_histogram(trace)
    sizes = np.empty(n, np.int64)
    sizes[~is_real] = _draw_cover(cover_hist, int((~is_real).sum()), rng)
    sizes[real_pos] = trace.sizes
    sizes = padding.apply(sizes, rng)

    attack = np.zeros(n, bool)
    attack[real_pos] = trace.is_attack
    ts = slots / params.rate
    duration = max(trace.duration, float(ts[-1]) if n else 0.0)
    return Trace(ts, sizes, np.full(n, _single_device(trace), dtype=object), ~is_real, attack, duration)


def stp_rate(trace: Trace, params: StpParams, rng=None) -> float:
    """Packets per second STP would emit for ``trace`` (no sizes drawn)."""
    sched = stp_schedule(trace.timestamps, trace.duration, params, as_rng(rng))
    return len(sched.slots) / trace.duration


def ilp_shape(trace: Trace, rate: float, pad_to: int, rng=None) -> Trace:
    """Constant-rate, constant-size link padding over the whole duration."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    if len(trace) and trace.sizes.max() > pad_to:
        raise UnsupportedSizeError(f"pad_to={pad_to} is smaller than a {trace.sizes.max()} B packet")
    n = max(0, math.ceil(trace.duration * rate - 1e-9))
    due = np.ceil(trace.timestamps * rate - 1e-9).astype(np.int64)
    backlog = max(1, int(math.ceil(rate)))
    assigned = _queue_slots(due, backlog)
    if len(assigned) and assigned[-1] >= n:
        n = int(assigned[-1]) + 1
    is_cover = np.ones(n, bool)
    is_cover[assigned] = False
    attack = np.zeros(n, bool)
    attack[assigned] = trace.is_attack
    ts = np.arange(n) / rate
    return Trace(ts, np.full(n, pad_to, np.int64), np.full(n, _single_device(trace), dtype=object),
                 is_cover, attack, max(trace.duration, float(ts[-1]) if n else 0.0))
