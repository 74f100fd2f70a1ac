"""Synthetic IoT device traffic and the default 14-device corpus.

A device alternates between idle gaps and short activity bursts. Every burst
opens with one packet drawn from ``lead_distribution`` (a request or
handshake), followed by Poisson arrivals at ``rate`` whose sizes follow
``size_distribution``. Between bursts the device polls its cloud service:
every ``poll_interval`` seconds (jittered) it exchanges ``poll_packets``
packets spaced ``poll_spacing`` seconds apart.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import SizeHistogram, Trace, as_rng
from .metrics import cosine_distance


@dataclass(frozen=True)
class DeviceSpec:
    """Generator parameters for one device.

    ``burst_seconds`` is the mean burst length (the burstiness knob); idle gaps
    are sized so bursts occupy ``duty_cycle`` of the time on average. On top of
    the bursts, a polling exchange starts every ``poll_interval`` seconds
    (``None`` disables polling), each start jittered by up to a quarter
    interval. Poll packets draw their sizes from ``size_distribution``.
    """

    device_id: str
    size_distribution: tuple  # ((size, probability), ...)
    rate: float
    burst_seconds: float = 0.4
    duty_cycle: float = 0.02
    lead_distribution: Optional[tuple] = None
    poll_interval: Optional[float] = None
    poll_packets: int = 6
    poll_spacing: float = 0.5

    def __post_init__(self):
        for dist in (self.size_distribution, self.lead_distribution):
            if dist is None:
                continue
            p = np.array([w for _, w in dist], dtype=float)
            if np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                raise ValueError(f"{self.device_id}: probabilities must sum to 1")
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        if not 0 < self.duty_cycle <= 1:
            raise ValueError("duty_cycle must lie in (0, 1]")
        if self.burst_seconds <= 0:
            raise ValueError("burst_seconds must be positive")
        if self.poll_interval is not None and self.poll_interval <= 0:
            raise ValueError("poll_interval must be positive")
        if self.poll_packets < 1 or self.poll_spacing <= 0:
            raise ValueError("polls need at least one packet and a positive spacing")

    @property
    def poll_rate(self) -> float:
        """Long-run polling packets per second."""
        return 0.0 if self.poll_interval is None else self.poll_packets / self.poll_interval

    @property
    def sizes(self) -> np.ndarray:
        return np.array([s for s, _ in self.size_distribution], dtype=np.int64)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([w for _, w in self.size_distribution], dtype=float)

    def distribution(self) -> dict:
        """Long-run size frequencies, lead and polling packets included."""
        body = self.rate * self.duty_cycle + self.poll_rate
        leads = self.duty_cycle / self.burst_seconds if self.duty_cycle < 1 else 0.0
        total = body + leads
        out: dict = {}
        for dist, r in ((self.size_distribution, body), (self.lead_distribution or self.size_distribution, leads)):
            for s, p in dist:
                out[s] = out.get(s, 0.0) + r * p / total
        return out


def _activity(spec: DeviceSpec, duration: float, rng: np.random.Generator):
    """Burst intervals (starts, ends) covering ``duty_cycle`` of the time."""
    if spec.duty_cycle >= 1.0:
        return np.array([0.0]), np.array([duration])
    mean_on = spec.burst_seconds
    mean_off = mean_on * (1.0 - spec.duty_cycle) / spec.duty_cycle
    n = int(duration / (mean_on + mean_off) * 1.5) + 16
    starts, ends = [], []
    t = rng.exponential(mean_off) if rng.random() >= spec.duty_cycle else 0.0
    while t < duration:
        on = rng.exponential(mean_on, n)
        off = rng.exponential(mean_off, n)
        cycle = np.concatenate([[0.0], np.cumsum(on + off)[:-1]]) + t
        starts.append(cycle)
        ends.append(cycle + on)
        t = cycle[-1] + on[-1] + off[-1]
    if not starts:  # the first idle gap outlasts the trace
        return np.empty(0), np.empty(0)
    s = np.concatenate(starts)
    e = np.concatenate(ends)
    keep = s < duration
    return s[keep], np.minimum(e[keep], duration)


def _polls(spec: DeviceSpec, duration: float, rng: np.random.Generator) -> np.ndarray:
    """Timestamps of all polling packets."""
    gap = spec.poll_interval
    starts = np.arange(rng.random() * gap, duration, gap)
    starts = starts + (rng.random(len(starts)) - 0.5) * gap * POLL_JITTER
    offsets = (np.arange(spec.poll_packets) + rng.random((len(starts), spec.poll_packets))) * spec.poll_spacing
    ts = (starts[:, None] + offsets).ravel()
    return ts[(ts >= 0) & (ts < duration)]


def synth_device(spec: DeviceSpec, duration: float, rng=None) -> Trace:
    """Generate ``duration`` seconds of unshaped traffic for one device."""
    rng = as_rng(rng)
    starts, ends = _activity(spec, duration, rng)
    counts = rng.poisson(spec.rate * (ends - starts))
    owner = np.repeat(np.arange(len(starts)), counts)
    body_t = starts[owner] + rng.random(len(owner)) * (ends - starts)[owner]
    if spec.poll_interval is not None:
        body_t = np.concatenate([body_t, _polls(spec, duration, rng)])
    body_s = rng.choice(spec.sizes, size=len(body_t), p=spec.probabilities)
    if spec.duty_cycle < 1.0:
        lead = spec.lead_distribution or spec.size_distribution
        lead_sizes = np.array([s for s, _ in lead], np.int64)
        lead_p = np.array([w for _, w in lead])
        lead_s = rng.choice(lead_sizes, size=len(starts), p=lead_p)
        ts = np.concatenate([starts, body_t])
        sizes = np.concatenate([lead_s, body_s])
    else:
        ts, sizes = body_t, body_s
    return Trace.from_arrays(ts, sizes, spec.device_id, duration=duration)


# Corpus layout. Every device mixes four shared zones plus one unique marker:
#   small sizes (ACK/keep-alive), one control size, one report size and one
#   bulk size, each picked from a short menu so devices differ in which sizes
#   they use and how much. Markers sit 83 bytes apart so they stay unique after
#   padding by up to 80 bytes. The control/report/bulk menus each fall inside a
#   single Level-100 bucket, so Level-100 keeps only the zone shares.
# Sizes 54-58, 62-64, 71 and 86-98 are left free for attack profiles.
SMALL_SIZES = (60, 66, 74, 78, 82)
CONTROL_SIZES = (104, 134, 164, 194)
REPORT_SIZES = (209, 239, 269, 299)
BULK_SIZES = (1420, 1470, 1520, 1570)
SIGNATURE_BASE = 310
SIGNATURE_STEP = 83

ZONE_SHARES = (0.35, 0.25, 0.25, 0.01)  # small, control, report, bulk
ZONE_SPREAD = 0.3  # relative per-device deviation from ZONE_SHARES
SIGNATURE_SHARE = 0.03
BURST_SECONDS = 2.0
POLL_INTERVAL = 20.0
POLL_JITTER = 0.5  # fraction of the interval
POLL_PACKETS = 10
POLL_SPACING = 0.3

_ARCHETYPES = [
    # name, rate (pps while active), duty cycle
    ("tplink-plug", 8.0, 0.023),
    ("belkin-motion", 6.0, 0.025),
    ("amazon-echo", 22.0, 0.020),
    ("netatmo-weather", 10.0, 0.022),
    ("samsung-cam", 30.0, 0.020),
    ("hp-printer", 14.0, 0.021),
    ("tplink-cam", 28.0, 0.020),
    ("amazon-plug", 7.0, 0.024),
    ("dlink-plug", 7.0, 0.024),
    ("rachio-sprinkler", 9.0, 0.022),
    ("ring-alarm", 16.0, 0.021),
    ("roomba", 15.0, 0.021),
    ("tplink-bulb", 6.0, 0.025),
    ("wemo-insight", 8.0, 0.023),
]


def _share_codes(n: int) -> np.ndarray:
    """Ternary codes in {-1, 0, 1}^4 that perturb the zone shares.

    Any two codes differ by more than a constant over the three major zones
    (shifting those alike is mostly undone by normalisation), so no two devices
    share a coarse profile even once padding has erased the exact sizes.
    """
    codes = []
    for c in itertools.product((-1, 0, 1), repeat=len(ZONE_SHARES)):
        c = np.array(c)
        if all(np.ptp(c[:3] - d[:3]) > 0 for d in codes):
            codes.append(c)
    if n > len(codes):
        raise ValueError(f"at most {len(codes)} devices supported")
    return np.array(codes[:n])


def _zone(sizes: Sequence[int], share: float, rng: np.random.Generator, k: int) -> dict:
    picked = rng.choice(len(sizes), size=min(k, len(sizes)), replace=False)
    w = rng.dirichlet(np.full(len(picked), 2.0)) * share
    return {int(sizes[i]): float(x) for i, x in zip(sorted(picked), w)}


def default_corpus(seed: int = 2024) -> list:
    """The 14 default device specs (fixed by ``seed``; regeneration is bit-stable)."""
    rng = np.random.default_rng(seed)
    n = len(_ARCHETYPES)
    # distinct (control, report) pairs keep the raw distributions apart
    menus = list(itertools.product(range(len(CONTROL_SIZES)), range(len(REPORT_SIZES))))
    if n > len(menus):
        raise ValueError(f"at most {len(menus)} devices supported")
    picks = [menus[i] + (int(rng.integers(len(BULK_SIZES))),) for i in rng.permutation(len(menus))[:n]]
    shares = np.array(ZONE_SHARES) * (1.0 + ZONE_SPREAD * _share_codes(n))
    specs = []
    for i, (name, rate, duty) in enumerate(_ARCHETYPES):
        small, control, report, bulk = shares[i]
        c, r, b = picks[i]
        signature = SIGNATURE_BASE + SIGNATURE_STEP * i
        dist = _zone(SMALL_SIZES, small, rng, 3)
        dist[CONTROL_SIZES[c]] = control
        dist[REPORT_SIZES[r]] = report
        dist[BULK_SIZES[b]] = bulk
        dist[signature] = SIGNATURE_SHARE
        total = sum(dist.values())
        items = tuple(sorted((s, w / total) for s, w in dist.items()))
        # burst leads: one shared small size and the device's marker
        lead = ((int(SMALL_SIZES[i % len(SMALL_SIZES)]), 0.5), (signature, 0.5))
        specs.append(DeviceSpec(f"{i + 1:02d}-{name}", items, rate, BURST_SECONDS, duty, lead, POLL_INTERVAL,
                                 POLL_PACKETS, POLL_SPACING))
    check_corpus(specs)
    return specs


def spec_histogram(spec: DeviceSpec, scale: int = 1_000_000) -> SizeHistogram:
    """Integer-count view of a spec's long-run distribution (for cover sizes)."""
    d = spec.distribution()
    return SizeHistogram.from_mapping({s: max(1, int(round(p * scale))) for s, p in d.items()})


def check_corpus(specs: Sequence[DeviceSpec], min_distance: float = 0.2) -> None:
    """Reject corpora whose devices are too alike or lack a unique size."""
    dists = [spec.distribution() for spec in specs]
    for i in range(len(specs)):
        others = set().union(*(d.keys() for j, d in enumerate(dists) if j != i))
        if not set(dists[i]) - others:
            raise ValueError(f"{specs[i].device_id} has no unique size")
        for j in range(i + 1, len(specs)):
            d = cosine_distance(dists[i], dists[j])
            if d < min_distance:
                raise ValueError(f"{specs[i].device_id} and {specs[j].device_id} are too similar ({d:.3f})")
