"""Adversarial estimation of the padding bound W and injection probability q.

The adversary knows the device catalogue and can shape lab traces itself, so it
simulates STP over a grid of candidate values and matches the victim against
the simulations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .core import SizeHistogram, Trace, as_rng
from .fingerprint import learn_profile
from .metrics import cosine_distance
from .obfuscation import PaddingScheme, StpParams, stp_rate, stp_shape

log = logging.getLogger(__name__)

W_GRID_STEP = 40
W_GRID = tuple(range(10, 251, W_GRID_STEP))  # 10, 50, ..., 250
Q_GRID = tuple(round(0.05 * i, 2) for i in range(1, 21))  # 0.05 .. 1.00


def _child_seeds(rng, n: int) -> list:
    """Independent, reproducible sub-streams drawn from one parent."""
    gen = as_rng(rng)
    return [int(s) for s in gen.integers(0, 2**63 - 1, size=n)]


@dataclass(frozen=True)
class WGridModels:
    """Profiles learned from lab traces shaped at every grid value of W."""

    grid: tuple
    models: dict  # (device_id, W) -> DeviceProfile

    @property
    def devices(self) -> list:
        seen = dict.fromkeys(d for d, _ in self.models)
        return list(seen)


class WEstimate(NamedTuple):
    w: int
    device_id: str
    distance: float
    margin: int = W_GRID_STEP // 2

    def __str__(self) -> str:
        return f"{self.w}±{self.margin}"


def build_w_grid(
    device_traces: Mapping[str, Trace],
    grid: Sequence[int] = W_GRID,
    params: StpParams = StpParams(),
    rng=None,
) -> WGridModels:
    """Shape each lab trace at every W in ``grid`` and learn a profile.

    ``params.max_pad`` is ignored; everything else in ``params`` is kept.
    """
    grid = tuple(int(w) for w in grid)
    if not grid or min(grid) < 1:
        raise ValueError("grid needs positive W values")
    seeds = _child_seeds(rng, len(device_traces) * len(grid))
    models = {}
    k = 0
    for dev, trace in device_traces.items():
        for w in grid:
            shaped = stp_shape(trace, params.with_(max_pad=w), PaddingScheme.random(w), rng=seeds[k])
            models[(dev, w)] = learn_profile(shaped, dev)
            k += 1
    log.debug("built %d W-grid profiles", len(models))
    return WGridModels(grid, models)


def estimate_w(models: WGridModels, test: SizeHistogram) -> WEstimate:
    """Global cosine minimum over all (device, W) models.

    Ties go to the earliest model in build order (device, then ascending W).
    """
    if not test:
        raise ValueError("test histogram is empty")
    best = None
    for (dev, w), prof in models.models.items():
        d = cosine_distance(prof.histogram, test)
        if best is None or d < best[2]:
            best = (dev, w, d)
    return WEstimate(best[1], best[0], best[2])


def distance_table(models: WGridModels, test: SizeHistogram) -> np.ndarray:
    """Cosine distances with rows = grid W values and columns = devices."""
    devs = models.devices
    out = np.empty((len(models.grid), len(devs)))
    for j, dev in enumerate(devs):
        for i, w in enumerate(models.grid):
            out[i, j] = cosine_distance(models.models[(dev, w)].histogram, test)
    return out


@dataclass(frozen=True)
class QThresholds:
    """Simulated STP rates of one device across a grid of q values.

    ``thresholds[i]`` is the mid-point between ``rates[i]`` and ``rates[i+1]``.
    """

    grid: tuple
    rates: tuple

    def __post_init__(self):
        if len(self.grid) != len(self.rates) or len(self.grid) < 2:
            raise ValueError("grid and rates must align and hold at least two points")
        if np.any(np.diff(self.rates) < 0):
            raise ValueError("rates must be non-decreasing in q")

    @property
    def thresholds(self) -> tuple:
        r = np.asarray(self.rates)
        return tuple((r[:-1] + r[1:]) / 2)


def q_rates(trace: Trace, grid: Sequence[float] = Q_GRID, params: StpParams = StpParams(), seed=None) -> tuple:
    """Shaped rate of ``trace`` at each q.

    Each q reuses the same seed, so the injection sets are nested and the rates
    are monotone by construction.
    """
    if seed is None:
        seed = _child_seeds(None, 1)[0]
    return tuple(stp_rate(trace, params.with_(inject_prob=float(q)), rng=seed) for q in grid)


def build_q_thresholds(
    device_traces: Mapping[str, Trace],
    grid: Sequence[float] = Q_GRID,
    params: StpParams = StpParams(),
    rng=None,
) -> dict:
    """Per-device :class:`QThresholds` from lab traces."""
    grid = tuple(float(q) for q in grid)
    if any(not 0 <= q <= 1 for q in grid) or list(grid) != sorted(grid):
        raise ValueError("q grid must be sorted values in [0, 1]")
    seeds = _child_seeds(rng, len(device_traces))
    return {
        dev: QThresholds(grid, q_rates(trace, grid, params, seed))
        for (dev, trace), seed in zip(device_traces.items(), seeds)
    }


def estimate_q(thresholds: QThresholds, observed_rate: float) -> float:
    """Grid value whose rate band contains ``observed_rate``."""
    i = int(np.sum(np.asarray(thresholds.thresholds) < observed_rate))
    return thresholds.grid[i]
