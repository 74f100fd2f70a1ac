"""External adversary behind a NAT: device counting and subset detection."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .core import SizeHistogram, Trace
from .fingerprint import DeviceProfile, with_unique_sizes

MAX_FULL_COMPARISON_DEVICES = 20


class CombinatorialGuardError(ValueError):
    """Full comparison refused: too many candidate devices."""


def nat_aggregate(traces: Sequence[Trace]) -> Trace:
    """Merge device traces into one stream and erase device ids.

    Ground-truth flags ride along for scoring only.
    """
    if not traces:
        return Trace.empty()
    ts = np.concatenate([t.timestamps for t in traces])
    order = np.argsort(ts, kind="stable")
    n = len(ts)
    return Trace(
        ts[order],
        np.concatenate([t.sizes for t in traces])[order],
        np.full(n, None, dtype=object),
        np.concatenate([t.is_cover for t in traces])[order],
        np.concatenate([t.is_attack for t in traces])[order],
        max(t.duration for t in traces),
    )


@dataclass(frozen=True)
class CountThresholds:
    """``avg_rate[k]`` is the mean aggregate rate of k active devices;
    ``thresholds[k-1]`` separates k from k+1."""

    avg_rate: dict
    thresholds: tuple

    @property
    def n_devices(self) -> int:
        return len(self.thresholds) + 1


def learn_count_thresholds(profiles: Sequence[DeviceProfile]) -> CountThresholds:
    """Mid-points between mean subset rates.

    The mean over all k-subsets of summed rates is k times the mean device
    rate, so no enumeration is needed.
    """
    if len(profiles) < 2:
        raise ValueError("need at least two profiles")
    mean = float(np.mean([p.mean_rate for p in profiles]))
    if mean <= 0:
        raise ValueError("profiles must have positive rates")
    n = len(profiles)
    avg = {k: k * mean for k in range(1, n + 1)}
    thr = tuple((avg[k] + avg[k + 1]) / 2 for k in range(1, n))
    return CountThresholds(avg, thr)


def estimate_count(rate: float, t: CountThresholds) -> int:
    """1 + number of thresholds strictly below ``rate``, clamped to [1, n]."""
    k = 1 + int(np.sum(np.asarray(t.thresholds) < rate))
    return min(max(k, 1), t.n_devices)


@dataclass(frozen=True)
class SubsetEstimate:
    devices: frozenset
    method: str
    score_detail: dict = field(default_factory=dict, repr=False)


class SubsetScore(NamedTuple):
    recall: float
    precision: float
    exact: float
    degenerate: bool = False


def subset_metrics(truth, estimate) -> SubsetScore:
    """Standard recall/precision over device sets, plus exact match.

    An empty truth or estimate yields zeros with ``degenerate`` set.
    """
    truth, estimate = set(truth), set(estimate)
    if not truth or not estimate:
        return SubsetScore(0.0, 0.0, float(truth == estimate), True)
    hit = len(truth & estimate)
    return SubsetScore(hit / len(truth), hit / len(estimate), float(truth == estimate))


def _rates_matrix(profiles: Sequence[DeviceProfile], test: SizeHistogram):
    index = np.unique(np.concatenate([p.histogram.sizes for p in profiles] + [test.sizes]))
    # per-second rates so members learned over different durations weigh fairly
    p = np.stack([pr.histogram.vector(index) / pr.duration for pr in profiles])
    return p, test.vector(index)


def _candidate_sizes(k_hat: int, n: int, spread: Optional[int]) -> list:
    if spread is None:
        return list(range(1, n + 1))
    return [k for k in range(k_hat - spread, k_hat + spread + 1) if 1 <= k <= n]


def full_comparison_check(
    profiles: Sequence[DeviceProfile],
    test: SizeHistogram,
    thresholds: CountThresholds,
    test_duration: float,
    spread: Optional[int] = 1,
    chunk: int = 2048,
) -> SubsetEstimate:
    """Cosine-nearest candidate subset among sizes ``k_hat +- spread``.

    Each candidate's expected histogram is the sum of its members' per-second
    histograms. ``spread=None`` searches every non-empty subset.
    """
    n = len(profiles)
    if n > MAX_FULL_COMPARISON_DEVICES:
        raise CombinatorialGuardError(f"{n} devices exceed the limit of {MAX_FULL_COMPARISON_DEVICES}")
    if not test:
        raise ValueError("test histogram is empty")
    t0 = time.perf_counter()
    k_hat = estimate_count(test.total / test_duration, thresholds)
    p, t = _rates_matrix(profiles, test)
    t_norm = np.linalg.norm(t)
    best_d, best_set, n_cand = np.inf, None, 0
    for k in _candidate_sizes(k_hat, n, spread):
        combos = itertools.combinations(range(n), k)
        while True:
            block = list(itertools.islice(combos, chunk))
            if not block:
                break
            member = np.zeros((len(block), n))
            rows = np.repeat(np.arange(len(block)), k)
            member[rows, np.array(block).ravel()] = 1.0
            cand = member @ p
            cos = (cand @ t) / (np.linalg.norm(cand, axis=1) * t_norm)
            d = 1.0 - cos
            i = int(np.argmin(d))
            if d[i] < best_d:
                best_d, best_set = float(d[i]), block[i]
            n_cand += len(block)
    devices = frozenset(profiles[i].device_id for i in best_set)
    elapsed = time.perf_counter() - t0
    detail = {
        "distance": max(0.0, best_d),
        "estimated_count": k_hat,
        "candidates": n_cand,
        "operations": n_cand * p.shape[1],
        "seconds": elapsed,
    }
    return SubsetEstimate(devices, "full_comparison", detail)


@dataclass(frozen=True)
class FastScoreIndex:
    """Per-device lookups FSBC prepares once at learning time.

    Common sizes of all devices are stored flat (``sizes``, ``per_second``,
    ``owner``) so one test lookup serves every device.
    """

    device_ids: tuple
    unique_size: np.ndarray  # -1 where a device has no unique size
    sizes: np.ndarray
    per_second: np.ndarray
    owner: np.ndarray
    totals: np.ndarray

    @classmethod
    def build(cls, profiles: Sequence[DeviceProfile], f1: float) -> "FastScoreIndex":
        if not 0 <= f1 <= 100:
            raise ValueError("f1 is a percentage in [0, 100]")
        annotated = with_unique_sizes(profiles)
        sizes, per_sec, owner = [], [], []
        for i, p in enumerate(annotated):
            top = p.top_common(f1)
            sizes.extend(s for s, _ in top)
            per_sec.extend(c / p.duration for _, c in top)
            owner.extend([i] * len(top))
        uniq = np.array([-1 if p.top_unique_size is None else p.top_unique_size for p in annotated])
        owner = np.array(owner, dtype=np.int64)
        totals = np.bincount(owner, minlength=len(annotated)) + (uniq >= 0)
        return cls(
            tuple(p.device_id for p in annotated),
            uniq,
            np.array(sizes, dtype=np.int64),
            np.array(per_sec, dtype=float),
            owner,
            totals,
        )

    def scores(self, test: SizeHistogram, f2: float, test_duration: float):
        """Scores in [0, 1] and the number of size lookups performed."""
        n = len(self.device_ids)
        has_uniq = self.unique_size >= 0
        missing = has_uniq & (test.lookup(self.unique_size) == 0)
        short = test.lookup(self.sizes) < (f2 / 100.0) * self.per_second * test_duration
        penalties = missing + np.bincount(self.owner, weights=short, minlength=n)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(self.totals > 0, 1.0 - penalties / self.totals, 1.0)
        return out, int(self.totals.sum())


def fsbc(
    profiles: Union[Sequence[DeviceProfile], FastScoreIndex],
    test: SizeHistogram,
    f1: float,
    f2: float,
    thresholds: CountThresholds,
    test_duration: float,
) -> SubsetEstimate:
    """Fast Scores Based Check.

    Every device starts at score 1 and loses ``1/total`` (total = common sizes
    plus one for a unique size) when its top unique size is absent from the
    test, and again for each common size seen fewer than ``f2%`` of the
    duration-scaled learned count. The ``estimate_count`` best scorers win.
    """
    if not 0 <= f2 <= 100:
        raise ValueError("f2 is a percentage in [0, 100]")
    index = profiles if isinstance(profiles, FastScoreIndex) else FastScoreIndex.build(profiles, f1)
    t0 = time.perf_counter()
    scores, ops = index.scores(test, f2, test_duration)
    k_hat = estimate_count(test.total / test_duration, thresholds)
    order = np.argsort(-scores, kind="stable")[:k_hat]
    devices = frozenset(index.device_ids[i] for i in order)
    elapsed = time.perf_counter() - t0
    detail = {
        "scores": dict(zip(index.device_ids, scores.tolist())),
        "estimated_count": k_hat,
        "operations": ops,
        "seconds": elapsed,
    }
    return SubsetEstimate(devices, "fsbc", detail)
