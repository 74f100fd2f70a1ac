"""Defender-side anomaly detection on raw device traffic.

Traffic is cut into fixed windows (two minutes by default) and every window is
reduced to its packet-size histogram. Two scorers are offered:

* ``lof``: local outlier factor of the window among windows of a normal trace,
  with Jensen-Shannon distance between histograms.
* ``js``: Jensen-Shannon distance between the window and the whole normal
  trace.

A window whose score exceeds a threshold picked on a labelled validation trace
is flagged.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from sklearn.neighbors import LocalOutlierFactor

from .core import SizeHistogram, Trace, as_rng, size_histogram, split_windows
from .metrics import jsd_matrix

log = logging.getLogger(__name__)

WINDOW_SECONDS = 120.0
DEFAULT_NEIGHBORHOOD = 20


@dataclass(frozen=True)
class AttackProfile:
    """Synthetic attack traffic injected into a window.

    Each attacked window receives ``1 + Poisson(extra_bursts)`` bursts of
    ``burst_seconds`` at ``rate`` packets per second.
    """

    name: str
    size_distribution: tuple  # ((size, probability), ...)
    rate: float
    burst_seconds: float = 2.0
    extra_bursts: float = 1.0

    def __post_init__(self):
        if self.rate <= 0 or self.burst_seconds <= 0:
            raise ValueError("rate and burst_seconds must be positive")
        p = np.array([w for _, w in self.size_distribution], float)
        if np.any(p < 0) or not np.isclose(p.sum(), 1.0):
            raise ValueError("attack size probabilities must sum to 1")

    @property
    def sizes(self) -> np.ndarray:
        return np.array([s for s, _ in self.size_distribution], np.int64)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([w for _, w in self.size_distribution], float)


ATTACKS = {
    # bare SYN segments, very high rate
    "syn_flood": AttackProfile("syn_flood", ((54, 1.0),), 200.0, 2.0, 1.0),
    # repeated queries of a few mid sizes
    "dns_attack": AttackProfile("dns_attack", ((86, 0.3), (90, 0.4), (94, 0.2), (98, 0.1)), 100.0, 2.0, 1.0),
    # slow handshake chatter with the control server
    "cnc_infection": AttackProfile(
        "cnc_infection", ((56, 0.2), (58, 0.2), (62, 0.25), (64, 0.2), (71, 0.15)), 20.0, 8.0, 1.0
    ),
}


def window_count(duration: float, window_length: float = WINDOW_SECONDS) -> int:
    return int(math.floor(duration / window_length + 1e-9))


def inject_attack(
    trace: Trace,
    profile: AttackProfile,
    window_fraction: float = 0.5,
    rng=None,
    window_length: float = WINDOW_SECONDS,
) -> Trace:
    """Add attack packets (``is_attack``) to ``ceil(fraction * windows)`` windows."""
    if not 0 <= window_fraction <= 1:
        raise ValueError("window_fraction must lie in [0, 1]")
    n = window_count(trace.duration, window_length)
    if n == 0:
        raise ValueError("trace is shorter than one window")
    rng = as_rng(rng)
    chosen = np.sort(rng.choice(n, size=math.ceil(window_fraction * n - 1e-9), replace=False))
    if len(chosen) == 0:
        return trace
    span = min(profile.burst_seconds, window_length)
    ts_parts = []
    for w in chosen:
        lo = w * window_length
        for _ in range(1 + rng.poisson(profile.extra_bursts)):
            start = lo + rng.random() * (window_length - span)
            k = max(1, rng.poisson(profile.rate * span))
            ts_parts.append(start + rng.random(k) * span)
    ts = np.concatenate(ts_parts)
    sizes = rng.choice(profile.sizes, size=len(ts), p=profile.probabilities)
    attack = Trace.from_arrays(ts, sizes, None, trace.duration, is_attack=np.ones(len(ts), bool))
    merged_ts = np.concatenate([trace.timestamps, attack.timestamps])
    order = np.argsort(merged_ts, kind="stable")
    return Trace(
        merged_ts[order],
        np.concatenate([trace.sizes, attack.sizes])[order],
        np.concatenate([trace.device_ids, attack.device_ids])[order],
        np.concatenate([trace.is_cover, attack.is_cover])[order],
        np.concatenate([trace.is_attack, attack.is_attack])[order],
        trace.duration,
    )


def window_histograms(trace: Trace, window_length: float = WINDOW_SECONDS) -> list:
    """Size histogram of each full window (a trailing partial window is dropped)."""
    n = window_count(trace.duration, window_length)
    wins = split_windows(trace, window_length)[:n]
    return [size_histogram(w.packets) for w in wins]


def window_labels(trace: Trace, window_length: float = WINDOW_SECONDS) -> np.ndarray:
    """Ground truth per window: True if it holds any attack packet. Scoring only."""
    n = window_count(trace.duration, window_length)
    wins = split_windows(trace, window_length)[:n]
    return np.array([bool(w.packets.is_attack.any()) for w in wins])


def _count_matrix(hists: Sequence[SizeHistogram], index: np.ndarray) -> np.ndarray:
    return np.stack([h.lookup(index) for h in hists]).astype(float) if hists else np.zeros((0, len(index)))


def _index(*groups) -> np.ndarray:
    keys = [h.sizes for g in groups for h in g]
    return np.unique(np.concatenate(keys)) if keys else np.zeros(0, np.int64)


def lof_scores(
    normal_windows: Sequence[SizeHistogram],
    eval_windows: Sequence[SizeHistogram],
    neighborhood: int = DEFAULT_NEIGHBORHOOD,
) -> np.ndarray:
    """Local outlier factor of each eval window w.r.t. the normal windows.

    Higher is more anomalous (about 1 for inliers). Empty eval windows get NaN.
    """
    normal = [h for h in normal_windows if h]
    if len(normal) <= neighborhood:
        raise ValueError(f"need more than {neighborhood} non-empty normal windows, got {len(normal)}")
    live = np.array([bool(h) for h in eval_windows], bool)
    out = np.full(len(eval_windows), np.nan)
    if not live.any():
        return out
    evals = [h for h in eval_windows if h]
    index = _index(normal, evals)
    n_mat = _count_matrix(normal, index)
    e_mat = _count_matrix(evals, index)
    lof = LocalOutlierFactor(n_neighbors=neighborhood, metric="precomputed", novelty=True)
    lof.fit(jsd_matrix(n_mat, n_mat))
    out[live] = -lof.score_samples(jsd_matrix(e_mat, n_mat))
    return out


def js_scores(normal_hist: SizeHistogram, eval_windows: Sequence[SizeHistogram]) -> np.ndarray:
    """Jensen-Shannon distance of each window to the normal histogram; NaN if empty."""
    if not normal_hist:
        raise ValueError("normal histogram is empty")
    live = np.array([bool(h) for h in eval_windows], bool)
    out = np.full(len(eval_windows), np.nan)
    if not live.any():
        return out
    evals = [h for h in eval_windows if h]
    index = _index([normal_hist], evals)
    out[live] = jsd_matrix(_count_matrix(evals, index), normal_hist.lookup(index)[None, :].astype(float))[:, 0]
    return out


class ThresholdChoice(NamedTuple):
    threshold: float
    accuracy: float
    roc: np.ndarray  # rows of (false positive rate, true positive rate)
    auc: float
    eer: float


def roc_curve(scores, labels) -> np.ndarray:
    """ROC points for "score > t is abnormal", t sweeping every distinct score."""
    scores = np.asarray(scores, float)
    labels = np.asarray(labels, bool)
    pos, neg = labels.sum(), (~labels).sum()
    ts = np.unique(scores)
    pts = [(1.0, 1.0)]
    for t in np.concatenate([[-np.inf], ts]):
        flag = scores > t
        pts.append((np.sum(flag & ~labels) / neg, np.sum(flag & labels) / pos))
    pts = np.array(sorted(set(pts)))
    return pts


def _auc(roc: np.ndarray) -> float:
    x, y = roc[:, 0], roc[:, 1]
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2))


def _eer(scores, labels) -> float:
    scores = np.asarray(scores, float)
    labels = np.asarray(labels, bool)
    best = (np.inf, 1.0)
    for t in np.concatenate([[-np.inf], np.unique(scores)]):
        flag = scores > t
        fpr = np.mean(flag[~labels])
        fnr = np.mean(~flag[labels])
        gap = abs(fpr - fnr)
        if gap < best[0]:
            best = (gap, (fpr + fnr) / 2)
    return float(best[1])


def select_threshold(scores, labels) -> ThresholdChoice:
    """Accuracy-maximising cut on validation scores.

    Every distinct score is tried as "abnormal if score > t"; ties in accuracy
    go to the lower threshold. The returned threshold is then moved to the
    middle of the gap up to the next distinct score, which keeps the same
    validation decisions but leaves head-room for unseen normal windows.
    NaN scores (empty windows) are ignored.
    """
    scores = np.asarray(scores, float)
    labels = np.asarray(labels, bool)
    keep = ~np.isnan(scores)
    scores, labels = scores[keep], labels[keep]
    if labels.all() or not labels.any():
        raise ValueError("validation labels must contain both classes")
    ts = np.unique(scores)
    acc = np.array([np.mean((scores > t) == labels) for t in ts])
    i = int(np.argmax(acc))  # first maximum = lowest threshold
    t = ts[i] if i + 1 == len(ts) else (ts[i] + ts[i + 1]) / 2
    roc = roc_curve(scores, labels)
    return ThresholdChoice(float(t), float(acc[i]), roc, _auc(roc), _eer(scores, labels))


@dataclass(frozen=True)
class AnomalyModel:
    method: str
    threshold: float
    window_length: float = WINDOW_SECONDS
    neighborhood: int = DEFAULT_NEIGHBORHOOD
    normal_windows: tuple = field(default=(), repr=False)
    normal_hist: Optional[SizeHistogram] = field(default=None, repr=False)
    validation: Optional[ThresholdChoice] = field(default=None, repr=False)

    def __post_init__(self):
        if self.method not in ("lof", "js"):
            raise ValueError(f"unknown method {self.method!r}")
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")

    def score(self, windows: Sequence[SizeHistogram]) -> np.ndarray:
        if self.method == "lof":
            return lof_scores(self.normal_windows, windows, self.neighborhood)
        return js_scores(self.normal_hist, windows)


def fit(
    method: str,
    normal: Trace,
    validation: Trace,
    window_length: float = WINDOW_SECONDS,
    neighborhood: int = DEFAULT_NEIGHBORHOOD,
) -> AnomalyModel:
    """Learn the reference from ``normal`` and the threshold from ``validation``.

    ``validation`` must carry attack ground truth; only its window labels are
    read, to place the threshold.
    """
    normal_windows = tuple(window_histograms(normal, window_length))
    normal_hist = size_histogram(normal)
    probe = AnomalyModel(method, 0.0, window_length, neighborhood, normal_windows, normal_hist)
    scores = probe.score(window_histograms(validation, window_length))
    choice = select_threshold(scores, window_labels(validation, window_length))
    log.debug("%s threshold %.4f (validation auc %.3f)", method, choice.threshold, choice.auc)
    return AnomalyModel(method, choice.threshold, window_length, neighborhood, normal_windows, normal_hist, choice)


class Detection(NamedTuple):
    flags: np.ndarray
    scores: np.ndarray
    precision: float  # NaN when nothing was flagged
    recall: float  # NaN when nothing was attacked
    false_alarms: int


def detect(model: AnomalyModel, test: Trace) -> Detection:
    """Flag windows scoring above the threshold; empty windows are never flagged."""
    hists = window_histograms(test, model.window_length)
    scores = model.score(hists)
    flags = np.nan_to_num(scores, nan=-np.inf) > model.threshold
    truth = window_labels(test, model.window_length)
    tp = int(np.sum(flags & truth))
    precision = tp / flags.sum() if flags.any() else float("nan")
    recall = tp / truth.sum() if truth.any() else float("nan")
    return Detection(flags, scores, float(precision), float(recall), int(np.sum(flags & ~truth)))
