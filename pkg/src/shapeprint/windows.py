"""Telling real-traffic windows from cover-only windows in shaped traffic.

The adversary cuts shaped traffic into windows of one shaping period, offset
from the (unknown) shaping grid, and encodes every window as the padded size
in each of its ``T*R`` emission slots (0 for an empty slot). A KNN classifier
labels the non-empty windows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .core import TimeWindow, Trace, as_rng
from .obfuscation import StpParams

log = logging.getLogger(__name__)



class MalformedShapingError(ValueError):
    """Two packets fell into the same emission slot."""


def _slot_count(params: StpParams) -> int:
    return params.slots_per_period


def _slots(ts: np.ndarray, start, rate: float) -> np.ndarray:
    # slot times are exact multiples of 1/R; the epsilon absorbs float error
    return np.floor((ts - start) * rate + 1e-6).astype(np.int64)


def slot_features(window: TimeWindow, params: StpParams = StpParams()) -> np.ndarray:
    """Padded size per slot of ``window``; 0 where nothing was sent."""
    n = _slot_count(params)
    if abs(window.length - params.period) > 1e-9:
        raise ValueError("window length must equal the shaping period")
    out = np.zeros(n, np.int64)
    p = window.packets
    if len(p) == 0:
        return out
    slot = _slots(p.timestamps, window.start, params.rate)
    if slot.min() < 0 or slot.max() >= n:
        raise ValueError("packet outside the window")
    if len(np.unique(slot)) != len(slot):
        raise MalformedShapingError("two packets share one slot")
    out[slot] = p.sizes
    return out


@dataclass(frozen=True)
class WindowSet:
    """Non-empty windows of one trace as a feature matrix.

    ``labels`` is ground truth (True = contains real traffic) and is only
    filled when the source trace carries cover flags.
    """

    features: np.ndarray
    starts: np.ndarray
    labels: Optional[np.ndarray] = None
    n_periods: int = 0  # emitted shaping periods, for reference

    def __len__(self) -> int:
        return len(self.features)

    @property
    def real_fraction(self) -> float:
        return float(np.mean(self.labels)) if self.labels is not None and len(self) else float("nan")


def _emission_periods(g: np.ndarray, real: np.ndarray, n: int) -> int:
    """Grid periods holding real packets plus T-long cover-only emissions.

    A cover injection starts anywhere inside a period, so it is counted by its
    length rather than by the grid periods it touches: each run of consecutive
    cover slots outside real periods counts ``ceil(len / n)``.
    """
    if len(g) == 0:
        return 0
    real_periods = np.unique(g[real] // n)
    rest = np.unique(g[~np.isin(g // n, real_periods)])
    runs = np.diff(np.concatenate(([0], np.nonzero(np.diff(rest) != 1)[0] + 1, [len(rest)])))
    return len(real_periods) + int(np.sum(-(-runs // n)))


def window_set(shaped: Trace, params: StpParams = StpParams(), offset: Optional[float] = None) -> WindowSet:
    """All non-empty windows ``[offset + (k-1)T, offset + kT)`` of ``shaped``.

    ``offset`` defaults to half a period. Labels come from ``is_cover``.
    """
    T, R = params.period, params.rate
    offset = T / 2 if offset is None else offset
    if not 0 <= offset < T:
        raise ValueError("offset must lie in [0, T)")
    n = _slot_count(params)
    shift = offset * R
    if abs(shift - round(shift)) > 1e-6:
        raise ValueError("offset must be a whole number of slots")
    g = _slots(shaped.timestamps, 0.0, R) - int(round(shift))
    win = g // n + 1
    slot = g % n
    key = win * n + slot
    if len(np.unique(key)) != len(key):
        raise MalformedShapingError("two packets share one slot; is the trace STP output?")
    uniq, row = np.unique(win, return_inverse=True)
    feats = np.zeros((len(uniq), n), np.int64)
    feats[row, slot] = shaped.sizes
    real = np.zeros(len(uniq), bool)
    np.logical_or.at(real, row, ~shaped.is_cover)
    periods = _emission_periods(g + int(round(shift)), ~shaped.is_cover, n)
    return WindowSet(feats, offset + (uniq - 1) * T, real, periods)


def label_training_windows(shaped: Trace, params: StpParams = StpParams(), offset: Optional[float] = None) -> WindowSet:
    """Non-empty windows labelled real if any packet in them is real."""
    return window_set(shaped, params, offset)


def _neighbors(train: np.ndarray, queries: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    """Indices of the ``k`` nearest training rows per query, nearest first.

    Euclidean distance; equal distances keep training order.
    """
    train = np.asarray(train, float)
    queries = np.asarray(queries, float)
    k = min(k, len(train))
    tn = np.einsum("ij,ij->i", train, train)
    out = np.empty((len(queries), k), np.int64)
    for lo in range(0, len(queries), chunk):
        q = queries[lo:lo + chunk]
        d = np.einsum("ij,ij->i", q, q)[:, None] + tn[None, :] - 2.0 * q @ train.T
        d = np.maximum(d, 0.0)
        if k < len(train):
            # everything closer than the k-th distance, then the lowest-index ties
            kth = np.partition(d, k - 1, axis=1)[:, k - 1:k]
            closer = d < kth
            tied = d == kth
            need = k - closer.sum(axis=1, keepdims=True)
            keep = closer | (tied & (np.cumsum(tied, axis=1) <= need))
            part = np.nonzero(keep)[1].reshape(len(q), k)
        else:
            part = np.broadcast_to(np.arange(len(train)), d.shape)
        pd = np.take_along_axis(d, part, axis=1)
        order = np.lexsort((part, pd), axis=1)
        out[lo:lo + len(q)] = np.take_along_axis(part, order, axis=1)
    return out


def _votes(neigh_labels: np.ndarray) -> np.ndarray:
    """Predictions for every k = 1..K at once: real wins ties."""
    real = np.cumsum(neigh_labels, axis=1)
    k = np.arange(1, neigh_labels.shape[1] + 1)
    return real * 2 >= k  # shape (queries, K)


@dataclass(frozen=True)
class KnnModel:
    features: np.ndarray
    labels: np.ndarray
    k: int
    cv_accuracy: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 1 <= self.k <= len(self.features):
            raise ValueError("k must lie in [1, training size]")

    def predict(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(features)
        if len(features) == 0:
            return np.zeros(0, bool)
        idx = _neighbors(self.features, features, self.k)
        return _votes(self.labels[idx])[:, -1]


def cross_validate(features, labels, k_min: int = 1, k_max: int = 150, folds: int = 10, rng=None) -> dict:
    """Mean accuracy per k over shuffled folds."""
    features = np.asarray(features)
    labels = np.asarray(labels, bool)
    n = len(labels)
    order = as_rng(rng).permutation(n)
    parts = np.array_split(order, folds)
    acc = np.zeros((folds, k_max))
    for f, test in enumerate(parts):
        train = np.setdiff1d(order, test, assume_unique=True)
        idx = _neighbors(features[train], features[test], k_max)
        pred = _votes(labels[train][idx])
        acc[f, : pred.shape[1]] = np.mean(pred == labels[test][:, None], axis=0)
    hits = acc.mean(axis=0)
    return {k: float(hits[k - 1]) for k in range(k_min, k_max + 1)}


def train_knn(labeled: WindowSet, k_min: int = 1, k_max: int = 150, folds: int = 10, rng=None) -> KnnModel:
    """Pick k by cross-validation (ties to the smaller k) and keep all windows."""
    labels = np.asarray(labeled.labels, bool)
    n_real = int(labels.sum())
    if n_real == 0 or n_real == len(labels):
        raise ValueError("training windows hold a single class")
    if min(n_real, len(labels) - n_real) < folds:
        raise ValueError(f"need at least {folds} windows of each class")
    k_max = min(k_max, len(labels) - int(math.ceil(len(labels) / folds)))
    cv = cross_validate(labeled.features, labels, k_min, k_max, folds, rng)
    best = max(cv, key=lambda k: (cv[k], -k))
    log.info("knn: k=%d, cv accuracy %.3f", best, cv[best])
    return KnnModel(np.asarray(labeled.features), labels, best, cv)


class WindowScore(NamedTuple):
    recall: float
    precision: float
    accuracy: float


def window_scores(truth, predicted) -> WindowScore:
    """Metrics with "real" as the positive class."""
    truth = np.asarray(truth, bool)
    predicted = np.asarray(predicted, bool)
    tp = np.sum(truth & predicted)
    recall = tp / truth.sum() if truth.any() else float("nan")
    precision = tp / predicted.sum() if predicted.any() else float("nan")
    acc = float(np.mean(truth == predicted)) if len(truth) else float("nan")
    return WindowScore(float(recall), float(precision), acc)


def classify_windows(model: KnnModel, windows: WindowSet):
    """Predicted labels and, when ground truth is present, the scores."""
    pred = model.predict(windows.features)
    score = window_scores(windows.labels, pred) if windows.labels is not None else None
    return pred, score
