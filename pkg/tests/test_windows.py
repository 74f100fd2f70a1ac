import numpy as np
import pytest
from sklearn.neighbors import KNeighborsClassifier

from shapeprint.core import SizeHistogram, Trace
from shapeprint.obfuscation import StpParams, stp_shape
from shapeprint.windows import (
    KnnModel,
    MalformedShapingError,
    WindowSet,
    _neighbors,
    classify_windows,
    cross_validate,
    label_training_windows,
    slot_features,
    train_knn,
    window_scores,
    window_set,
)
from shapeprint.core import TimeWindow

P = StpParams(period=1.0, rate=10.0)


def shaped_trace(seed=0, duration=600.0):
    rng = np.random.default_rng(seed)
    n = rng.poisson(0.3 * duration)
    raw = Trace.from_arrays(rng.uniform(0, duration, n), rng.choice([60, 400], n), "d", duration)
    return stp_shape(raw, StpParams(inject_prob=0.2, period=1.0, rate=10.0, max_pad=20), rng=seed)


def test_slot_features():
    pk = Trace.from_arrays([2.0, 2.3, 2.9], [5, 6, 7], "d", 3.0)
    f = slot_features(TimeWindow(2.0, 1.0, pk), P)
    assert list(f) == [5, 0, 0, 6, 0, 0, 0, 0, 0, 7]
    clash = Trace.from_arrays([2.0, 2.0], [5, 6], "d", 3.0)
    with pytest.raises(MalformedShapingError):
        slot_features(TimeWindow(2.0, 1.0, clash), P)


def test_window_set_counts_and_labels():
    t = shaped_trace()
    ws = window_set(t, P)
    assert ws.n_periods <= len(ws) <= 2 * ws.n_periods
    assert ws.features.shape[1] == 10
    # every emitted packet is in exactly one window
    assert (ws.features > 0).sum() == len(t)
    assert ws.features.sum() == t.sizes.sum()
    # a window is real iff it holds a real packet
    for start, feat, lab in zip(ws.starts, ws.features, ws.labels):
        inside = t.between(start, start + 1.0)
        assert lab == bool((~inside.is_cover).any())
        assert list(np.sort(feat[feat > 0])) == sorted(inside.sizes)


def test_window_set_aligned_offset_matches_periods():
    t = shaped_trace(1)
    ws = window_set(t, P, offset=0.0)
    grid = np.unique(np.floor(t.timestamps * P.rate + 1e-6).astype(int) // P.slots_per_period)
    assert len(ws) == len(grid)
    with pytest.raises(ValueError):
        window_set(t, P, offset=0.05)  # half a slot


def test_neighbors_order_and_ties():
    train = np.array([[0.0], [2.0], [1.0], [1.0]])
    idx = _neighbors(train, np.array([[1.0]]), 3)
    assert list(idx[0]) == [2, 3, 0]


def test_knn_matches_sklearn_on_untied_data():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(300, 5))
    y = x[:, 0] + 0.5 * rng.normal(size=300) > 0
    q = rng.normal(size=(100, 5))
    for k in (1, 3, 7, 15):
        ours = KnnModel(x, y, k).predict(q)
        ref = KNeighborsClassifier(n_neighbors=k, algorithm="brute").fit(x, y).predict(q)
        assert np.array_equal(ours, ref)


def test_knn_vote_tie_goes_to_real():
    m = KnnModel(np.array([[0.0], [2.0]]), np.array([True, False]), 2)
    assert m.predict(np.array([[1.0]]))[0]


def test_cross_validate_and_train():
    rng = np.random.default_rng(1)
    x = np.vstack([rng.normal(0, 1, (60, 3)), rng.normal(3, 1, (60, 3))])
    y = np.array([False] * 60 + [True] * 60)
    cv = cross_validate(x, y, 1, 20, 10, rng=0)
    assert set(cv) == set(range(1, 21)) and all(0 <= v <= 1 for v in cv.values())
    model = train_knn(WindowSet(x, np.arange(120.0), y), k_max=20, rng=0)
    assert cv[model.k] == max(cv.values())
    assert all(cv[k] < cv[model.k] for k in range(1, model.k))
    with pytest.raises(ValueError):
        train_knn(WindowSet(x, np.arange(120.0), np.ones(120, bool)))


def test_window_scores():
    s = window_scores([True, True, False, False], [True, False, True, False])
    assert s == (0.5, 0.5, 0.5)


def test_end_to_end_better_than_chance():
    train = label_training_windows(shaped_trace(2, 3000.0), P)
    test = label_training_windows(shaped_trace(3, 1200.0), P)
    model = train_knn(train, k_max=40, rng=0)
    _, score = classify_windows(model, test)
    majority = max(test.real_fraction, 1 - test.real_fraction)
    assert score.accuracy >= majority - 0.02


def test_cover_only_periods_track_injection_probability():
    p = StpParams(inject_prob=0.1, period=1.0, rate=10.0, max_pad=8, cover_distribution=SizeHistogram.from_values([100]))
    out = stp_shape(Trace.empty(10_000.0), p, rng=3)
    assert out.is_cover.all()
    ws = window_set(out, p)
    assert abs(ws.n_periods / 10_000 - 0.1) <= 0.01
    assert ws.n_periods <= len(ws) <= 2 * ws.n_periods
