import numpy as np
import pytest

from shapeprint.core import SizeHistogram, Trace
from shapeprint.fingerprint import (
    ConfusionMatrix,
    DeviceProfile,
    EmptyProfileError,
    classify_dominant,
    confusion_matrix,
    diagonal_rate,
    learn_profile,
    rank_devices,
    unique_sizes,
    with_unique_sizes,
)


def profile(dev, mapping, duration=100.0):
    h = SizeHistogram.from_mapping(mapping)
    return DeviceProfile(dev, h, h.total / duration, duration)


def test_learn_profile():
    t = Trace.from_arrays([0.0, 1.0, 2.0, 3.0], [10, 10, 20, 30], "cam", 10.0)
    p = learn_profile(t)
    assert p.device_id == "cam" and p.mean_rate == pytest.approx(0.4)
    assert p.common_sizes == ((10, 2), (20, 1), (30, 1))
    with pytest.raises(EmptyProfileError):
        learn_profile(Trace.empty(1.0))


def test_top_common_rounds_up():
    p = profile("a", {1: 5, 2: 4, 3: 3, 4: 2, 5: 1})
    assert [s for s, _ in p.top_common(80)] == [1, 2, 3, 4]
    assert [s for s, _ in p.top_common(30)] == [1, 2]
    assert p.top_common(0) == []


def test_unique_sizes():
    ps = [profile("a", {1: 1, 2: 5, 9: 3}), profile("b", {2: 1, 3: 2}), profile("c", {1: 1, 3: 1})]
    u = unique_sizes(ps)
    assert [list(x) for x in u] == [[9], [], []]
    annotated = with_unique_sizes(ps)
    assert [p.top_unique_size for p in annotated] == [9, None, None]


def test_classify_and_rank():
    ps = [profile("a", {1: 10, 2: 1}), profile("b", {2: 10, 3: 1})]
    dev, d = classify_dominant(ps, SizeHistogram.from_mapping({2: 7, 3: 1}))
    assert dev == "b" and d < 0.05
    assert [x for x, _ in rank_devices(ps, SizeHistogram.from_mapping({1: 3}))] == ["a", "b"]


def test_confusion_matrix_features():
    rng = np.random.default_rng(0)
    traces = {}
    for dev, sizes in (("a", [60, 70]), ("b", [300, 310])):
        ts = np.sort(rng.uniform(0, 100, 200))
        traces[dev] = Trace.from_arrays(ts, rng.choice(sizes, 200), dev, 100.0)
    m = confusion_matrix(traces, traces)
    assert m.labels == ("a", "b")
    assert np.allclose(np.diag(m.entries), 0.0)
    assert diagonal_rate(m) == 1.0
    mi = confusion_matrix(traces, traces, "interarrival")
    assert mi.entries.shape == (2, 2)
    with pytest.raises(ValueError):
        confusion_matrix(traces, {"a": traces["a"]})
    with pytest.raises(TypeError):
        confusion_matrix({"a": learn_profile(traces["a"])}, {"a": traces["a"]}, "interarrival")


def test_diagonal_rate_counts_strict_column_minima():
    e = np.array([[0.1, 0.5, 0.2], [0.3, 0.5, 0.2], [0.4, 0.6, 0.9]])
    # column 0: min on diagonal; column 1: tie 0.5 vs 0.5 -> miss; column 2: 0.2 < 0.9 miss
    assert diagonal_rate(ConfusionMatrix(e, ("a", "b", "c"))) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        ConfusionMatrix(np.zeros((2, 3)), ("a", "b"))
