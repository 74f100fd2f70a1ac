import math

import numpy as np
import pytest

from shapeprint.core import (
    EmptyFeatureError,
    PacketRecord,
    SizeHistogram,
    Trace,
    interarrival_histogram,
    joint_histogram,
    size_histogram,
    split_windows,
)


def make(ts, sizes, dev="d", duration=None):
    return Trace.from_arrays(ts, sizes, dev, duration)


def test_trace_validation():
    with pytest.raises(ValueError):
        Trace(np.array([1.0, 0.5]), np.array([10, 10]), None, None, None, 2.0)
    with pytest.raises(ValueError):
        Trace(np.array([0.5]), np.array([0]), None, None, None, 2.0)
    with pytest.raises(ValueError):
        Trace(np.array([3.0]), np.array([10]), None, None, None, 2.0)
    with pytest.raises(ValueError):
        Trace(np.array([0.5]), np.array([10, 11]), None, None, None, 2.0)


def test_trace_is_immutable():
    t = make([0.0, 1.0], [10, 20])
    with pytest.raises(ValueError):
        t.sizes[0] = 5


def test_from_arrays_sorts_stably():
    t = Trace.from_arrays([2.0, 1.0, 1.0], [30, 10, 20], ["a", "b", "c"])
    assert list(t.sizes) == [10, 20, 30]
    assert list(t.device_ids) == ["b", "c", "a"]
    assert t.duration == 2.0


def test_records_round_trip():
    recs = [PacketRecord(0.0, 60, "a"), PacketRecord(0.5, 70, "a", is_cover=True), PacketRecord(1.0, 80, "a", is_attack=True)]
    t = Trace.from_records(recs, duration=3.0)
    assert list(t) == recs
    assert t.rate == pytest.approx(1.0)


def test_between_and_for_device():
    t = Trace.from_arrays([0.0, 1.0, 2.0, 3.0], [1, 2, 3, 4], ["a", "b", "a", "b"], 4.0)
    assert list(t.between(1.0, 3.0).sizes) == [2, 3]
    assert list(t.for_device("b").sizes) == [2, 4]
    assert t.devices() == ["a", "b"]


def test_histogram_merges_and_drops_zero():
    h = SizeHistogram(np.array([5, 3, 5, 9]), np.array([1, 2, 3, 0]))
    assert h.as_dict() == {3: 2, 5: 4}
    assert h[4] == 0 and h[5] == 4 and 9 not in h


def test_histogram_addition_and_lookup():
    a = SizeHistogram.from_values([1, 1, 2])
    b = SizeHistogram.from_values([2, 3])
    c = a + b
    assert c.as_dict() == {1: 2, 2: 2, 3: 1}
    assert list(c.lookup([3, 0, 1, 99, 2])) == [1, 0, 2, 0, 2]
    big = SizeHistogram.from_mapping({10**6: 4, 5: 1})
    assert list(big.lookup([10**6, 7, 5])) == [4, 0, 1]


def test_histogram_vector_and_most_common():
    h = SizeHistogram.from_mapping({10: 3, 20: 3, 30: 5})
    assert list(h.vector(np.array([5, 10, 30]))) == [0, 3, 5]
    assert h.most_common() == [(30, 5), (10, 3), (20, 3)]


def test_interarrival_bins():
    t = make([0.0, 0.2, 1.2, 3.5, 200.0], [1, 1, 1, 1, 1])
    # gaps 0.2, 1.0, 2.3, 196.5 -> bins 1, 1, 3, 108
    assert interarrival_histogram(t).as_dict() == {1: 2, 3: 1, 108: 1}
    with pytest.raises(EmptyFeatureError):
        interarrival_histogram(make([1.0], [5]))


def test_joint_histogram_cells():
    t = make([0.0, 0.5, 3.0, 3.1], [10, 60, 120, 61])
    j = joint_histogram(t, 1.0, 50)
    assert dict(j.items()) == {(1, 1): 2, (3, 2): 1}
    table, rows, cols = j.table()
    assert rows == [1, 3] and cols == [1, 2]
    assert table.sum() == len(t) - 1


def test_split_windows_boundaries():
    t = make([0.0, 0.99, 1.0, 2.5], [1, 2, 3, 4], duration=3.0)
    w = split_windows(t, 1.0)
    assert [len(x.packets) for x in w] == [2, 1, 1]
    w = split_windows(t, 1.0, offset=0.5)
    assert [x.start for x in w] == [0.0, 0.5, 1.5, 2.5]
    assert [len(x.packets) for x in w] == [1, 2, 0, 1]
    assert sum(len(x.packets) for x in w) == len(t)
    with pytest.raises(ValueError):
        split_windows(t, 1.0, offset=1.0)


def test_size_histogram_total():
    t = make(np.linspace(0, 1, 7), [5, 5, 6, 7, 7, 7, 9])
    h = size_histogram(t)
    assert h.total == 7 and h.as_dict() == {5: 2, 6: 1, 7: 3, 9: 1}
    assert math.isclose(sum(h.normalized().values()), 1.0)
