import numpy as np
import pytest

from shapeprint import store
from shapeprint.core import Trace
from shapeprint.fingerprint import learn_profile
from shapeprint.synth import default_corpus, synth_device
from shapeprint.windows import KnnModel


def sample_trace():
    return Trace.from_arrays([0.1, 1.0 / 3, 2.5], [60, 1500, 70], ["a", None, "b"], 10.0,
                             is_cover=[False, True, False], is_attack=[False, False, True])


def test_trace_round_trip(tmp_path):
    t = sample_trace()
    store.save_trace(t, tmp_path / "t.csv")
    assert store.load_trace(tmp_path / "t.csv") == t
    big = synth_device(default_corpus()[0], 600.0, 0)
    store.save_trace(big, tmp_path / "b.csv")
    assert store.load_trace(tmp_path / "b.csv") == big


@pytest.mark.parametrize("body,line", [
    ("0.1,60,a,0\n", 3),
    ("0.1,x,a,0,0\n", 3),
    ("0.1,60,a,2,0\n", 3),
    ("0.1,60,,0,0\n", 3),
    ("# duration_s=abc\n", 3),
])
def test_trace_parse_errors(tmp_path, body, line):
    p = tmp_path / "bad.csv"
    p.write_text(store.TRACE_HEADER + "\n# duration_s=5.0\n" + body)
    with pytest.raises(store.TraceParseError) as e:
        store.load_trace(p)
    assert e.value.line_no == line


def test_trace_header_and_order_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("time,size\n")
    with pytest.raises(store.TraceParseError):
        store.load_trace(p)
    p.write_text(store.TRACE_HEADER + "\n2.0,60,a,0,0\n1.0,60,a,0,0\n")
    with pytest.raises(store.TraceParseError):
        store.load_trace(p)


def test_unstorable_device_ids(tmp_path):
    for bad in ("a,b", "-", ""):
        with pytest.raises(ValueError):
            store.save_trace(Trace.from_arrays([0.0], [1], bad, 1.0), tmp_path / "x.csv")


def test_profiles_round_trip(tmp_path):
    profs = [learn_profile(synth_device(s, 600.0, i), s.device_id) for i, s in enumerate(default_corpus()[:3])]
    store.save_profiles(profs, tmp_path / "p")
    back = store.load_profiles(tmp_path / "p")
    assert [p.device_id for p in back] == sorted(p.device_id for p in profs)
    for p in back:
        orig = next(x for x in profs if x.device_id == p.device_id)
        assert p.histogram == orig.histogram and p.mean_rate == orig.mean_rate and p.duration == orig.duration
    with pytest.raises(FileNotFoundError):
        store.load_profiles(tmp_path / "empty")


def test_corpus_and_knn_round_trip(tmp_path):
    specs = default_corpus()
    store.save_corpus(specs, tmp_path / "c.json")
    assert store.load_corpus(tmp_path / "c.json") == specs
    m = KnnModel(np.array([[1, 0, 3], [0, 2, 0]]), np.array([True, False]), 1)
    store.save_knn(m, tmp_path / "k.txt")
    back = store.load_knn(tmp_path / "k.txt")
    assert back.k == 1 and np.array_equal(back.features, m.features) and np.array_equal(back.labels, m.labels)
