import numpy as np
import pytest

from shapeprint.core import size_histogram
from shapeprint.metrics import cosine_distance
from shapeprint.synth import DeviceSpec, check_corpus, default_corpus, spec_histogram, synth_device


def test_default_corpus_is_stable_and_valid():
    a, b = default_corpus(), default_corpus()
    assert a == b and len(a) == 14
    assert len({s.device_id for s in a}) == 14
    check_corpus(a)


def test_corpus_distributions_normalized():
    for spec in default_corpus():
        assert sum(spec.distribution().values()) == pytest.approx(1.0)
        assert spec_histogram(spec).total > 0


def test_synth_matches_long_run_distribution():
    spec = default_corpus()[0]
    t = synth_device(spec, 36000.0, 0)
    assert t.devices() == [spec.device_id]
    assert t.timestamps.max() < 36000.0
    assert cosine_distance(size_histogram(t), spec.distribution()) < 0.01
    expected = spec.rate * spec.duty_cycle + spec.duty_cycle / spec.burst_seconds + spec.poll_rate
    assert t.rate == pytest.approx(expected, rel=0.1)


def test_synth_deterministic_per_key():
    spec = default_corpus()[3]
    assert synth_device(spec, 600.0, (1, 2)) == synth_device(spec, 600.0, (1, 2))
    assert synth_device(spec, 600.0, (1, 2)) != synth_device(spec, 600.0, (1, 3))


def test_polling_is_periodic():
    spec = DeviceSpec("p", ((100, 1.0),), 1.0, 1.0, 0.001, None, 10.0, 3, 0.1)
    t = synth_device(spec, 1000.0, 0)
    # about one poll (3 packets) per interval
    assert len(t) == pytest.approx(300, abs=30)
    # polls start one interval apart, give or take the jitter
    ts = t.timestamps
    starts = ts[np.concatenate([[True], np.diff(ts) > 2.0])]
    gaps = np.diff(starts)
    assert gaps.min() >= 10.0 * (1 - 0.5) - 0.3 and gaps.max() <= 10.0 * (1 + 0.5) + 0.3


def test_spec_validation():
    with pytest.raises(ValueError):
        DeviceSpec("x", ((1, 0.5),), 1.0)
    with pytest.raises(ValueError):
        DeviceSpec("x", ((1, 1.0),), 0.0)
    with pytest.raises(ValueError):
        DeviceSpec("x", ((1, 1.0),), 1.0, poll_interval=-1.0)


def test_check_corpus_rejects_twins():
    s = DeviceSpec("a", ((1, 0.5), (2, 0.5)), 1.0)
    with pytest.raises(ValueError):
        check_corpus([s, DeviceSpec("b", ((1, 0.5), (2, 0.5)), 1.0)])
