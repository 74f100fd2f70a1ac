import itertools
import math

import numpy as np
import pytest

from shapeprint.aggregate import (
    CombinatorialGuardError,
    FastScoreIndex,
    estimate_count,
    fsbc,
    full_comparison_check,
    learn_count_thresholds,
    nat_aggregate,
    subset_metrics,
)
from shapeprint.core import SizeHistogram, Trace
from shapeprint.fingerprint import DeviceProfile


def profile(dev, mapping, duration=100.0):
    h = SizeHistogram.from_mapping(mapping)
    return DeviceProfile(dev, h, h.total / duration, duration)


def test_nat_aggregate_erases_ids_and_merges():
    a = Trace.from_arrays([0.0, 2.0], [1, 2], "a", 3.0, is_cover=[True, False])
    b = Trace.from_arrays([1.0], [3], "b", 5.0)
    m = nat_aggregate([a, b])
    assert list(m.sizes) == [1, 3, 2]
    assert list(m.device_ids) == [None, None, None]
    assert list(m.is_cover) == [True, False, False]
    assert m.duration == 5.0
    assert len(nat_aggregate([])) == 0


def subset_mean_rate_oracle(rates, k):
    combos = list(itertools.combinations(rates, k))
    return sum(sum(c) for c in combos) / len(combos)


def test_count_thresholds_match_enumeration():
    rates = [0.5, 1.0, 2.5, 4.0, 7.0]
    ps = [DeviceProfile(str(i), SizeHistogram.from_values([1]), r, 10.0) for i, r in enumerate(rates)]
    t = learn_count_thresholds(ps)
    for k in range(1, 6):
        assert t.avg_rate[k] == pytest.approx(subset_mean_rate_oracle(rates, k))
    assert t.thresholds[0] == pytest.approx((t.avg_rate[1] + t.avg_rate[2]) / 2)
    assert estimate_count(0.0, t) == 1
    assert estimate_count(1e9, t) == 5
    assert estimate_count(t.avg_rate[3], t) == 3


def test_subset_metrics():
    assert subset_metrics({"a", "b"}, {"a", "c", "d"}) == (0.5, 1 / 3, 0.0, False)
    assert subset_metrics({"a"}, {"a"}).exact == 1.0
    assert subset_metrics(set(), {"a"}).degenerate


def brute_force(profiles, test):
    best, best_d = None, math.inf
    keys = sorted(set().union(*[p.histogram.keys() for p in profiles], test.keys()))
    obs = np.array([test[k] for k in keys], float)
    for k in range(1, len(profiles) + 1):
        for combo in itertools.combinations(range(len(profiles)), k):
            exp = np.array([sum(profiles[i].histogram[s] / profiles[i].duration for i in combo) for s in keys])
            d = 1 - exp @ obs / (np.linalg.norm(exp) * np.linalg.norm(obs))
            if d < best_d - 1e-12:
                best, best_d = combo, d
    return frozenset(profiles[i].device_id for i in best)


def random_profiles(rng, n):
    out = []
    for i in range(n):
        sizes = rng.choice(np.arange(50, 90), 6, replace=False)
        out.append(profile(f"d{i}", {int(s): int(c) for s, c in zip(sizes, rng.integers(5, 100, 6))}))
    return out


def test_full_unrestricted_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(30):
        ps = random_profiles(rng, 5)
        thr = learn_count_thresholds(ps)
        active = rng.choice(5, rng.integers(1, 6), replace=False)
        test = SizeHistogram.from_values([])
        for i in active:
            noise = {s: max(0, c + int(rng.integers(-3, 4))) for s, c in ps[i].histogram.items()}
            test = test + SizeHistogram.from_mapping(noise)
        est = full_comparison_check(ps, test, thr, 100.0, spread=None)
        assert est.devices == brute_force(ps, test)
        assert est.score_detail["candidates"] == 31


def test_full_restricted_candidate_count():
    rng = np.random.default_rng(1)
    ps = random_profiles(rng, 6)
    thr = learn_count_thresholds(ps)
    test = ps[0].histogram + ps[1].histogram
    est = full_comparison_check(ps, test, thr, 100.0)
    k = est.score_detail["estimated_count"]
    expected = sum(math.comb(6, j) for j in range(k - 1, k + 2) if 1 <= j <= 6)
    assert est.score_detail["candidates"] == expected


def test_full_guard():
    ps = [profile(f"d{i}", {i + 1: 1}) for i in range(21)]
    with pytest.raises(CombinatorialGuardError):
        full_comparison_check(ps, SizeHistogram.from_values([1]), learn_count_thresholds(ps), 1.0)


def test_fsbc_scores_by_hand():
    # a: sizes 1 (unique, 50), 10 (30), 11 (20); b: 10 (40), 12 (60, unique)
    a = profile("a", {1: 50, 10: 30, 11: 20})
    b = profile("b", {10: 40, 12: 60})
    idx = FastScoreIndex.build([a, b], 100)
    assert list(idx.unique_size) == [1, 12]
    assert list(idx.totals) == [4, 3]
    # test holds a at full strength, no b unique size, b's size 10 short
    test = SizeHistogram.from_mapping({1: 50, 10: 30, 11: 20})
    scores, ops = idx.scores(test, 90, 100.0)
    # a: nothing missing -> 1; b: unique 12 missing, 10 (30 < 36) short, 12 short -> 1 - 3/3
    assert scores[0] == pytest.approx(1.0)
    assert scores[1] == pytest.approx(0.0)
    assert ops == 7
    thr = learn_count_thresholds([a, b])
    est = fsbc([a, b], test, 100, 90, thr, 100.0)
    assert est.devices == frozenset({"a"})


def test_fsbc_f1_keeps_top_sizes():
    a = profile("a", {1: 5, 2: 4, 3: 3, 4: 2, 5: 1})
    idx = FastScoreIndex.build([a, profile("b", {9: 1})], 40)
    assert list(idx.sizes[idx.owner == 0]) == [1, 2]
    with pytest.raises(ValueError):
        FastScoreIndex.build([a], 120)
