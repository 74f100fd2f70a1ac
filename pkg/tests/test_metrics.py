import math

import numpy as np
import pytest
from scipy import stats
from scipy.spatial.distance import jensenshannon

from shapeprint.core import SizeHistogram, Trace
from shapeprint.metrics import (
    IndependenceUntestableError,
    UndefinedDistanceError,
    UndefinedDivergenceError,
    chi2_critical_value,
    chi_squared_independence,
    cosine_distance,
    jsd,
    jsd_matrix,
    kl_divergence,
    pearson_statistic,
    wilson_hilferty,
)


def loop_cosine(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    return 1 - dot / (math.sqrt(sum(a * a for a in u)) * math.sqrt(sum(b * b for b in v)))


def test_cosine_matches_loop():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = rng.integers(1, 20)
        u, v = rng.integers(0, 30, n) + 1, rng.integers(0, 30, n)
        if v.sum() == 0:
            continue
        assert cosine_distance(u, v) == pytest.approx(max(0.0, loop_cosine(u, v)), abs=1e-12)


def test_cosine_on_histograms_aligns_keys():
    a = SizeHistogram.from_mapping({1: 1, 2: 1})
    b = SizeHistogram.from_mapping({2: 1, 3: 1})
    assert cosine_distance(a, b) == pytest.approx(0.5)
    assert cosine_distance({1: 2}, {1: 5}) == pytest.approx(0.0)
    with pytest.raises(UndefinedDistanceError):
        cosine_distance([0, 0], [1, 2])


def test_jsd_matches_scipy():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = rng.integers(1, 15)
        u, v = rng.random(n) * (rng.random(n) > 0.3), rng.random(n)
        if u.sum() == 0:
            continue
        assert jsd(u, v) == pytest.approx(jensenshannon(u, v, base=2), abs=1e-9)


def test_jsd_matrix_matches_pairwise():
    rng = np.random.default_rng(3)
    a = rng.integers(0, 5, (6, 8)).astype(float) + np.eye(6, 8)
    b = rng.integers(0, 5, (4, 8)).astype(float) + np.eye(4, 8)
    m = jsd_matrix(a, b)
    for i in range(6):
        for j in range(4):
            assert m[i, j] == pytest.approx(jsd(a[i], b[j]), abs=1e-9)


def test_jsd_disjoint_is_one():
    assert jsd([1, 0], [0, 1]) == pytest.approx(1.0)


def test_kl_known_value_and_errors():
    assert kl_divergence([0.5, 0.5], [0.25, 0.75]) == pytest.approx(
        0.5 * math.log2(2) + 0.5 * math.log2(0.5 / 0.75)
    )
    with pytest.raises(UndefinedDivergenceError):
        kl_divergence([0.5, 0.5], [1.0, 0.0])
    with pytest.raises(ValueError):
        kl_divergence([1.0, 1.0], [0.5, 0.5])


def test_pearson_matches_scipy():
    rng = np.random.default_rng(4)
    for _ in range(50):
        t = rng.integers(1, 40, (rng.integers(2, 6), rng.integers(2, 6)))
        stat, df = pearson_statistic(t)
        ref = stats.chi2_contingency(t, correction=False)
        assert stat == pytest.approx(ref[0], rel=1e-9)
        assert df == ref[2]


def test_pearson_drops_empty_and_rejects_collapsed():
    assert pearson_statistic([[1, 0, 2], [3, 0, 6]])[1] == 1
    with pytest.raises(IndependenceUntestableError):
        pearson_statistic([[1, 2, 3], [0, 0, 0]])


def test_critical_values_against_closed_form():
    # exact quantile for df=2 is -2 ln(alpha)
    assert chi2_critical_value(2) == pytest.approx(-2 * math.log(0.05))
    for df in (30, 60, 100):
        assert chi2_critical_value(df) == pytest.approx(wilson_hilferty(df), rel=2e-3)
    with pytest.raises(ValueError):
        chi2_critical_value(0)


def test_independent_trace_not_rejected_mostly():
    rng = np.random.default_rng(5)
    rejections = 0
    for _ in range(40):
        n = 3000
        ts = np.cumsum(rng.uniform(0.1, 20, n))
        sizes = rng.integers(60, 400, n)
        rejections += chi_squared_independence(Trace.from_arrays(ts, sizes, "d")).reject_independence
    assert rejections <= 8  # 5% nominal level


def test_bins_widen_until_valid():
    rng = np.random.default_rng(6)
    ts = np.cumsum(rng.uniform(0.1, 60, 300))
    r = chi_squared_independence(Trace.from_arrays(ts, rng.integers(60, 1500, 300), "d"))
    assert r.pct_expected_ge_5 >= 80
    assert r.final_time_bin_width / 5.0 == r.final_size_bin_width / 50


def test_single_size_is_untestable():
    ts = np.arange(100) * 3.0
    with pytest.raises(IndependenceUntestableError):
        chi_squared_independence(Trace.from_arrays(ts, np.full(100, 60), "d"))
