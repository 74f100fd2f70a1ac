"""Distances between frequency vectors and the chi-squared independence test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import SizeHistogram, Trace, joint_histogram


class UndefinedDistanceError(ValueError):
    """A distance was requested for an all-zero vector."""


class UndefinedDivergenceError(ValueError):
    """KL(p||q) with q(x) = 0 where p(x) > 0."""


class IndependenceUntestableError(ValueError):
    """Bin merging collapsed the contingency table to one row or column."""


def aligned(u, v):
    """Return ``u`` and ``v`` as dense float arrays over the union of their keys.

    Accepts mappings (dict, SizeHistogram, JointHistogram) or equal-length
    array-likes.
    """
    if isinstance(u, SizeHistogram) and isinstance(v, SizeHistogram):
        index = np.union1d(u.sizes, v.sizes)
        return u.vector(index), v.vector(index)
    if hasattr(u, "items") and hasattr(v, "items"):
        du, dv = dict(u.items()), dict(v.items())
        keys = list(du.keys() | dv.keys())
        return (
            np.array([du.get(k, 0) for k in keys], dtype=np.float64),
            np.array([dv.get(k, 0) for k in keys], dtype=np.float64),
        )
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("array inputs must share a shape")
    return a.ravel(), b.ravel()


def cosine_distance(u, v) -> float:
    """``1 - u.v / (|u||v|)``; scale-invariant in both arguments."""
    a, b = aligned(u, v)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedDistanceError("cosine distance of a zero vector")
    return float(min(1.0, max(0.0, 1.0 - float(a @ b) / (na * nb))))


def _kl_bits(p: np.ndarray, q: np.ndarray) -> float:
    m = p > 0
    if np.any(q[m] <= 0):
        raise UndefinedDivergenceError("q is zero where p has mass")
    return float(np.sum(p[m] * np.log2(p[m] / q[m])))


def kl_divergence(p, q) -> float:
    """Base-2 KL divergence of two normalized vectors."""
    a, b = aligned(p, q)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("distributions must be non-negative")
    if not (math.isclose(a.sum(), 1.0, abs_tol=1e-9) and math.isclose(b.sum(), 1.0, abs_tol=1e-9)):
        raise ValueError("kl_divergence expects normalized inputs")
    return max(0.0, _kl_bits(a, b))


def jsd(u, v) -> float:
    """Jensen-Shannon distance (square root of the base-2 divergence), in [0, 1]."""
    a, b = aligned(u, v)
    sa, sb = a.sum(), b.sum()
    if sa <= 0 or sb <= 0:
        raise UndefinedDistanceError("jsd of a zero vector")
    a, b = a / sa, b / sb
    m = 0.5 * (a + b)
    d = 0.5 * _kl_bits(a, m) + 0.5 * _kl_bits(b, m)
    return float(math.sqrt(min(1.0, max(0.0, d))))


def jsd_matrix(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Pairwise JSD between the rows of two count matrices sharing a key index."""
    p = rows / rows.sum(axis=1, keepdims=True)
    q = cols / cols.sum(axis=1, keepdims=True)
    out = np.empty((len(p), len(q)))
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log2(p), 0.0).sum(axis=1)
        qlogq = np.where(q > 0, q * np.log2(q), 0.0).sum(axis=1)
        for i in range(len(p)):
            m = 0.5 * (p[i] + q)
            mlogm = np.where(m > 0, m * np.log2(m), 0.0).sum(axis=1)
            out[i] = 0.5 * (plogp[i] + qlogq) - mlogm
    return np.sqrt(np.clip(out, 0.0, 1.0))


# chi-squared


@dataclass(frozen=True)
class ChiSquaredResult:
    statistic: float
    degrees_of_freedom: int
    critical_value_95: float
    reject_independence: bool
    final_time_bin_width: float
    final_size_bin_width: int
    pct_expected_ge_5: float


def chi2_critical_value(df: int, alpha: float = 0.05) -> float:
    """Upper ``alpha`` quantile of the chi-squared law with ``df`` degrees of freedom."""
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    return float(stats.chi2.ppf(1.0 - alpha, df))


def wilson_hilferty(df: int, alpha: float = 0.05) -> float:
    """Closed-form approximation of the same quantile, accurate for large ``df``."""
    z = stats.norm.ppf(1.0 - alpha)
    h = 2.0 / (9.0 * df)
    return float(df * (1.0 - h + z * math.sqrt(h)) ** 3)


def expected_counts(observed: np.ndarray) -> np.ndarray:
    observed = np.asarray(observed, dtype=np.float64)
    n = observed.sum()
    return np.outer(observed.sum(axis=1), observed.sum(axis=0)) / n


def pearson_statistic(observed) -> tuple:
    """Pearson statistic and degrees of freedom after dropping empty rows/columns."""
    o = np.asarray(observed, dtype=np.float64)
    o = o[o.sum(axis=1) > 0][:, o.sum(axis=0) > 0]
    r, c = o.shape
    if r < 2 or c < 2:
        raise IndependenceUntestableError(f"table is {r}x{c}; need at least 2x2")
    e = expected_counts(o)
    return float(((o - e) ** 2 / e).sum()), (r - 1) * (c - 1)


def _table_ok(o: np.ndarray) -> tuple:
    e = expected_counts(o)
    pct = 100.0 * float(np.mean(e >= 5))
    return pct >= 80.0 and bool(np.all(e >= 1)), pct


def chi_squared_independence(
    trace: Trace,
    time_step: float = 5.0,
    size_step: int = 50,
    alpha: float = 0.05,
) -> ChiSquaredResult:
    """Test whether gaps and sizes are independent.

    Starts at ``time_step`` x ``size_step`` bins and widens both axes by one
    step per iteration until at least 80% of expected counts are >= 5 and all
    are >= 1.
    """
    k = 1
    while True:
        tw, sw = time_step * k, size_step * k
        t, _, _ = joint_histogram(trace, tw, sw).table()
        if t.shape[0] < 2 or t.shape[1] < 2:
            raise IndependenceUntestableError(
                f"table collapsed to {t.shape[0]}x{t.shape[1]} at bins {tw}s x {sw}B"
            )
        ok, pct = _table_ok(t)
        if ok:
            stat, df = pearson_statistic(t)
            crit = chi2_critical_value(df, alpha)
            return ChiSquaredResult(stat, df, crit, stat > crit, tw, sw, pct)
        k += 1
