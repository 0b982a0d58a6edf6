"""Two-sample KS distance and correlation coefficients."""
from __future__ import annotations

import numpy as np
from scipy import stats

from .._validation import check_paired, check_sample


class ZeroVarianceError(ValueError):
    def __init__(self, what="input"):
        super().__init__(f"zero variance in {what}")


def ks_two_sample(a, b):
    """Kolmogorov-Smirnov distance between two samples.

    Returns ``sup_x |F_a(x) - F_b(x)|`` where ``F`` are the empirical CDFs.
    Both ECDFs only jump at observed values, so the supremum is attained at
    one of the pooled sample points; the sorted samples are merged there.
    """
    a = np.sort(check_sample(a, "a"))
    b = np.sort(check_sample(b, "b"))
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def midranks(x):
    """1-based ranks with ties assigned their average rank."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    # boundaries of tie groups in sorted order
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], xs.size]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def pearson(a, b):
    a, b = check_paired(a, b)
    da = a - a.mean()
    db = b - b.mean()
    sa = np.sqrt(np.dot(da, da))
    sb = np.sqrt(np.dot(db, db))
    if sa == 0:
        raise ZeroVarianceError("a")
    if sb == 0:
        raise ZeroVarianceError("b")
    r = float(np.dot(da, db) / (sa * sb))
    return min(1.0, max(-1.0, r))


def spearman(a, b):
    a, b = check_paired(a, b)
    return pearson(midranks(a), midranks(b))


def correlation_pvalue(r, n):
    """Two-sided p-value of a correlation coefficient under the t approximation."""
    if n <= 2 or not np.isfinite(r):
        return float("nan")
    if abs(r) >= 1.0:
        return 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * stats.t.sf(abs(t), n - 2))
