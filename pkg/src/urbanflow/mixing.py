"""Representation, exposure and isolation of HDI categories across malls.

Counts are a (k, M) matrix ``n[a, m]``: unique visitors of category ``a``
at mall ``m``.  Category and overall totals are the row and grand sums of
that matrix, which makes the representation a proper weighted average
(``sum_b N_b / N * E_ab == 1``).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import sparse

from .numerics.stats import ZeroVarianceError, correlation_pvalue, pearson

log = logging.getLogger(__name__)


def _counts(counts):
    n = np.asarray(counts, dtype=float)
    if n.ndim != 2:
        raise ValueError("counts must be a (categories, malls) matrix")
    if np.any(n < 0):
        raise ValueError("counts must be non-negative")
    return n


def representation(counts, totals=None):
    """r[a, m] = (n[a, m] / N_a) / (n[m] / N).

    Malls with no visitors are dropped (with a warning).  ``totals`` may
    supply ``(N_a, N)``; by default they are the sums of ``counts``.
    """
    n = _counts(counts)
    nm = n.sum(axis=0)
    empty = nm == 0
    if np.any(empty):
        log.warning("excluding %d malls with no visitors", int(empty.sum()))
        n = n[:, ~empty]
        nm = nm[~empty]
    if totals is None:
        Na, N = n.sum(axis=1), n.sum()
    else:
        Na, N = np.asarray(totals[0], float), float(totals[1])
    if np.any(Na <= 0) or N <= 0:
        raise ValueError("every category needs a positive total")
    return (n / Na[:, None]) / (nm / N)[None, :]


def exposure(counts):
    """Exposure matrix ``E[a, b] = sum_m n[a, m] r[b, m] / N_a``.

    The diagonal is the isolation of each category.
    """
    n = _counts(counts)
    n = n[:, n.sum(axis=0) > 0]
    Na = n.sum(axis=1)
    if np.any(Na <= 0):
        raise ValueError("empty category")
    r = representation(n)
    # sequential accumulation over malls keeps the result independent of
    # the BLAS build (matmul may reorder or fuse the sums)
    acc = np.zeros((n.shape[0], n.shape[0]))
    for m in range(n.shape[1]):
        acc += n[:, m, None] * r[None, :, m]
    return acc / Na[:, None]


@dataclass
class ExposureMatrix:
    categories: list
    E: np.ndarray
    pvalues: np.ndarray
    category_totals: np.ndarray
    counts: np.ndarray
    B: int
    seed: int

    @property
    def isolation(self):
        return np.diag(self.E)

    def to_dict(self):
        return {
            "categories": list(self.categories),
            "E": self.E.tolist(),
            "p_values": self.pvalues.tolist(),
            "isolation": self.isolation.tolist(),
            "N_alpha": self.category_totals.tolist(),
            "n_alpha_m": self.counts.tolist(),
            "B": int(self.B),
            "seed": int(self.seed),
        }


def membership_counts(categories, incidence, k):
    """(k, M) counts from per-device category codes and a device x mall 0/1 matrix."""
    cats = np.asarray(categories, dtype=np.int64)
    onehot = sparse.csr_matrix((np.ones(cats.size), (cats, np.arange(cats.size))),
                               shape=(k, cats.size))
    return np.asarray((onehot @ incidence).todense()) if sparse.issparse(incidence) \
        else onehot @ np.asarray(incidence, float)


def _units_from_counts(counts):
    # each (category, mall) visitor becomes one independent unit
    n = np.asarray(counts).astype(np.int64)
    k, M = n.shape
    cats, malls = [], []
    for a in range(k):
        for m in range(M):
            cats.extend([a] * n[a, m])
            malls.extend([m] * n[a, m])
    inc = sparse.csr_matrix((np.ones(len(cats)), (np.arange(len(cats)), malls)),
                            shape=(len(cats), M))
    return np.asarray(cats), inc


def exposure_significance(counts=None, B=1000, seed=0, categories=None,
                          incidence=None):
    """Two-sided bootstrap p-values for every exposure entry.

    The null reassigns each device's category independently with
    probabilities equal to the observed category shares, keeping the
    device-to-mall incidence fixed.  Pass either ``counts`` (each visitor
    then counts as its own device) or per-device ``categories`` with a
    device x mall ``incidence`` matrix.  Resample ``b`` draws from its own
    child seed, so results do not depend on evaluation order.

    Returns ``(E, pvalues)``.
    """
    if B < 100:
        raise ValueError("B must be at least 100")
    if categories is None:
        n = _counts(counts)
        categories, incidence = _units_from_counts(n)
        k = n.shape[0]
    else:
        categories = np.asarray(categories, dtype=np.int64)
        incidence = sparse.csr_matrix(incidence)
        k = int(categories.max()) + 1 if counts is None else _counts(counts).shape[0]
        n = membership_counts(categories, incidence, k)
    E = exposure(n)
    probs = np.bincount(categories, minlength=k) / categories.size
    children = np.random.SeedSequence(seed).spawn(B)
    le = np.zeros((k, k))
    ge = np.zeros((k, k))
    valid = np.zeros((k, k))
    for child in children:
        rng = np.random.default_rng(child)
        fake = rng.choice(k, size=categories.size, p=probs)
        nb = membership_counts(fake, incidence, k)
        nb = nb[:, nb.sum(axis=0) > 0]
        if np.any(nb.sum(axis=1) == 0):
            continue
        Eb = exposure(nb)
        le += Eb <= E + 1e-12
        ge += Eb >= E - 1e-12
        valid += 1
    p = 2.0 * np.minimum(le + 1, ge + 1) / (valid + 1)
    return E, np.minimum(p, 1.0)


def exposure_report(counts, categories, B=1000, seed=0, device_categories=None,
                    incidence=None):
    if device_categories is None:
        E, p = exposure_significance(counts, B=B, seed=seed)
    else:
        E, p = exposure_significance(counts, B=B, seed=seed,
                                     categories=device_categories,
                                     incidence=incidence)
    n = _counts(counts)
    return ExposureMatrix(list(categories), E, p, n.sum(axis=1), n, B, seed)


def category_counts(visits, labels, categories):
    """Build the (k, M) unique-visitor matrix, the device codes and incidence.

    ``labels`` maps device_id to category label; visits of unlabeled devices
    are ignored.
    """
    pairs = visits[["device_id", "mall_id"]].drop_duplicates()
    pairs = pairs[pairs["device_id"].isin(labels.index)]
    malls = sorted(pairs["mall_id"].unique())
    devices = sorted(pairs["device_id"].unique())
    dev_idx = {d: i for i, d in enumerate(devices)}
    mall_idx = {m: i for i, m in enumerate(malls)}
    code = {c: i for i, c in enumerate(categories)}
    inc = sparse.csr_matrix(
        (np.ones(len(pairs)),
         ([dev_idx[d] for d in pairs["device_id"]],
          [mall_idx[m] for m in pairs["mall_id"]])),
        shape=(len(devices), len(malls)))
    dev_cat = np.array([code[labels[d]] for d in devices], dtype=np.int64)
    counts = membership_counts(dev_cat, inc, len(categories))
    return counts, malls, dev_cat, inc


def _safe_corr(a, b):
    try:
        r = pearson(a, b)
    except ZeroVarianceError:
        return {"r": None, "p": None, "n": len(a), "flag": "zero variance"}
    except ValueError as exc:
        return {"r": None, "p": None, "n": len(a), "flag": str(exc)}
    p = correlation_pvalue(r, len(a))
    return {"r": r, "p": None if math.isnan(p) else p, "n": len(a), "flag": None}


def hdi_gap_analysis(visits, homes, mall_location_hdi):
    """Correlate HDI gaps (visited-mall area minus residence) with HDI.

    Each visit row contributes ``mall_location_hdi[mall] - home hdi``; a
    device's gap is the mean over its visit days.  Three correlations are
    reported: device gap vs residence HDI, comuna-mean gap vs comuna HDI,
    and per-mall mean visit gap vs mall-location HDI.

    Returns ``(summary, per_device)`` where ``summary`` holds the three
    correlation dicts and the number of devices excluded for missing HDI.
    """
    v = visits.merge(homes[["device_id", "comuna_id", "hdi"]], on="device_id",
                     how="left")
    v["mall_hdi"] = v["mall_id"].map(mall_location_hdi)
    missing = v["hdi"].isna() | v["mall_hdi"].isna()
    excluded = int(v.loc[missing, "device_id"].nunique())
    v = v[~missing].copy()
    v["gap"] = v["mall_hdi"] - v["hdi"]

    dev = v.groupby("device_id").agg(comuna_id=("comuna_id", "first"),
                                     hdi=("hdi", "first"), gap=("gap", "mean"),
                                     days=("gap", "size")).reset_index()
    com = dev.groupby("comuna_id").agg(hdi=("hdi", "first"), gap=("gap", "mean"))
    mall = v.groupby("mall_id").agg(hdi=("mall_hdi", "first"), gap=("gap", "mean"))
    summary = {
        "device": _safe_corr(dev["hdi"], dev["gap"]),
        "comuna": _safe_corr(com["hdi"], com["gap"]),
        "mall": _safe_corr(mall["hdi"], mall["gap"]),
        "excluded_devices": excluded,
    }
    return summary, dev
