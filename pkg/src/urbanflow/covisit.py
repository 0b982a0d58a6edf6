"""Mall co-visitation network, customer-profile similarity and the co-visit logit."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import sparse
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .geometry import haversine_array
from .gravity import DISTANCE_FLOOR_KM
from .numerics.glm import FitReport, logistic_newton
from .numerics.spectral import spectral_cluster
from .numerics.stats import ZeroVarianceError, ks_two_sample, spearman

log = logging.getLogger(__name__)

NETWORK_THRESHOLD = 0.10


@dataclass
class CovisitMatrix:
    malls: list
    P: np.ndarray
    visitors: np.ndarray
    shared: np.ndarray

    @property
    def undefined(self):
        return [m for m, v in zip(self.malls, self.visitors) if v == 0]

    def to_frame(self):
        return pd.DataFrame(self.P, index=pd.Index(self.malls, name="given"),
                            columns=pd.Index(self.malls, name="visits"))


def _incidence(visits, malls=None):
    pairs = visits[["device_id", "mall_id"]].drop_duplicates()
    malls = sorted(set(pairs["mall_id"]) | set(malls or ()))
    devices = sorted(pairs["device_id"].unique())
    di = {d: i for i, d in enumerate(devices)}
    mi = {m: i for i, m in enumerate(malls)}
    inc = sparse.csr_matrix(
        (np.ones(len(pairs), dtype=np.int64),
         ([di[d] for d in pairs["device_id"]], [mi[m] for m in pairs["mall_id"]])),
        shape=(len(devices), len(malls)))
    return inc, malls


def covisit_matrix(visits, malls=None):
    """p(j | i) = |V_i & V_j| / |V_i| over unique visitor sets.

    Rows and columns of malls without visitors are NaN and listed in
    ``CovisitMatrix.undefined``.
    """
    inc, names = _incidence(visits, malls)
    shared = np.asarray((inc.T @ inc).todense(), dtype=np.int64)
    size = np.diag(shared).copy()
    P = np.full(shared.shape, np.nan)
    ok = size > 0
    P[ok] = shared[ok] / size[ok, None]
    P[:, ~ok] = np.nan
    return CovisitMatrix(names, P, size, shared)


@dataclass
class SimilarityMatrix:
    malls: list
    S: np.ndarray
    mode: str

    def to_frame(self):
        return pd.DataFrame(self.S, index=pd.Index(self.malls, name="mall_id"),
                            columns=self.malls)


def visitor_hdi_samples(visits, homes):
    pairs = visits[["device_id", "mall_id"]].drop_duplicates()
    pairs = pairs.merge(homes[["device_id", "hdi"]], on="device_id")
    pairs = pairs[pairs["hdi"].notna()]
    return {m: g["hdi"].to_numpy(float) for m, g in pairs.groupby("mall_id", sort=True)}


def similarity_from_samples(samples, mode="similarity"):
    if mode not in ("similarity", "distance"):
        raise ValueError(f"unknown similarity mode {mode!r}")
    malls = sorted(samples)
    for m in malls:
        if len(samples[m]) < 2:
            raise ValueError(f"mall {m} has fewer than 2 visitors with HDI")
    k = len(malls)
    D = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            D[i, j] = D[j, i] = ks_two_sample(samples[malls[i]], samples[malls[j]])
    S = 1.0 - D if mode == "similarity" else D
    return SimilarityMatrix(malls, S, mode)


def similarity_matrix(visits, homes, mode="similarity"):
    """Pairwise KS distance between malls' visitor-HDI samples.

    ``mode="similarity"`` returns ``1 - D`` (unit diagonal); ``"distance"``
    returns ``D`` itself.
    """
    return similarity_from_samples(visitor_hdi_samples(visits, homes), mode)


def mall_distances(malls, floor=DISTANCE_FLOOR_KM):
    c = np.array([m.centroid for m in malls])
    D = haversine_array(c[:, None, 0], c[:, None, 1], c[None, :, 0], c[None, :, 1])
    return np.maximum(D, floor)


def pair_table(P, S, sizes, distances, malls, min_p=None, visitors=None):
    """Ordered pairs i != j with the logit response and regressors.

    Pairs with ``S == 0`` cannot enter ``log S`` and are dropped; their count
    is returned alongside the table.  ``min_p`` keeps only pairs whose
    p(j|i) reaches the threshold.
    """
    rows = []
    dropped = 0
    m = len(malls)
    for i in range(m):
        for j in range(m):
            if i == j or not np.isfinite(P[i, j]):
                continue
            if min_p is not None and P[i, j] < min_p:
                continue
            if S[i, j] <= 0:
                dropped += 1
                continue
            rows.append((malls[i], malls[j], P[i, j], sizes[j], S[i, j],
                         distances[i, j],
                         visitors[i] if visitors is not None else 1))
    t = pd.DataFrame(rows, columns=["mall_i", "mall_j", "p", "M_j", "S", "D_km",
                                    "visitors_i"])
    return t, dropped


class CovisitLogit(RegressorMixin, BaseEstimator):
    """Logit of p(j|i) on ``log M_j``, ``log S_ij`` and ``-log D_ij``.

    ``X`` holds columns ``M_j, S, D_km`` (DataFrame or array in that order);
    ``include_similarity=False`` fits the reduced model without ``log S``.
    """

    def __init__(self, include_similarity=True):
        self.include_similarity = include_similarity

    @property
    def names(self):
        return ["logK", "beta"] + (["lambda"] if self.include_similarity else []) \
            + ["gamma"]

    def _design(self, X):
        if isinstance(X, pd.DataFrame):
            X = X[["M_j", "S", "D_km"]].to_numpy(float)
        X = np.asarray(X, dtype=float)
        if np.any(X <= 0):
            raise ValueError("M_j, S and D must be positive")
        parts = [np.ones(len(X)), np.log(X[:, 0])]
        if self.include_similarity:
            parts.append(np.log(X[:, 1]))
        parts.append(-np.log(X[:, 2]))
        return np.column_stack(parts)

    def fit(self, X, y=None, sample_weight=None):
        if y is None:
            y = X["p"].to_numpy(float)
        self.report_ = logistic_newton(self._design(X), y, names=self.names,
                                       weights=sample_weight)
        self.report_.dep_var = "p_ij"
        self.coef_ = self.report_.coef
        return self

    def predict(self, X):
        check_is_fitted(self, "report_")
        return 1.0 / (1.0 + np.exp(-self._design(X) @ self.coef_))


def _r2(obs, pred):
    ss = np.sum((obs - obs.mean()) ** 2)
    return float(1.0 - np.sum((obs - pred) ** 2) / ss) if ss > 0 else None


@dataclass
class CovisitFit:
    full: FitReport
    reduced: FitReport
    table: pd.DataFrame
    predicted: np.ndarray
    predicted_reduced: np.ndarray
    excluded_pairs: int

    def to_dict(self):
        obs = self.table["p"].to_numpy(float)
        try:
            rho = spearman(obs, self.predicted)
        except (ZeroVarianceError, ValueError):
            rho = None
        return {
            "full": self.full.to_dict(),
            "reduced": self.reduced.to_dict(),
            "spearman_predicted_vs_real": rho,
            "r2_full": _r2(obs, self.predicted),
            "r2_reduced": _r2(obs, self.predicted_reduced),
            "excluded_pairs": self.excluded_pairs,
            "n_pairs": int(len(obs)),
        }


def fit_covisit_logit(P, S, malls, distances, min_p=None, weighted=False):
    """Fit full and reduced co-visitation logits over ordered mall pairs.

    Parameters
    ----------
    P : CovisitMatrix
    S : SimilarityMatrix
        Either mode; pairs with zero entry are excluded and counted.
    malls : list of MallSite
        Must cover ``P.malls``; supplies rental areas and centroids.
    distances : (m, m) array or None
        Mall-to-mall distances in km; computed from centroids when None.
    min_p : float, optional
        Restrict to pairs with p(j|i) >= min_p.
    weighted : bool
        Weight each pair by the visitor count of the conditioning mall.
    """
    by_id = {m.mall_id: m for m in malls}
    order = [by_id[m] for m in P.malls]
    if list(S.malls) != list(P.malls):
        idx = [S.malls.index(m) for m in P.malls]
        Sm = S.S[np.ix_(idx, idx)]
    else:
        Sm = S.S
    D = mall_distances(order) if distances is None else np.asarray(distances, float)
    sizes = np.array([m.rental_sqm for m in order])
    table, dropped = pair_table(P.P, Sm, sizes, D, P.malls, min_p, P.visitors)
    if dropped:
        log.info("excluded %d pairs with zero similarity", dropped)
    w = table["visitors_i"].to_numpy(float) if weighted else None
    full = CovisitLogit(True).fit(table, sample_weight=w)
    reduced = CovisitLogit(False).fit(table, sample_weight=w)
    return CovisitFit(full.report_, reduced.report_, table, full.predict(table),
                      reduced.predict(table), dropped)


def cluster_malls(S, k=3, seed=0, visitor_hdi=None):
    """Spectral clusters of a similarity-mode matrix with a per-cluster summary."""
    if S.mode != "similarity":
        raise ValueError("clustering needs a similarity-mode matrix")
    labels = spectral_cluster(S.S, k, seed)
    summary = []
    for c in range(int(labels.max()) + 1):
        members = [m for m, lab in zip(S.malls, labels) if lab == c]
        entry = {"cluster": c, "malls": members}
        if visitor_hdi is not None:
            vals = np.concatenate([visitor_hdi[m] for m in members if m in visitor_hdi])
            entry["mean_visitor_hdi"] = float(vals.mean()) if vals.size else None
        summary.append(entry)
    return labels, summary


def export_network(P, threshold=NETWORK_THRESHOLD):
    """Directed edges i -> j with p(j|i) >= threshold, self-loops excluded."""
    edges = []
    for i, a in enumerate(P.malls):
        for j, b in enumerate(P.malls):
            if i != j and np.isfinite(P.P[i, j]) and P.P[i, j] >= threshold:
                edges.append({"source": a, "target": b, "weight": float(P.P[i, j])})
    return edges


def network_dot(edges, malls):
    lines = ["digraph covisit {"]
    lines += [f'  "{m}";' for m in malls]
    lines += [f'  "{e["source"]}" -> "{e["target"]}" [weight={e["weight"]:.6f}, '
              f'penwidth={1 + 9 * e["weight"]:.3f}];' for e in edges]
    lines.append("}")
    return "\n".join(lines) + "\n"


def network_json(edges, malls):
    return json.dumps({"nodes": list(malls), "edges": edges}, indent=2)


def customer_mall_hdi_density(visits, homes, mall_mean_hdi):
    """(customer HDI, mall mean-visitor HDI) pairs, one per visit row."""
    v = visits.merge(homes[["device_id", "hdi"]], on="device_id")
    v["mall_hdi"] = v["mall_id"].map(mall_mean_hdi)
    v = v.dropna(subset=["hdi", "mall_hdi"])
    return v["hdi"].to_numpy(float), v["mall_hdi"].to_numpy(float)
