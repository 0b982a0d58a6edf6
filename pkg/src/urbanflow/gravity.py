"""Gravity model of flows from grid cells to malls.

Expected flows follow ``E[F_ij] = G * M_i**alpha * M_j**beta / D_ij**gamma``,
optionally with an attraction term in the HDI difference between the mall's
average customer and the origin cell, fitted as a log-link Poisson GLM.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .geometry import cell_center, haversine_array
from .numerics.glm import DEFAULT_MAX_ITER, DEFAULT_TOL, FitReport, poisson_irls
from .numerics.stats import ZeroVarianceError, pearson, spearman

log = logging.getLogger(__name__)

DISTANCE_FLOOR_KM = 0.5
OREILLY_RANGE = (1.5, 2.5)
LOG_FLOOR = 1e-3
ATTRACTION_MODES = (None, "linear", "log")
FLOW_COLUMNS = ["cell_lat", "cell_lon", "mall_id", "F", "M_i", "M_j", "D_km", "A"]


def mall_visitor_hdi(visits, homes):
    """Mean residence HDI of each mall's unique visitors."""
    pairs = visits[["device_id", "mall_id"]].drop_duplicates()
    pairs = pairs.merge(homes[["device_id", "hdi"]], on="device_id")
    return pairs.groupby("mall_id")["hdi"].mean()


def build_flow_table(visits, homes, cells, malls, distance_floor=DISTANCE_FLOOR_KM):
    """Observed cell-to-mall flows with the gravity regressors.

    ``F`` counts unique devices living in the cell that visited the mall at
    least once.  Every (populated cell, mall) pair gets a row, zero flows
    included; an unpopulated cell enters only if it has observed flow, with
    population floored to 1.
    """
    pairs = visits[["device_id", "mall_id"]].drop_duplicates()
    pairs = pairs.merge(homes[["device_id", "home_cell_lat", "home_cell_lon"]],
                        on="device_id")
    flow = pairs.groupby(["home_cell_lat", "home_cell_lon", "mall_id"]).size()
    profile = mall_visitor_hdi(visits, homes)

    info = {c.cell_id: c for c in cells}
    flow_cells = {(a, b) for a, b, _ in flow.index}
    rows = []
    for cid in sorted(set(info) | flow_cells):
        cell = info.get(cid)
        pop = cell.population if cell is not None else 0
        if pop <= 0:
            if cid not in flow_cells:
                continue
            log.warning("cell %s has zero population but observed flow; "
                        "population floored to 1", cid)
            pop = 1
        center = cell.center if cell is not None else cell_center(cid)
        hdi = cell.hdi if cell is not None else float("nan")
        for m in malls:
            d = float(haversine_array(center[0], center[1], *m.centroid))
            F = int(flow.get((cid[0], cid[1], m.mall_id), 0))
            A = profile.get(m.mall_id, np.nan) - hdi
            rows.append((cid[0], cid[1], m.mall_id, F, pop, m.rental_sqm,
                         max(d, distance_floor), A, hdi))
    return pd.DataFrame(rows, columns=FLOW_COLUMNS + ["cell_hdi"])


def attraction_regressor(A, mode):
    A = np.asarray(A, dtype=float)
    bad = np.flatnonzero(~np.isfinite(A))
    if bad.size:
        raise ValueError(f"attraction undefined on rows {bad[:20].tolist()}"
                         + (" ..." if bad.size > 20 else ""))
    if mode == "linear":
        return A
    if mode == "log":
        return -np.log(np.maximum(A, LOG_FLOOR))
    raise ValueError(f"unknown attraction mode {mode!r}")


class GravityModel(RegressorMixin, BaseEstimator):
    """Poisson gravity model.

    ``X`` is either a flow table (DataFrame with ``M_i, M_j, D_km`` and,
    for the augmented model, ``A``) or an array with those columns in that
    order.  The distance regressor enters as ``-log D`` so ``gamma`` is
    positive when flows decay with distance.

    Parameters
    ----------
    attraction : {None, "linear", "log"}
        ``"linear"`` adds ``lambda * A``; ``"log"`` adds
        ``-lambda * log(max(A, 1e-3))``.
    """

    def __init__(self, attraction=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
        self.attraction = attraction
        self.tol = tol
        self.max_iter = max_iter

    def _columns(self, X):
        if isinstance(X, pd.DataFrame):
            cols = [X["M_i"], X["M_j"], X["D_km"]]
            if self.attraction is not None:
                cols.append(X["A"])
            X = np.column_stack(cols)
        X = np.asarray(X, dtype=float)
        need = 3 + (self.attraction is not None)
        if X.ndim != 2 or X.shape[1] != need:
            raise ValueError(f"expected {need} columns, got shape {X.shape}")
        if np.any(X[:, :3] <= 0):
            raise ValueError("masses and distances must be positive")
        return X

    def _design(self, X):
        if self.attraction not in ATTRACTION_MODES:
            raise ValueError(f"unknown attraction mode {self.attraction!r}")
        X = self._columns(X)
        parts = [np.ones(len(X)), np.log(X[:, 0]), np.log(X[:, 1]), -np.log(X[:, 2])]
        if self.attraction is not None:
            parts.append(attraction_regressor(X[:, 3], self.attraction))
        return np.column_stack(parts)

    @property
    def names(self):
        base = ["logG", "alpha", "beta", "gamma"]
        return base + (["lambda"] if self.attraction is not None else [])

    def fit(self, X, y=None):
        if y is None:
            y = X["F"].to_numpy()
        D = self._design(X)
        if D.shape[0] < 4:
            raise ValueError("need at least 4 flow rows")
        self.report_ = poisson_irls(D, y, names=self.names, tol=self.tol,
                                    max_iter=self.max_iter)
        self.report_.dep_var = "F_ij"
        self.coef_ = self.report_.coef
        return self

    def predict(self, X):
        check_is_fitted(self, "report_")
        return np.exp(self._design(X) @ self.coef_)


@dataclass
class GravityFit:
    report: FitReport
    predicted: np.ndarray
    observed: np.ndarray
    pearson: float | None
    spearman: float | None
    model: GravityModel

    @property
    def params(self):
        return self.report.params()

    @property
    def ratio(self):
        p = self.params
        return oreilly_check(p["gamma"], p["beta"])[0]

    def to_dict(self):
        ratio, verdict = oreilly_check(self.params["gamma"], self.params["beta"])
        return {
            "model": "gravity" if self.model.attraction is None else "gravity+attraction",
            "attraction": self.model.attraction,
            "fit": self.report.to_dict(),
            "pearson_predicted_vs_real": self.pearson,
            "spearman_predicted_vs_real": self.spearman,
            "oreilly_ratio": ratio,
            "oreilly_within_range": verdict,
        }


def _correlations(obs, pred):
    try:
        return pearson(obs, pred), spearman(obs, pred)
    except (ZeroVarianceError, ValueError):
        return None, None


def fit_gravity(table, attraction=None):
    model = GravityModel(attraction=attraction).fit(table)
    pred = model.predict(table)
    obs = table["F"].to_numpy(dtype=float)
    r, rho = _correlations(obs, pred)
    return GravityFit(model.report_, pred, obs, r, rho, model)


def fit_gravity_augmented(table, attraction_transform="linear"):
    if attraction_transform is None:
        raise ValueError("augmented fit needs an attraction transform")
    return fit_gravity(table, attraction=attraction_transform)


def oreilly_check(gamma, beta, bounds=OREILLY_RANGE):
    """Distance-to-size exponent ratio and whether it lies in ``bounds`` (inclusive).

    Returns ``(None, None)`` when ``beta`` is zero.
    """
    if beta == 0:
        return None, None
    ratio = gamma / beta
    return ratio, bool(bounds[0] <= ratio <= bounds[1])


def fit_gravity_ols(table):
    """Log-linear OLS on positive flows; a comparison diagnostic only."""
    t = table[table["F"] > 0]
    X = np.column_stack([np.ones(len(t)), np.log(t["M_i"]), np.log(t["M_j"]),
                         -np.log(t["D_km"])])
    coef, *_ = np.linalg.lstsq(X, np.log(t["F"].to_numpy(float)), rcond=None)
    return dict(zip(["logG", "alpha", "beta", "gamma"], coef.tolist()))


def predicted_profile_distribution(fit, table):
    """Per mall, origin-cell HDI values weighted by predicted inflow.

    Returns ``{mall_id: DataFrame(hdi, weight)}``; weights of a mall sum to
    its total predicted inflow.
    """
    model = fit.model if isinstance(fit, GravityFit) else fit
    t = table.assign(weight=model.predict(table))
    out = {}
    for mall_id, grp in t.groupby("mall_id", sort=True):
        g = grp.groupby("cell_hdi", sort=True)["weight"].sum()
        out[mall_id] = pd.DataFrame({"hdi": g.index.to_numpy(float),
                                     "weight": g.to_numpy()})
    return out


def observed_profile(visits, homes):
    """Per mall, residence HDI of each unique visitor."""
    pairs = visits[["device_id", "mall_id"]].drop_duplicates()
    pairs = pairs.merge(homes[["device_id", "hdi"]], on="device_id")
    return {m: g["hdi"].to_numpy(float) for m, g in pairs.groupby("mall_id")}
