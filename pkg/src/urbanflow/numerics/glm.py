"""Poisson and logistic GLM fitting.

Both families use their canonical link, so iteratively reweighted least
squares is exactly Newton-Raphson on the log-likelihood.  The fitting
routines work on an explicit design matrix (intercept column included by
the caller); :class:`PoissonGLM` and :class:`LogisticGLM` wrap them in the
scikit-learn estimator protocol and add the intercept themselves.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_design, check_weights

Z_975 = 1.959964
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
GRAD_TOL = 1e-6
_ETA_LIMIT = 700.0
_SEPARATION_ETA = 35.0


class RankDeficientError(ValueError):
    """Raised when the design matrix does not have full column rank."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(
            "design matrix is rank deficient; collinear columns: "
            + ", ".join(self.columns))


@dataclass
class FitReport:
    """Coefficient table and likelihood diagnostics of one GLM fit."""

    family: str
    names: list
    coef: np.ndarray
    std_err: np.ndarray
    nobs: int
    llf: float
    llnull: float
    deviance: float
    pearson_chi2: float
    iterations: int
    converged: bool
    gradient_max: float
    df_model: int
    flags: list = field(default_factory=list)
    dep_var: str = "y"

    @property
    def model(self):
        return "GLM" if self.family == "Poisson" else "Logit"

    @property
    def z(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coef / self.std_err

    @property
    def pvalues(self):
        return 2.0 * stats.norm.sf(np.abs(self.z))

    @property
    def ci_low(self):
        return self.coef - Z_975 * self.std_err

    @property
    def ci_high(self):
        return self.coef + Z_975 * self.std_err

    @property
    def df_resid(self):
        return self.nobs - self.df_model - 1

    @property
    def pseudo_r2(self):
        """McFadden's pseudo R-squared, ``1 - llf / llnull``."""
        if self.llnull == 0:
            return float("nan")
        return 1.0 - self.llf / self.llnull

    @property
    def llr(self):
        return 2.0 * (self.llf - self.llnull)

    @property
    def llr_pvalue(self):
        if self.df_model <= 0:
            return float("nan")
        return float(stats.chi2.sf(self.llr, self.df_model))

    def params(self):
        return dict(zip(self.names, self.coef.tolist()))

    def row(self, name):
        i = self.names.index(name)
        return {
            "coef": float(self.coef[i]),
            "std err": float(self.std_err[i]),
            "z": float(self.z[i]),
            "P>|z|": float(self.pvalues[i]),
            "[0.025": float(self.ci_low[i]),
            "0.975]": float(self.ci_high[i]),
        }

    def to_dict(self):
        return {
            "Dep. Variable": self.dep_var,
            "Model": self.model,
            "Model Family": self.family,
            "Method": "IRLS" if self.family == "Poisson" else "MLE",
            "No. Observations": int(self.nobs),
            "Df Residuals": int(self.df_resid),
            "Df Model": int(self.df_model),
            "Log-Likelihood": _jsonable(self.llf),
            "LL-Null": _jsonable(self.llnull),
            "Deviance": _jsonable(self.deviance),
            "Pearson chi2": _jsonable(self.pearson_chi2),
            "Pseudo R-squ.": _jsonable(self.pseudo_r2),
            "LLR p-value": _jsonable(self.llr_pvalue),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "flags": list(self.flags),
            "coefficients": {n: {k: _jsonable(v) for k, v in self.row(n).items()}
                             for n in self.names},
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def summary(self):
        lines = [
            f"Dep. Variable: {self.dep_var:>11}   Model: {self.model:>21}",
            f"Model Family: {self.family:>12}   No. Observations: {self.nobs:>10}",
            f"Df Model: {self.df_model:>16}   Df Residuals: {self.df_resid:>14}",
            f"Log-Likelihood: {self.llf:>10.5g}   LL-Null: {self.llnull:>19.5g}",
            f"Deviance: {self.deviance:>16.5g}   Pearson chi2: {self.pearson_chi2:>14.4g}",
            f"Pseudo R-squ.: {self.pseudo_r2:>11.5f}   LLR p-value: {self.llr_pvalue:>15.4g}",
            f"Converged: {str(self.converged):>15}   Iterations: {self.iterations:>16}",
            "",
            f"{'':10}{'coef':>10}{'std err':>10}{'z':>10}{'P>|z|':>10}"
            f"{'[0.025':>10}{'0.975]':>10}",
        ]
        for n in self.names:
            r = self.row(n)
            lines.append(
                f"{n:10}{r['coef']:>10.4f}{r['std err']:>10.3f}{r['z']:>10.3f}"
                f"{r['P>|z|']:>10.3f}{r['[0.025']:>10.3f}{r['0.975]']:>10.3f}")
        return "\n".join(lines)


def _jsonable(v):
    v = float(v)
    return v if math.isfinite(v) else None


def collinear_columns(X, names=None, rtol=1e-10):
    """Return names of columns that are linear combinations of earlier ones."""
    X = np.asarray(X, dtype=float)
    names = names or [f"x{i}" for i in range(X.shape[1])]
    norms = np.linalg.norm(X, axis=0)
    norms[norms == 0] = 1.0
    Xs = X / norms
    bad = []
    kept = []
    for j in range(X.shape[1]):
        cand = kept + [j]
        s = np.linalg.svd(Xs[:, cand], compute_uv=False)
        if s[-1] <= rtol * max(s[0], 1.0) * max(X.shape):
            bad.append(names[j])
        else:
            kept.append(j)
    return bad


def _has_intercept(X):
    return bool(np.any(np.all(X == X[0:1, :], axis=0) & (X[0] != 0)))


# -- Poisson -----------------------------------------------------------------

def poisson_loglike(beta, X, y, weights=None):
    eta = X @ beta
    mu = np.exp(eta)
    w = 1.0 if weights is None else weights
    return float(np.sum(w * (y * eta - mu - special.gammaln(y + 1.0))))


def poisson_score(beta, X, y, weights=None):
    mu = np.exp(X @ beta)
    w = 1.0 if weights is None else weights
    return X.T @ (w * (y - mu))


def logistic_loglike(beta, X, y, weights=None):
    eta = X @ beta
    w = 1.0 if weights is None else weights
    # log p = -log(1+e^-eta), log(1-p) = -log(1+e^eta)
    return float(np.sum(w * (-y * np.logaddexp(0.0, -eta)
                             - (1.0 - y) * np.logaddexp(0.0, eta))))


def logistic_score(beta, X, y, weights=None):
    p = special.expit(X @ beta)
    w = 1.0 if weights is None else weights
    return X.T @ (w * (y - p))


def _irls(X, y, w, family, tol, max_iter):
    n, p = X.shape
    if family == "Poisson":
        mu = (y + np.average(y, weights=w)) / 2.0
        mu = np.maximum(mu, 1e-3)
        eta = np.log(mu)
    else:
        mu = (y + 0.5) / 2.0
        eta = special.logit(mu)

    beta = np.zeros(p)
    converged = False
    flags = []
    it = 0
    for it in range(1, max_iter + 1):
        if family == "Poisson":
            var = mu
        else:
            var = mu * (1.0 - mu)
        var = np.maximum(var, 1e-300)
        z = eta + (y - mu) / var
        sw = np.sqrt(w * var)
        new_beta, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        if not np.all(np.isfinite(new_beta)):
            flags.append("diverged")
            break
        delta = np.max(np.abs(new_beta - beta))
        beta = new_beta
        eta = X @ beta
        if family == "Poisson":
            if np.max(eta) > _ETA_LIMIT:
                flags.append("diverged")
                break
            mu = np.exp(eta)
        else:
            if np.max(np.abs(eta)) > _SEPARATION_ETA:
                flags.append("separation")
                break
            mu = special.expit(eta)
        if delta <= tol:
            converged = True
            break
    return beta, it, converged, flags


def _fit(family, X, y, names, weights, tol, max_iter):
    X, y, names = check_design(X, y, names)
    w = check_weights(weights, X.shape[0])
    bad = collinear_columns(X, names)
    if bad:
        raise RankDeficientError(bad)
    if family == "Poisson":
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("Poisson response must be non-negative integers")
    elif np.any((y < 0) | (y > 1)):
        raise ValueError("logistic response must lie in [0, 1]")

    beta, it, converged, flags = _irls(X, y, w, family, tol, max_iter)
    if not converged and not flags:
        flags.append("max_iter")

    eta = np.clip(X @ beta, -_ETA_LIMIT, _ETA_LIMIT)
    if family == "Poisson":
        mu = np.exp(eta)
        var = mu
        llf = poisson_loglike(beta, X, y, w)
        score = poisson_score(beta, X, y, w)
        ybar = np.average(y, weights=w)
        llnull = float(np.sum(w * (special.xlogy(y, ybar) - ybar
                                   - special.gammaln(y + 1.0))))
        dev = 2.0 * np.sum(w * (special.xlogy(y, y) - special.xlogy(y, mu)
                                - (y - mu)))
    else:
        mu = special.expit(eta)
        var = mu * (1.0 - mu)
        llf = logistic_loglike(beta, X, y, w)
        score = logistic_score(beta, X, y, w)
        ybar = np.average(y, weights=w)
        llnull = float(np.sum(w * (special.xlogy(y, ybar)
                                   + special.xlogy(1.0 - y, 1.0 - ybar))))
        dev = 2.0 * np.sum(w * (special.xlogy(y, y) - special.xlogy(y, mu)
                                + special.xlogy(1.0 - y, 1.0 - y)
                                - special.xlogy(1.0 - y, 1.0 - mu)))
    with np.errstate(divide="ignore", invalid="ignore"):
        pearson = float(np.sum(w * (y - mu) ** 2 / var))
    gradient_max = float(np.max(np.abs(score)) / np.sum(w))
    if converged and gradient_max > GRAD_TOL:
        converged = False
        flags.append("gradient")

    info = (X * (w * var)[:, None]).T @ X
    try:
        cov = np.linalg.inv(info)
        se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    except np.linalg.LinAlgError:
        se = np.full(X.shape[1], np.nan)

    df_model = X.shape[1] - (1 if _has_intercept(X) else 0)
    return FitReport(
        family=family, names=names, coef=beta, std_err=se, nobs=X.shape[0],
        llf=llf, llnull=llnull, deviance=float(dev), pearson_chi2=pearson,
        iterations=it, converged=converged, gradient_max=gradient_max,
        df_model=df_model, flags=flags)


def poisson_irls(X, y, names=None, weights=None, tol=DEFAULT_TOL,
                 max_iter=DEFAULT_MAX_ITER):
    """Fit a log-link Poisson GLM by IRLS.

    Parameters
    ----------
    X : (n, p) array
        Design matrix; include a constant column for an intercept.
    y : (n,) array of non-negative integer counts
    names : list of str, optional
        Column names used in the report and in rank-deficiency errors.
    weights : (n,) array, optional
        Frequency weights.

    Returns
    -------
    FitReport
        ``converged`` is False (with a flag) when the coefficient change
        did not drop below ``tol`` within ``max_iter`` iterations.
    """
    return _fit("Poisson", X, y, names, weights, tol, max_iter)


def logistic_newton(X, y, names=None, weights=None, tol=DEFAULT_TOL,
                    max_iter=DEFAULT_MAX_ITER):
    """Fit a logistic regression on binary or fractional responses.

    Fractional responses in [0, 1] are handled as Bernoulli quasi-likelihood,
    so proportions may be passed directly.  Perfect separation stops the
    iteration with the ``"separation"`` flag set.
    """
    return _fit("Binomial", X, y, names, weights, tol, max_iter)


class _GLMEstimator(RegressorMixin, BaseEstimator):
    _family = None

    def __init__(self, fit_intercept=True, tol=DEFAULT_TOL,
                 max_iter=DEFAULT_MAX_ITER, feature_names=None):
        self.fit_intercept = fit_intercept
        self.tol = tol
        self.max_iter = max_iter
        self.feature_names = feature_names

    def _design(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if self.fit_intercept:
            X = np.column_stack([np.ones(X.shape[0]), X])
        return X

    def fit(self, X, y, sample_weight=None):
        Xd = self._design(X)
        names = list(self.feature_names) if self.feature_names is not None \
            else [f"x{i}" for i in range(Xd.shape[1] - self.fit_intercept)]
        if self.fit_intercept:
            names = ["const"] + names
        self.report_ = _fit(self._family, Xd, y, names, sample_weight,
                            self.tol, self.max_iter)
        coef = self.report_.coef
        self.intercept_ = float(coef[0]) if self.fit_intercept else 0.0
        self.coef_ = coef[1:] if self.fit_intercept else coef
        self.n_features_in_ = Xd.shape[1] - self.fit_intercept
        return self

    def decision_function(self, X):
        check_is_fitted(self, "report_")
        return self._design(X) @ self.report_.coef


class PoissonGLM(_GLMEstimator):
    """Poisson regression with log link, fitted by IRLS.

    After ``fit`` the full :class:`FitReport` is available as ``report_``.
    """

    _family = "Poisson"

    def predict(self, X):
        return np.exp(self.decision_function(X))


class LogisticGLM(_GLMEstimator):
    """Logistic regression on binary or proportion responses (Newton MLE).

    ``predict`` returns fitted probabilities; the response is treated as a
    continuous proportion, hence the regressor mixin.
    """

    _family = "Binomial"

    def predict(self, X):
        return special.expit(self.decision_function(X))
