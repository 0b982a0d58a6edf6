"""Gaussian kernel density estimation in one and two dimensions."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted


def _bandwidth_factor(rule, n_eff, d):
    if rule == "scott":
        return n_eff ** (-1.0 / (d + 4))
    if rule == "silverman":
        return (n_eff * (d + 2) / 4.0) ** (-1.0 / (d + 4))
    raise ValueError(f"unknown bandwidth rule {rule!r}")


class GaussianKDE(BaseEstimator):
    """Weighted Gaussian KDE.

    Parameters
    ----------
    bandwidth : {"scott", "silverman"} or float
        A rule scales the sample covariance; a float is the kernel standard
        deviation itself (1-D) or an isotropic scale (2-D).
    """

    def __init__(self, bandwidth="scott"):
        self.bandwidth = bandwidth

    def fit(self, X, sample_weight=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] == 0:
            raise ValueError("sample is empty")
        if not np.all(np.isfinite(X)):
            raise ValueError("sample contains non-finite values")
        n, d = X.shape
        w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, float)
        if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        w = w / w.sum()

        if isinstance(self.bandwidth, str):
            n_eff = 1.0 / np.sum(w ** 2)
            mean = w @ X
            dev = X - mean
            cov = (dev * w[:, None]).T @ dev / (1.0 - np.sum(w ** 2)) \
                if n > 1 else np.zeros((d, d))
            if n == 1 or np.linalg.det(np.atleast_2d(cov)) <= 0:
                raise ValueError(
                    "zero-variance sample: pass an explicit numeric bandwidth")
            factor = _bandwidth_factor(self.bandwidth, n_eff, d)
            self.covariance_ = np.atleast_2d(cov) * factor ** 2
        else:
            h = float(self.bandwidth)
            if not h > 0:
                raise ValueError("bandwidth must be positive")
            self.covariance_ = np.eye(d) * h ** 2
        self.sample_ = X
        self.weights_ = w
        self.n_features_in_ = d
        self._prec = np.linalg.inv(self.covariance_)
        self._norm = 1.0 / np.sqrt((2 * np.pi) ** d * np.linalg.det(self.covariance_))
        return self

    def evaluate(self, points):
        """Density at ``points`` (shape (m,) for 1-D, (m, d) otherwise)."""
        check_is_fitted(self, "sample_")
        P = np.asarray(points, dtype=float)
        if P.ndim == 1 and self.n_features_in_ == 1:
            P = P[:, None]
        P = np.atleast_2d(P)
        out = np.empty(P.shape[0])
        # chunked to bound memory at (chunk x n)
        step = max(1, 2_000_000 // max(1, self.sample_.shape[0]))
        for s in range(0, P.shape[0], step):
            diff = P[s:s + step, None, :] - self.sample_[None, :, :]
            q = np.einsum("mnd,de,mne->mn", diff, self._prec, diff)
            out[s:s + step] = np.exp(-0.5 * q) @ self.weights_
        return out * self._norm

    def score_samples(self, X):
        with np.errstate(divide="ignore"):
            return np.log(self.evaluate(X))


def kde(sample, grid, bandwidth="scott", weights=None):
    """1-D Gaussian KDE of ``sample`` evaluated on ``grid``."""
    return GaussianKDE(bandwidth).fit(np.asarray(sample, float), weights).evaluate(grid)


def kde2d(x, y, grid_x, grid_y, bandwidth="scott", weights=None):
    """2-D Gaussian KDE evaluated on the mesh ``grid_x`` x ``grid_y``.

    Returns an array of shape ``(len(grid_y), len(grid_x))``.
    """
    est = GaussianKDE(bandwidth).fit(np.column_stack([x, y]), weights)
    gx, gy = np.meshgrid(np.asarray(grid_x, float), np.asarray(grid_y, float))
    dens = est.evaluate(np.column_stack([gx.ravel(), gy.ravel()]))
    return dens.reshape(gx.shape)
