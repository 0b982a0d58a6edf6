"""Spectral clustering of a precomputed similarity matrix."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .._validation import check_similarity


def kmeans(X, k, rng, n_init=20, max_iter=300):
    """Lloyd's k-means with k-means++ seeding; best inertia over restarts.

    Returns ``(labels, centers, inertia)``.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    best = None
    for _ in range(n_init):
        centers = _kmeanspp(X, k, rng)
        labels = None
        for _ in range(max_iter):
            d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
            new = np.argmin(d2, axis=1)
            if labels is not None and np.array_equal(new, labels):
                break
            labels = new
            for c in range(k):
                members = X[labels == c]
                if len(members):
                    centers[c] = members.mean(axis=0)
                else:
                    # re-seed an empty cluster at the worst-fit point
                    far = np.argmax(d2[np.arange(n), labels])
                    centers[c] = X[far]
        inertia = float(((X - centers[labels]) ** 2).sum())
        if best is None or inertia < best[2] - 1e-12:
            best = (labels.copy(), centers.copy(), inertia)
    return best


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    d2 = ((X - X[idx[0]]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            nxt = int(rng.integers(n))
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        idx.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(1))
    return X[idx].copy()


def canonical_labels(labels):
    """Relabel so clusters are numbered by order of first occurrence."""
    mapping = {}
    out = np.empty(len(labels), dtype=int)
    for i, lab in enumerate(labels):
        out[i] = mapping.setdefault(lab, len(mapping))
    return out


def spectral_embedding(S, k):
    """Rows of the k smallest eigenvectors of the normalized Laplacian, unit-normed."""
    deg = S.sum(axis=1)
    if np.any(deg <= 0):
        raise ValueError("every node needs positive degree")
    dinv = 1.0 / np.sqrt(deg)
    L = np.eye(S.shape[0]) - dinv[:, None] * S * dinv[None, :]
    _, vecs = np.linalg.eigh(L)
    U = vecs[:, :k]
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return U / norms


def spectral_cluster(S, k, seed=0, n_init=20):
    S = check_similarity(S)
    n = S.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if k == 1:
        return np.zeros(n, dtype=int)
    U = spectral_embedding(S, k)
    rng = np.random.default_rng(seed)
    labels, _, _ = kmeans(U, k, rng, n_init=n_init)
    return canonical_labels(labels)


class SpectralClusterer(ClusterMixin, BaseEstimator):
    """Normalized-Laplacian spectral clustering on a precomputed affinity.

    ``fit`` takes the (n, n) similarity matrix itself; labels are numbered
    by first occurrence so equal partitions give equal label vectors.
    """

    def __init__(self, n_clusters=3, seed=0, n_init=20):
        self.n_clusters = n_clusters
        self.seed = seed
        self.n_init = n_init

    def fit(self, S, y=None):
        self.labels_ = spectral_cluster(S, self.n_clusters, self.seed, self.n_init)
        return self
