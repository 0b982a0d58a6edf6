"""Input validation helpers shared across the package."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_design(X, y, names=None):
    X = check_array(X, dtype=float, ensure_2d=True)
    y = check_array(y, dtype=float, ensure_2d=False)
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise ValueError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    n, p = X.shape
    if n < p:
        raise ValueError(f"need at least as many rows as columns, got {n} < {p}")
    if names is None:
        names = [f"x{i}" for i in range(p)]
    names = list(names)
    if len(names) != p:
        raise ValueError(f"{len(names)} names for {p} columns")
    if len(set(names)) != p:
        raise ValueError(f"column names must be unique: {names}")
    return X, y, names


def check_weights(weights, n):
    if weights is None:
        return np.ones(n)
    w = check_array(weights, dtype=float, ensure_2d=False)
    if w.shape != (n,):
        raise ValueError(f"weights have shape {w.shape}, expected ({n},)")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    return w


def check_sample(a, name="sample"):
    a = np.asarray(a, dtype=float).ravel()
    if a.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_paired(a, b, min_len=3):
    a = check_sample(a, "a")
    b = check_sample(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < min_len:
        raise ValueError(f"need at least {min_len} pairs, got {a.size}")
    return a, b


def check_similarity(S):
    S = check_array(S, dtype=float)
    if S.shape[0] != S.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {S.shape}")
    if not np.allclose(S, S.T, atol=1e-12):
        raise ValueError("similarity matrix must be symmetric")
    if np.any(S < 0) or np.any(S > 1):
        raise ValueError("similarity entries must lie in [0, 1]")
    return S


def check_latlon(lat, lon):
    lat = float(lat)
    lon = float(lon)
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        raise ValueError(f"coordinates out of range: ({lat}, {lon})")
    return lat, lon
