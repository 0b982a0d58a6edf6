import json

import numpy as np
import pandas as pd
import pytest

from oracles import naive_ks, same_partition
from urbanflow.covisit import (CovisitLogit, SimilarityMatrix, cluster_malls,
                               covisit_matrix, customer_mall_hdi_density, export_network,
                               fit_covisit_logit, network_dot, network_json,
                               similarity_from_samples)
from urbanflow.ingest import MallSite


def visits_of(sets):
    rows = [(d, m, "2016-08-01") for m, devs in sets.items() for d in devs]
    return pd.DataFrame(rows, columns=["device_id", "mall_id", "day"])


def test_conditional_probabilities_from_sets():
    P = covisit_matrix(visits_of({"A": ["d1", "d2", "d3", "d4"], "B": ["d1", "d2"]}))
    assert P.malls == ["A", "B"]
    assert P.P[0, 1] == 0.5 and P.P[1, 0] == 1.0
    assert np.all(np.diag(P.P) == 1.0)


def test_disjoint_and_identical_sets():
    P = covisit_matrix(visits_of({"A": ["a"], "B": ["b"], "C": ["c"]}))
    assert np.all(P.P[~np.eye(3, dtype=bool)] == 0)
    P = covisit_matrix(visits_of({"A": ["x", "y"], "B": ["x", "y"]}))
    assert np.all(P.P == 1.0)


def test_mall_without_visitors_is_undefined():
    P = covisit_matrix(visits_of({"A": ["x"]}), malls=["A", "Z"])
    assert P.undefined == ["Z"]
    assert np.isnan(P.P[0, 1]) and np.isnan(P.P[1, 1])


def test_similarity_identical_and_separated():
    S = similarity_from_samples({"A": [0.7, 0.8], "B": [0.8, 0.7], "C": [0.95, 0.99]})
    assert S.S[0, 1] == 1.0
    D = similarity_from_samples({"A": [0.7, 0.8], "C": [0.95, 0.99]}, mode="distance")
    assert D.S[0, 1] == 1.0 and D.S[0, 0] == 0.0


def test_similarity_needs_two_visitors():
    with pytest.raises(ValueError):
        similarity_from_samples({"A": [0.7], "B": [0.8, 0.9]})


def test_planted_groups_show_block_structure(rng):
    centers = {"g0": 0.65, "g1": 0.8, "g2": 0.93}
    samples, group = {}, {}
    for g, c in centers.items():
        for k in range(4):
            m = f"{g}m{k}"
            samples[m] = rng.normal(c, 0.02, size=60)
            group[m] = g
    D = similarity_from_samples(samples, mode="distance")
    within, across = [], []
    for i, a in enumerate(D.malls):
        for j, b in enumerate(D.malls):
            if i < j:
                assert D.S[i, j] == naive_ks(samples[a], samples[b])
                (within if group[a] == group[b] else across).append(D.S[i, j])
    assert max(within) < min(across)


def _malls(n, rng):
    out = []
    for k in range(n):
        lat, lon = -33.4 - rng.uniform(0, 0.2), -70.6 - rng.uniform(0, 0.2)
        ring = ((lat, lon), (lat, lon + 1e-3), (lat + 1e-3, lon + 1e-3), (lat, lon))
        out.append(MallSite(f"M{k:02d}", "", ring, float(rng.uniform(7e3, 1.7e5)),
                            (lat, lon)))
    return out


def test_planted_logit_recovered(rng):
    true = {"logK": -3.0, "beta": 0.3, "lambda": 1.5, "gamma": 0.8}
    malls = _malls(16, rng)
    rows = []
    for rep in range(60):
        for i in range(16):
            for j in range(16):
                if i == j:
                    continue
                Mj = malls[j].rental_sqm
                S = rng.uniform(0.05, 1.0)
                D = rng.uniform(0.5, 30)
                eta = (true["logK"] + true["beta"] * np.log(Mj) + true["lambda"] * np.log(S)
                       - true["gamma"] * np.log(D))
                p = 1 / (1 + np.exp(-eta))
                rows.append((Mj, S, D, rng.binomial(200, p) / 200))
    t = pd.DataFrame(rows, columns=["M_j", "S", "D_km", "p"])
    assert len(t) == 240 * 60
    fit = CovisitLogit().fit(t)
    for k, v in true.items():
        assert fit.report_.params()[k] == pytest.approx(v, abs=0.1)


def test_fit_on_matrices_reports_both_models(rng):
    malls = _malls(8, rng)
    devices = [f"d{i}" for i in range(400)]
    rows = []
    for d in devices:
        for m in rng.choice(8, size=rng.integers(1, 4), replace=False):
            rows.append((d, malls[m].mall_id, "2016-08-01"))
    v = pd.DataFrame(rows, columns=["device_id", "mall_id", "day"])
    P = covisit_matrix(v)
    S = SimilarityMatrix(P.malls, np.clip(rng.uniform(0.3, 1, (8, 8)), 0, 1), "similarity")
    S.S = (S.S + S.S.T) / 2
    np.fill_diagonal(S.S, 1)
    fit = fit_covisit_logit(P, S, malls, None)
    d = fit.to_dict()
    assert d["n_pairs"] == 56
    for key in ("Pseudo R-squ.", "Log-Likelihood", "LLR p-value"):
        assert key in d["full"] and key in d["reduced"]
    assert "lambda" in d["full"]["coefficients"]
    assert "lambda" not in d["reduced"]["coefficients"]
    assert d["r2_full"] is not None and d["r2_reduced"] is not None
    json.dumps(d)


def test_zero_similarity_pairs_excluded(rng):
    malls = _malls(4, rng)
    v = visits_of({m.mall_id: [f"d{k}" for k in range(i, i + 6)]
                   for i, m in enumerate(malls)})
    P = covisit_matrix(v)
    S = rng.uniform(0.2, 0.9, (4, 4))
    S = (S + S.T) / 2
    np.fill_diagonal(S, 1)
    S[0, 1] = S[1, 0] = 0.0
    fit = fit_covisit_logit(P, SimilarityMatrix(P.malls, S, "similarity"), malls, None)
    assert fit.excluded_pairs == 2


def block_similarity(sizes, rng):
    truth = np.repeat(np.arange(len(sizes)), sizes)
    n = truth.size
    S = np.where(truth[:, None] == truth[None, :], 0.9, 0.1) + \
        np.triu(rng.uniform(-0.05, 0.05, (n, n)), 1)
    S = np.triu(S, 1) + np.triu(S, 1).T + np.eye(n)
    return S, truth


def test_cluster_malls_recovers_groups(rng):
    S, truth = block_similarity([3, 3, 3], rng)
    names = [f"M{i}" for i in range(9)]
    labels, summary = cluster_malls(SimilarityMatrix(names, S, "similarity"), 3, seed=0,
                                    visitor_hdi={m: np.array([0.7]) for m in names})
    assert same_partition(labels, truth)
    assert sorted(len(c["malls"]) for c in summary) == [3, 3, 3]


def test_cluster_k1_and_permutation(rng):
    S, _ = block_similarity([4, 4, 4], rng)
    names = [f"M{i}" for i in range(12)]
    labels, _ = cluster_malls(SimilarityMatrix(names, S, "similarity"), 1)
    assert set(labels) == {0}
    perm = rng.permutation(12)
    a, _ = cluster_malls(SimilarityMatrix(names, S, "similarity"), 3, seed=4)
    b, _ = cluster_malls(SimilarityMatrix([names[i] for i in perm],
                                          S[np.ix_(perm, perm)], "similarity"), 3, seed=4)
    assert same_partition(a[perm], b)


def test_cluster_requires_similarity_mode():
    with pytest.raises(ValueError):
        cluster_malls(SimilarityMatrix(["a", "b"], np.zeros((2, 2)), "distance"), 2)


def test_network_thresholds():
    P = covisit_matrix(visits_of({"A": list("abcdefghij"), "B": ["a"], "C": ["z"]}))
    everything = export_network(P, 0.0)
    assert len(everything) == 6
    assert export_network(P, 1.01) == []
    edges = export_network(P, 0.10)
    assert {"source": "A", "target": "B", "weight": 0.1} in edges
    assert "digraph" in network_dot(edges, P.malls)
    assert json.loads(network_json(edges, P.malls))["nodes"] == ["A", "B", "C"]


def test_customer_mall_density_samples(rng):
    homes = pd.DataFrame({"device_id": ["d"], "hdi": [0.7]})
    v = visits_of({"A": ["d"]})
    x, y = customer_mall_hdi_density(v, homes, {"A": 0.8})
    assert x.tolist() == [0.7] and y.tolist() == [0.8]

    devices = [f"d{i}" for i in range(300)]
    hdi = rng.uniform(0.6, 0.95, 300)
    homes = pd.DataFrame({"device_id": devices, "hdi": hdi})
    mall_of = np.digitize(hdi, [0.7, 0.8, 0.9])
    v = pd.DataFrame({"device_id": devices, "mall_id": [f"M{k}" for k in mall_of],
                      "day": "x"})
    means = v.assign(h=hdi).groupby("mall_id")["h"].mean().to_dict()
    x, y = customer_mall_hdi_density(v, homes, means)
    assert len(x) == len(v)
    assert np.corrcoef(x, y)[0, 1] > 0.5
