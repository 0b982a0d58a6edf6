import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_exposure
from urbanflow.mixing import (category_counts, exposure, exposure_report,
                              exposure_significance, hdi_gap_analysis, representation)


def test_proportional_composition_is_neutral():
    n = np.outer([1, 2, 3], [5, 10, 20])
    assert np.allclose(representation(n), 1.0)
    assert np.allclose(exposure(n), 1.0)


def test_representation_hand_value():
    n = np.array([[10, 0], [0, 10]])
    r = representation(n, totals=([10, 10], 20))
    assert r[1].tolist() == [0.0, 2.0]


def test_exposure_two_groups_hand_value():
    n = np.array([[6, 4], [2, 8]])
    assert exposure(n)[0, 1] == pytest.approx(0.8333, abs=1e-4)


def test_disjoint_malls_zero_exposure():
    n = np.array([[5, 0, 0], [0, 7, 0], [0, 0, 3]])
    E = exposure(n)
    assert np.all(E[~np.eye(3, dtype=bool)] == 0)


def test_exposure_matches_double_loop_exactly():
    r = np.random.default_rng(11)
    for _ in range(100):
        k, M = r.integers(2, 5), r.integers(2, 7)
        n = r.integers(0, 12, size=(k, M))
        n[:, 0] += 1  # every category non-empty
        assert np.array_equal(exposure(n), brute_exposure(n))


@settings(max_examples=100, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(2, 5), st.integers(1, 6)),
              elements=st.integers(0, 50)))
def test_weighted_average_identity(n):
    n[:, 0] += 1
    E = exposure(n)
    Na = n.sum(axis=1)
    assert np.allclose((Na / Na.sum()) @ E.T, 1.0, atol=1e-9)
    r = representation(n)
    nm = n.sum(axis=0)
    nm = nm[nm > 0]
    assert np.allclose(r @ (nm / nm.sum()), 1.0, atol=1e-9)


def test_empty_malls_dropped():
    n = np.array([[3, 0, 1], [1, 0, 2]])
    assert representation(n).shape == (2, 2)


def test_empty_category_rejected():
    with pytest.raises(ValueError):
        exposure(np.array([[1, 2], [0, 0]]))


def test_disjoint_bootstrap_significant():
    n = np.array([[40, 0], [0, 40]])
    E, p = exposure_significance(n, B=1000, seed=1)
    assert E[0, 1] == 0 and p[0, 1] < 0.01


def test_exactly_proportional_counts_are_too_even():
    # a perfectly even split sits at the edge of the null distribution
    n = np.outer([30, 30], [20, 20, 20])
    E, p = exposure_significance(n, B=300, seed=2)
    assert np.allclose(E, 1.0)
    assert np.all(p < 0.05)


def test_null_data_gives_uniform_pvalues():
    r = np.random.default_rng(21)
    pvals, offdiag = [], []
    for rep in range(60):
        cats = r.integers(0, 2, size=120)
        malls = r.integers(0, 4, size=120)
        n = np.zeros((2, 4), int)
        np.add.at(n, (cats, malls), 1)
        E, p = exposure_significance(n, B=200, seed=rep)
        pvals.append(p[0, 1])
        offdiag.append(E[0, 1])
    pvals = np.array(pvals)
    assert np.mean(pvals < 0.05) <= 0.12
    assert 0.35 < np.mean(pvals) < 0.75
    assert 0.9 < np.mean(offdiag) < 1.05


def test_bootstrap_deterministic_and_validates_B():
    n = np.array([[5, 2], [1, 6]])
    assert np.array_equal(exposure_significance(n, B=200, seed=3)[1],
                          exposure_significance(n, B=200, seed=3)[1])
    with pytest.raises(ValueError):
        exposure_significance(n, B=10)


def test_device_level_counts_and_report():
    visits = pd.DataFrame({"device_id": ["a", "a", "b", "c"],
                           "mall_id": ["M1", "M2", "M1", "M2"],
                           "day": ["d1", "d2", "d1", "d1"]})
    labels = pd.Series({"a": "Q1", "b": "Q2", "c": "Q1"})
    counts, malls, codes, inc = category_counts(visits, labels, ["Q1", "Q2"])
    assert malls == ["M1", "M2"]
    assert counts.tolist() == [[1, 2], [1, 0]]
    rep = exposure_report(counts, ["Q1", "Q2"], B=100, seed=0,
                          device_categories=codes, incidence=inc).to_dict()
    assert rep["N_alpha"] == [3, 1]
    assert len(rep["isolation"]) == 2


def _gap_inputs(mall_hdi_of_device):
    homes = pd.DataFrame({"device_id": list(mall_hdi_of_device),
                          "comuna_id": [f"C{i}" for i in range(len(mall_hdi_of_device))],
                          "hdi": [h for h, _ in mall_hdi_of_device.values()]})
    visits = pd.DataFrame({"device_id": list(mall_hdi_of_device),
                           "mall_id": [m for _, m in mall_hdi_of_device.values()],
                           "day": "2016-08-01"})
    return visits, homes


def test_gaps_zero_when_visiting_home_comuna():
    plan = {f"d{i}": (0.6 + 0.05 * i, f"M{i}") for i in range(5)}
    visits, homes = _gap_inputs(plan)
    loc = {f"M{i}": 0.6 + 0.05 * i for i in range(5)}
    summary, dev = hdi_gap_analysis(visits, homes, loc)
    assert np.allclose(dev["gap"], 0)
    for key in ("device", "comuna", "mall"):
        assert summary[key]["flag"] == "zero variance"


def test_gap_slope_sign_recovered(rng):
    hdi = rng.uniform(0.6, 0.95, 200)
    plan = {f"d{i}": (h, f"M{i % 10}") for i, h in enumerate(hdi)}
    visits, homes = _gap_inputs(plan)
    loc = {f"M{k}": 0.8 for k in range(10)}
    summary, _ = hdi_gap_analysis(visits, homes, loc)
    assert summary["device"]["r"] < -0.99
    for key in ("device", "comuna"):
        assert -1 <= summary[key]["r"] <= 1
