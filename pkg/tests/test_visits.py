import numpy as np
import pandas as pd
from hypothesis import given, settings
from hypothesis import strategies as st

from urbanflow.visits import (comuna_mall_matrix, detect_visits, filter_nonvisitors,
                              presence_histogram)

MAP = {"MA1": "M1", "MA2": "M1", "MB1": "M2"}


def ev(rows):
    return pd.DataFrame(rows, columns=["device_id", "ts", "antenna_id"])


def visit_table(rows):
    return pd.DataFrame(rows, columns=["device_id", "mall_id", "day"])


def test_repeated_events_collapse_to_one_visit():
    base = 1470067200  # 2016-08-01T16:00Z, midday in Santiago
    t = ev([("d", base + 60 * k, "MA1" if k % 2 else "MA2") for k in range(5)])
    out = detect_visits(t, MAP, "UTC-04:00")
    assert len(out) == 1


def test_two_malls_same_day():
    base = 1470067200
    out = detect_visits(ev([("d", base, "MA1"), ("d", base + 99, "MB1"),
                            ("d", base + 5, "OUT")]), MAP, "UTC-04:00")
    assert out["mall_id"].tolist() == ["M1", "M2"]


def test_local_midnight_splits_days():
    # 03:59Z and 04:01Z straddle midnight at UTC-4
    t = ev([("d", 1470023940, "MA1"), ("d", 1470024060, "MA1")])
    assert len(detect_visits(t, MAP, "UTC-04:00")) == 2
    assert len(detect_visits(t, MAP, "UTC")) == 1


def _n_visits(device, n):
    return [(device, f"M{k % 3}", f"2016-08-{k + 1:02d}") for k in range(n)]


def test_visitor_filter_boundary():
    t = visit_table(_n_visits("keep", 10) + _n_visits("drop", 11))
    customers, dropped = filter_nonvisitors(t)
    assert set(customers["device_id"]) == {"keep"}
    assert dropped == ["drop"]


def test_filter_empty_table():
    customers, dropped = filter_nonvisitors(visit_table([]))
    assert customers.empty and dropped == []


def test_histogram_single_device():
    h = presence_histogram(visit_table([("d", "M1", f"2016-08-0{k}") for k in (1, 2, 3)]))
    assert h.loc[3, 1] == 1 and h.values.sum() == 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 4), st.integers(1, 9)),
                max_size=60))
def test_histogram_pigeonhole_and_mass(rows):
    t = visit_table([(f"d{a}", f"M{b}", f"2016-08-0{c}") for a, b, c in rows])
    t = t.drop_duplicates()
    h = presence_histogram(t)
    for x in h.index:
        for y in h.columns:
            if y > x:
                assert h.loc[x, y] == 0
    if len(t):
        assert h.values.sum() == t["device_id"].nunique()


def test_comuna_matrix_single_entry():
    homes = pd.DataFrame({"device_id": ["d"], "comuna_id": ["C1"]})
    mat, flagged = comuna_mall_matrix(visit_table([("d", "M1", "2016-08-01")]), homes)
    assert mat.values.tolist() == [[1.0]] and flagged == []


def test_comuna_matrix_planted_split():
    rows, homes = [], []
    for c, share in (("C1", 0.7), ("C2", 0.3)):
        for k in range(100):
            d = f"{c}-{k}"
            homes.append((d, c))
            mall = "M1" if k < share * 100 else "M2"
            rows.append((d, mall, "2016-08-01"))
            rows.append((d, mall, "2016-08-02"))
    homes = pd.DataFrame(homes + [("lonely", "C3")], columns=["device_id", "comuna_id"])
    mat, flagged = comuna_mall_matrix(visit_table(rows), homes)
    assert np.allclose(mat.loc["C1"].values, [0.7, 0.3])
    assert np.allclose(mat.loc["C2"].values, [0.3, 0.7])
    assert flagged == ["C3"]
    sums = mat.sum(axis=1)
    assert np.allclose(sums[sums > 0], 1.0)
