"""Device-day mall visits and the descriptive visit matrices."""
from __future__ import annotations

import logging

import numpy as np
import pandas as pd

from .residence import local_day_and_seconds, resolve_timezone

log = logging.getLogger(__name__)

VISIT_COLUMNS = ["device_id", "mall_id", "day"]
MAX_DAY_PRESENCES = 10


def detect_visits(events, mall_of_antenna, tz="UTC"):
    """One row per (device, mall, local day) with an event on a mall antenna."""
    tz = resolve_timezone(tz) if isinstance(tz, str) else tz
    mall = events["antenna_id"].map(mall_of_antenna)
    ev = events.loc[mall.notna(), ["device_id", "ts"]].copy()
    ev["mall_id"] = mall[mall.notna()].astype(str)
    if ev.empty:
        return pd.DataFrame(columns=VISIT_COLUMNS)
    ev["day"] = local_day_and_seconds(ev["ts"], tz)[0]
    out = ev[VISIT_COLUMNS].drop_duplicates()
    return out.sort_values(VISIT_COLUMNS, kind="mergesort").reset_index(drop=True)


def visits_per_device(table):
    return table.groupby("device_id").size()


def distinct_malls_per_device(table):
    return table.groupby("device_id")["mall_id"].nunique()


def unique_visitors_per_mall(table):
    return table.groupby("mall_id")["device_id"].nunique()


def filter_nonvisitors(table, max_day_presences=MAX_DAY_PRESENCES):
    """Drop every row of devices with more than ``max_day_presences`` visit rows.

    Returns ``(customers, discarded_device_ids)``.
    """
    if table.empty:
        return table.copy(), []
    n = visits_per_device(table)
    drop = sorted(n.index[n > max_day_presences])
    keep = ~table["device_id"].isin(set(drop))
    if drop:
        log.info("discarded %d non-visitor devices", len(drop))
    return table[keep].reset_index(drop=True), drop


def presence_histogram(table):
    """Device counts indexed by (total visit rows, distinct malls visited).

    Returns an integer DataFrame whose index is the visit count and whose
    columns are the distinct-mall count, both starting at 0.
    """
    if table.empty:
        return pd.DataFrame([[0]], index=pd.Index([0], name="visits"),
                            columns=pd.Index([0], name="malls"))
    x = visits_per_device(table)
    y = distinct_malls_per_device(table).reindex(x.index)
    H = np.zeros((x.max() + 1, y.max() + 1), dtype=np.int64)
    np.add.at(H, (x.to_numpy(), y.to_numpy()), 1)
    return pd.DataFrame(H, index=pd.Index(range(H.shape[0]), name="visits"),
                        columns=pd.Index(range(H.shape[1]), name="malls"))


def comuna_mall_matrix(table, homes, malls=None):
    """Row-normalized comuna x mall matrix of unique visitors.

    Entry (c, m) is the share of comuna c's resident-visitors (counted once
    per mall) who visited mall m.  Comunas of ``homes`` with no visitors
    get a zero row and are returned in ``flagged``.

    Returns ``(matrix, flagged)``.
    """
    pairs = table[["device_id", "mall_id"]].drop_duplicates()
    pairs = pairs.merge(homes[["device_id", "comuna_id"]], on="device_id")
    counts = pd.crosstab(pairs["comuna_id"], pairs["mall_id"])
    comunas = sorted(set(homes["comuna_id"].dropna()) | set(counts.index))
    cols = sorted(set(counts.columns) | set(malls or ()))
    counts = counts.reindex(index=comunas, columns=cols, fill_value=0)
    totals = counts.sum(axis=1)
    flagged = sorted(totals.index[totals == 0])
    mat = counts.div(totals.where(totals > 0, 1), axis=0).astype(float)
    mat.index.name = "comuna_id"
    mat.columns.name = "mall_id"
    return mat, flagged
