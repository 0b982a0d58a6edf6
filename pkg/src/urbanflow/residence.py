"""Home inference from night-time connections, HDI and HDI quantiles."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from datetime import date, timedelta, timezone
from fractions import Fraction
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .geometry import snap_to_grid
from .numerics.stats import pearson

MORNING_END = 8 * 3600
EVENING_START = 22 * 3600
MIN_DAY_SHARE = 0.8
MIN_TOWER_SHARE = 0.6

HOME_COLUMNS = ["device_id", "home_antenna_id", "home_cell_lat", "home_cell_lon",
                "comuna_id", "hdi", "days_observed", "top_tower_share"]

_OFFSET_RE = re.compile(r"^(?:UTC|GMT)?\s*([+-])(\d{1,2})(?::?(\d{2}))?$", re.I)


def resolve_timezone(name):
    """Timezone object for an IANA name or a fixed offset such as ``UTC-04:00``."""
    if not isinstance(name, str) or not name.strip():
        raise ValueError(f"invalid timezone {name!r}")
    s = name.strip()
    if s.upper() in ("UTC", "Z", "GMT"):
        return timezone.utc
    m = _OFFSET_RE.match(s)
    if m:
        sign, hh, mm = m.group(1), int(m.group(2)), int(m.group(3) or 0)
        if hh > 14 or mm >= 60:
            raise ValueError(f"invalid timezone offset {name!r}")
        delta = timedelta(hours=hh, minutes=mm)
        return timezone(-delta if sign == "-" else delta)
    try:
        return ZoneInfo(s)
    except (ZoneInfoNotFoundError, ValueError) as exc:
        raise ValueError(f"invalid timezone {name!r}") from exc


def local_day_and_seconds(ts, tz):
    """Split epoch seconds into local calendar day and seconds since midnight."""
    local = pd.to_datetime(np.asarray(ts, dtype=np.int64), unit="s", utc=True)
    local = local.tz_convert(tz)
    day = local.normalize().tz_localize(None).date
    secs = local.hour * 3600 + local.minute * 60 + local.second
    return np.asarray(day), np.asarray(secs)


def days_in_window(start, end):
    """Number of calendar days in the inclusive window [start, end]."""
    start = date.fromisoformat(str(start))
    end = date.fromisoformat(str(end))
    if end < start:
        raise ValueError("analysis window is empty")
    return (end - start).days + 1


def daily_endpoints(events, antennas, tz="UTC"):
    """First (before 08:00) and last (after 22:00) tower per device and local day.

    Returns a frame with ``device_id, day, first_tower, first_antenna,
    last_tower, last_antenna``; a side with no qualifying event is None and
    days with neither side are absent.
    """
    cols = ["device_id", "day", "first_tower", "first_antenna",
            "last_tower", "last_antenna"]
    if len(events) == 0:
        return pd.DataFrame(columns=cols)
    tz = resolve_timezone(tz) if isinstance(tz, str) else tz
    tower_of = dict(zip(antennas["antenna_id"], antennas["tower_id"]))
    ev = events[["device_id", "ts", "antenna_id"]].copy()
    ev = ev.sort_values(["device_id", "ts", "antenna_id"], kind="mergesort")
    ev["day"], secs = local_day_and_seconds(ev["ts"], tz)

    first = ev[secs < MORNING_END].groupby(["device_id", "day"], sort=True).first()
    last = ev[secs > EVENING_START].groupby(["device_id", "day"], sort=True).last()
    out = pd.DataFrame({"first_antenna": first["antenna_id"]}).join(
        pd.DataFrame({"last_antenna": last["antenna_id"]}), how="outer")
    out = out.reset_index()
    out = out.astype(object).where(out.notna(), None)
    out["first_tower"] = [tower_of.get(a) if a is not None else None
                          for a in out["first_antenna"]]
    out["last_tower"] = [tower_of.get(a) if a is not None else None
                         for a in out["last_antenna"]]
    return out[cols].sort_values(["device_id", "day"]).reset_index(drop=True)


@dataclass(frozen=True)
class HomeAssignment:
    device_id: str
    home_antenna_id: str
    home_cell_id: tuple
    comuna_id: str | None
    hdi: float
    days_observed: int
    days_in_period: int
    top_tower_share: float


def _mode(values):
    """Most frequent value, ties broken by the smallest value."""
    counts = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    best = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return best[0], best[1]


def infer_home(endpoints, days_in_period, min_day_share=MIN_DAY_SHARE,
               min_tower_share=MIN_TOWER_SHARE, devices=None):
    """Modal night-time tower per device, with coverage and fidelity filters.

    First and last towers of every day are pooled into one multiset.  A
    device is kept when ``days_observed / days_in_period >= min_day_share``
    and the modal tower's share of the pooled observations is at least
    ``min_tower_share``; both comparisons are exact (rational arithmetic).

    Returns ``(homes, rejected)``: ``homes`` has columns ``device_id,
    home_antenna_id, home_tower_id, days_observed, days_in_period,
    top_tower_share``; ``rejected`` maps device_id to a reason code.
    """
    day_thr = Fraction(str(min_day_share))
    tower_thr = Fraction(str(min_tower_share))
    rows = []
    rejected = {}
    seen = set()
    for dev, grp in endpoints.groupby("device_id", sort=True):
        seen.add(dev)
        towers = []
        antennas_at = []
        for col_t, col_a in (("first_tower", "first_antenna"),
                             ("last_tower", "last_antenna")):
            for t, a in zip(grp[col_t], grp[col_a]):
                if t is not None and not (isinstance(t, float) and math.isnan(t)):
                    towers.append(t)
                    antennas_at.append((t, a))
        n_days = int(grp["day"].nunique())
        if not towers:
            rejected[dev] = "no_endpoints"
            continue
        home_tower, count = _mode(towers)
        home_antenna, _ = _mode([a for t, a in antennas_at if t == home_tower])
        share = Fraction(count, len(towers))
        if Fraction(n_days, days_in_period) < day_thr:
            rejected[dev] = "low_coverage"
            continue
        if share < tower_thr:
            rejected[dev] = "low_tower_share"
            continue
        rows.append((dev, home_antenna, home_tower, n_days, days_in_period,
                     float(share)))
    for dev in devices if devices is not None else ():
        if dev not in seen:
            rejected[dev] = "no_endpoints"
    homes = pd.DataFrame(rows, columns=["device_id", "home_antenna_id",
                                        "home_tower_id", "days_observed",
                                        "days_in_period", "top_tower_share"])
    return homes, dict(sorted(rejected.items()))


def attach_geography(homes, antennas, comunas, hdi):
    """Add home grid cell, comuna and HDI columns to an inferred-home frame."""
    from .ingest import locate_comuna

    pos = antennas.set_index("antenna_id")[["lat", "lon"]]
    out = homes.copy()
    cells, coms, vals = [], [], []
    cache = {}
    for aid in out["home_antenna_id"]:
        if aid not in cache:
            lat, lon = pos.loc[aid, "lat"], pos.loc[aid, "lon"]
            com = locate_comuna(lat, lon, comunas)
            cache[aid] = (snap_to_grid(lat, lon), com, hdi.get(com, float("nan")))
        cell, com, h = cache[aid]
        cells.append(cell)
        coms.append(com)
        vals.append(h)
    out["home_cell_lat"] = [c[0] for c in cells]
    out["home_cell_lon"] = [c[1] for c in cells]
    out["comuna_id"] = coms
    out["hdi"] = vals
    return out


class HomeLocator(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`daily_endpoints` and :func:`infer_home`.

    ``fit`` takes the parsed event frame and the antenna registry; the
    retained homes are stored in ``homes_`` and the reasons for dropped
    devices in ``rejected_``.  ``transform`` maps device ids to home
    antenna ids (None for devices without a retained home).
    """

    def __init__(self, tz="UTC", days_in_period=30, min_day_share=MIN_DAY_SHARE,
                 min_tower_share=MIN_TOWER_SHARE):
        self.tz = tz
        self.days_in_period = days_in_period
        self.min_day_share = min_day_share
        self.min_tower_share = min_tower_share

    def fit(self, events, antennas):
        ends = daily_endpoints(events, antennas, self.tz)
        self.homes_, self.rejected_ = infer_home(
            ends, self.days_in_period, self.min_day_share, self.min_tower_share,
            devices=sorted(events["device_id"].unique()))
        return self

    def transform(self, device_ids):
        check_is_fitted(self, "homes_")
        lookup = dict(zip(self.homes_["device_id"], self.homes_["home_antenna_id"]))
        return np.array([lookup.get(d) for d in device_ids], dtype=object)


def compute_hdi(i_health, i_education, i_income):
    """Geometric mean of the three UN dimension indices."""
    comps = [float(i_health), float(i_education), float(i_income)]
    for c in comps:
        if not 0.0 < c <= 1.0:
            raise ValueError(f"HDI components must lie in (0, 1], got {c}")
    return math.exp(sum(math.log(c) for c in comps) / 3.0)


def census_correlation(homes, census_by_comuna):
    """Pearson r between inferred residents and census population per comuna."""
    counts = homes.groupby("comuna_id").size()
    keys = sorted(k for k in census_by_comuna if counts.get(k, 0) > 0)
    if len(keys) < 3:
        raise ValueError("need at least 3 comunas with inferred residents")
    return pearson([counts[k] for k in keys], [census_by_comuna[k] for k in keys])


@dataclass
class HdiQuantileTable:
    boundaries: np.ndarray
    counts: np.ndarray

    @property
    def labels(self):
        return [f"Q{i + 1}" for i in range(len(self.counts))]

    def intervals(self):
        b = self.boundaries
        out = [f"[{b[0]:.3g}, {b[1]:.3g}]"]
        out += [f"({b[i]:.3g}, {b[i + 1]:.3g}]" for i in range(1, len(b) - 1)]
        return out

    def to_frame(self):
        return pd.DataFrame({"quantile": self.labels, "hdi_range": self.intervals(),
                             "lower": self.boundaries[:-1], "upper": self.boundaries[1:],
                             "users": self.counts})


class HdiQuantizer(TransformerMixin, BaseEstimator):
    """Bin HDI values into ``n_bins`` near-equal-count bins.

    Cuts are placed only between distinct values, so devices sharing an HDI
    always land in the same bin.  Each cut goes to the distinct-value
    boundary whose cumulative count is closest to ``i * n / n_bins``,
    constrained so that every bin is non-empty.
    """

    def __init__(self, n_bins=5):
        self.n_bins = n_bins

    def fit(self, X, y=None):
        x = np.asarray(X, dtype=float).ravel()
        k = int(self.n_bins)
        if k < 2:
            raise ValueError("n_bins must be >= 2")
        if not np.all(np.isfinite(x)):
            raise ValueError("HDI values must be finite")
        values, counts = np.unique(x, return_counts=True)
        d = values.size
        if d < k:
            raise ValueError(f"{d} distinct HDI values, fewer than {k} bins")
        cum = np.cumsum(counts)
        n = cum[-1]
        cuts = []
        lo = 0  # smallest admissible cut index (cut after values[j])
        for i in range(1, k):
            hi = d - 1 - (k - i)
            cand = np.arange(lo, hi + 1)
            err = np.abs(cum[cand] * k - i * n)
            j = int(cand[np.argmin(err)])
            cuts.append(j)
            lo = j + 1
        upper = np.r_[values[cuts], values[-1]]
        self.boundaries_ = np.r_[values[0], upper]
        edges = np.r_[-1, cuts, d - 1]
        self.counts_ = np.diff(cum[edges[1:]], prepend=0)
        return self

    @property
    def table_(self):
        check_is_fitted(self, "boundaries_")
        return HdiQuantileTable(self.boundaries_, self.counts_)

    def transform(self, X):
        check_is_fitted(self, "boundaries_")
        x = np.asarray(X, dtype=float).ravel()
        # bin i covers (b[i], b[i+1]]; the first bin also includes b[0]
        idx = np.searchsorted(self.boundaries_[1:-1], x, side="left")
        return idx


def quantize_hdi(homes, k=5):
    """Fit quantile bins on the per-device HDI column; return table and labels."""
    q = HdiQuantizer(k).fit(homes["hdi"].to_numpy())
    idx = q.transform(homes["hdi"].to_numpy())
    labels = pd.Series([f"Q{i + 1}" for i in idx], index=homes.index)
    return q.table_, labels
