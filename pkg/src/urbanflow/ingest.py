"""Loading and validating the raw inputs.

Covers the event log, antenna registry, mall and comuna geometries, census
zones and HDI tables, plus the two joins that only need geometry: antennas
to malls and census zones to grid cells.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import re
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np
import pandas as pd

from ._validation import check_latlon
from .geometry import (cell_center, haversine_array, point_in_polygon,
                       ring_bbox, ring_centroid, snap_to_grid, validate_ring)

log = logging.getLogger(__name__)

EVENT_COLUMNS = ["device_id", "timestamp", "antenna_id", "bytes_down", "bytes_up"]
ANTENNA_COLUMNS = ["antenna_id", "tower_id", "lat", "lon", "indoor", "description"]
CENSUS_COLUMNS = ["zone_id", "centroid_lat", "centroid_lon", "population"]
DEFAULT_MALL_KEYWORDS = ("mall",)

_EPOCH_RE = re.compile(r"^\s*-?\d+\s*$")
_OFFSET_RE = re.compile(r"(?:Z|[+-]\d{2}:?\d{2})$")


@dataclass(frozen=True)
class EventRecord:
    device_id: str
    timestamp: datetime
    antenna_id: str
    bytes_down: int
    bytes_up: int


@dataclass(frozen=True)
class AntennaSite:
    antenna_id: str
    tower_id: str
    lat: float
    lon: float
    indoor: bool
    description: str
    mall_id: str | None = None


@dataclass(frozen=True)
class MallSite:
    mall_id: str
    name: str
    polygon: tuple
    rental_sqm: float
    centroid: tuple

    def contains(self, lat, lon):
        lat0, lon0, lat1, lon1 = ring_bbox(self.polygon)
        if not (lat0 <= lat <= lat1 and lon0 <= lon <= lon1):
            return False
        return point_in_polygon((lat, lon), self.polygon)


@dataclass(frozen=True)
class Comuna:
    comuna_id: str
    name: str
    polygon: tuple

    def contains(self, lat, lon):
        lat0, lon0, lat1, lon1 = ring_bbox(self.polygon)
        if not (lat0 <= lat <= lat1 and lon0 <= lon <= lon1):
            return False
        return point_in_polygon((lat, lon), self.polygon)


@dataclass(frozen=True)
class GridCell:
    cell_id: tuple
    center: tuple
    population: float = 0.0
    hdi: float = float("nan")


@dataclass(frozen=True)
class Rejection:
    line: int
    reason: str
    raw: str


# -- events ------------------------------------------------------------------

def _open_text(source):
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        return open(source, "r", encoding="utf-8", newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def parse_events(stream, antennas):
    """Parse an event CSV into a columnar frame plus a rejection log.

    Parameters
    ----------
    stream : path or binary/text file object
    antennas : DataFrame
        Antenna registry as returned by :func:`load_antennas`.

    Returns
    -------
    events : DataFrame
        Columns ``device_id, ts, antenna_id, bytes_down, bytes_up, line``;
        ``ts`` is integer epoch seconds (UTC).
    rejections : list of Rejection
        One entry per malformed row, with 1-based file line number.
    """
    try:
        fh = _open_text(stream)
        reader = csv.reader(fh)
        header = next(reader, None)
    except (OSError, UnicodeDecodeError) as exc:
        raise OSError(f"cannot read event stream: {exc}") from exc
    if header is None:
        raise ValueError("event stream is empty (no header)")
    header = [h.strip() for h in header]
    if header != EVENT_COLUMNS:
        raise ValueError(f"bad event header {header}, expected {EVENT_COLUMNS}")

    rejections = []
    rows = []
    lines = []
    try:
        for row in reader:
            line = reader.line_num
            if len(row) != len(EVENT_COLUMNS):
                if row:
                    rejections.append(Rejection(line, "field_count", ",".join(row)))
                continue
            rows.append(row)
            lines.append(line)
    except (csv.Error, UnicodeDecodeError) as exc:
        raise OSError(f"cannot read event stream: {exc}") from exc
    finally:
        if fh is not stream:
            fh.close()

    df = pd.DataFrame(rows, columns=EVENT_COLUMNS, dtype=str)
    df["line"] = np.asarray(lines, dtype=np.int64)
    df["device_id"] = df["device_id"].str.strip()
    df["antenna_id"] = df["antenna_id"].str.strip()
    bad = pd.Series("", index=df.index, dtype=object)

    bad[df["device_id"] == ""] = "missing_device"

    ts_raw = df["timestamp"].str.strip()
    if len(df) and _EPOCH_RE.match(ts_raw.iloc[0]):
        ts = pd.to_numeric(ts_raw, errors="coerce")
        ok = ts.notna() & ts_raw.str.match(_EPOCH_RE)
        df["ts"] = ts.where(ok, 0).astype(np.int64)
    else:
        parsed = pd.to_datetime(ts_raw, utc=True, format="ISO8601", errors="coerce")
        ok = parsed.notna() & ts_raw.str.contains(_OFFSET_RE)
        secs = parsed.astype("int64") // 10**9
        df["ts"] = secs.where(ok, 0).astype(np.int64)
    bad[(bad == "") & ~ok] = "bad_timestamp"

    for col in ("bytes_down", "bytes_up"):
        v = pd.to_numeric(df[col].str.strip(), errors="coerce")
        okb = v.notna() & (v >= 0) & (v == v.round())
        bad[(bad == "") & ~okb] = "bad_bytes"
        df[col] = v.where(okb, 0).astype(np.int64)

    known = df["antenna_id"].isin(set(antennas["antenna_id"]))
    bad[(bad == "") & ~known] = "unknown_antenna"

    rej_mask = bad != ""
    for idx, reason in bad[rej_mask].items():
        rejections.append(Rejection(lines[idx], reason, ",".join(rows[idx])))
    rejections.sort(key=lambda r: r.line)
    if rejections:
        log.warning("rejected %d event rows", len(rejections))

    out = df.loc[~rej_mask, ["device_id", "ts", "antenna_id", "bytes_down",
                             "bytes_up", "line"]].reset_index(drop=True)
    return out, rejections


def iter_records(events):
    """Yield :class:`EventRecord` objects from a parsed event frame."""
    for d, ts, a, bd, bu in events[["device_id", "ts", "antenna_id",
                                    "bytes_down", "bytes_up"]].itertuples(index=False):
        yield EventRecord(d, datetime.fromtimestamp(int(ts), tz=timezone.utc),
                          a, int(bd), int(bu))


# -- registries --------------------------------------------------------------

def _parse_bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "t", "yes", "y"):
        return True
    if s in ("0", "false", "f", "no", "n", ""):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def load_antennas(path):
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = set(ANTENNA_COLUMNS) - set(df.columns)
    if missing:
        raise ValueError(f"antennas file missing columns {sorted(missing)}")
    df = df[ANTENNA_COLUMNS].copy()
    df["lat"] = df["lat"].astype(float)
    df["lon"] = df["lon"].astype(float)
    for lat, lon in zip(df["lat"], df["lon"]):
        check_latlon(lat, lon)
    df["indoor"] = df["indoor"].map(_parse_bool)
    if df["antenna_id"].duplicated().any():
        dup = df.loc[df["antenna_id"].duplicated(), "antenna_id"].tolist()
        raise ValueError(f"duplicate antenna ids: {dup[:5]}")
    return df.reset_index(drop=True)


def _read_geojson(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("type") != "FeatureCollection":
        raise ValueError(f"{path}: expected a FeatureCollection")
    for feat in data["features"]:
        geom = feat["geometry"]
        if geom["type"] == "Polygon":
            outer = geom["coordinates"][0]
        elif geom["type"] == "MultiPolygon" and len(geom["coordinates"]) == 1:
            outer = geom["coordinates"][0][0]
        else:
            raise ValueError(f"{path}: unsupported geometry {geom['type']}")
        # GeoJSON stores (lon, lat)
        ring = tuple(validate_ring([(p[1], p[0]) for p in outer]))
        yield feat.get("properties") or {}, ring


def load_malls(path):
    malls = []
    for props, ring in _read_geojson(path):
        sqm = float(props["rental_sqm"])
        if not sqm > 0:
            raise ValueError(f"mall {props.get('mall_id')}: rental_sqm must be > 0")
        malls.append(MallSite(str(props["mall_id"]), str(props.get("name", "")),
                              ring, sqm, ring_centroid(ring)))
    ids = [m.mall_id for m in malls]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate mall ids")
    return sorted(malls, key=lambda m: m.mall_id)


def load_comunas(path):
    out = [Comuna(str(p["comuna_id"]), str(p.get("name", "")), ring)
           for p, ring in _read_geojson(path)]
    return sorted(out, key=lambda c: c.comuna_id)


def load_hdi(path):
    """Comuna HDI table; either an ``hdi`` column or the three UN components."""
    from .residence import compute_hdi

    df = pd.read_csv(path, dtype={"comuna_id": str})
    if "hdi" in df.columns:
        vals = df["hdi"].astype(float)
        if np.any((vals <= 0) | (vals > 1)):
            raise ValueError("hdi values must lie in (0, 1]")
        return dict(zip(df["comuna_id"], vals))
    comps = ["i_health", "i_education", "i_income"]
    if not set(comps) <= set(df.columns):
        raise ValueError("hdi table needs 'hdi' or i_health/i_education/i_income")
    return {c: compute_hdi(h, e, i)
            for c, h, e, i in zip(df["comuna_id"], *(df[k] for k in comps))}


def load_census(path):
    df = pd.read_csv(path, dtype={"zone_id": str})
    missing = set(CENSUS_COLUMNS) - set(df.columns)
    if missing:
        raise ValueError(f"census file missing columns {sorted(missing)}")
    if (df["population"] < 0).any():
        raise ValueError("census populations must be >= 0")
    return df[CENSUS_COLUMNS]


# -- joins -------------------------------------------------------------------

def map_antennas_to_malls(antennas, malls, keywords=DEFAULT_MALL_KEYWORDS):
    """Assign antennas to malls by polygon containment or description keyword.

    An antenna matched only by keyword goes to the mall whose name appears in
    its description, falling back to the nearest mall centroid.

    Returns
    -------
    mapping : dict antenna_id -> mall_id
    report : DataFrame
        Antennas where geometry and description disagree, with columns
        ``antenna_id, by_geometry, by_keyword, mall_id``.
    """
    kw = [k.lower() for k in keywords]
    mapping = {}
    disagreements = []
    cent = np.array([m.centroid for m in malls]) if malls else np.zeros((0, 2))
    for aid, lat, lon, desc in sorted(zip(antennas["antenna_id"], antennas["lat"],
                                          antennas["lon"], antennas["description"])):
        inside = [m for m in malls if m.contains(lat, lon)]
        if len(inside) > 1:
            raise ValueError(f"antenna {aid} lies in overlapping malls "
                             f"{[m.mall_id for m in inside]}")
        text = str(desc).lower()
        by_kw = any(k in text for k in kw)
        mall = inside[0].mall_id if inside else None
        if mall is None and by_kw and malls:
            named = [m for m in malls if m.name and m.name.lower() in text]
            if len(named) == 1:
                mall = named[0].mall_id
            else:
                d = haversine_array(lat, lon, cent[:, 0], cent[:, 1])
                mall = malls[int(np.argmin(d))].mall_id
        if mall is not None:
            mapping[aid] = mall
        if bool(inside) != by_kw:
            disagreements.append((aid, bool(inside), by_kw, mall))
    report = pd.DataFrame(disagreements,
                          columns=["antenna_id", "by_geometry", "by_keyword", "mall_id"])
    return mapping, report


def grid_from_antennas(antennas):
    """Sorted list of cell ids covering all antenna positions."""
    return sorted({snap_to_grid(a, b) for a, b in zip(antennas["lat"], antennas["lon"])})


def cell_populations(census, cells):
    """Apportion census zone populations to grid cells by zone centroid.

    A zone whose centroid snaps to a cell outside ``cells`` goes to the
    nearest cell center (logged).  Integer populations are summed exactly.
    """
    cells = list(cells)
    if not cells:
        raise ValueError("empty grid")
    cellset = set(cells)
    centers = np.array([cell_center(c) for c in cells])
    out = {c: 0 for c in cells}
    for zid, lat, lon, pop in census[CENSUS_COLUMNS].itertuples(index=False):
        if pop < 0:
            raise ValueError(f"zone {zid}: negative population")
        cid = snap_to_grid(lat, lon)
        if cid not in cellset:
            d = haversine_array(lat, lon, centers[:, 0], centers[:, 1])
            cid = cells[int(np.argmin(d))]
            log.info("zone %s centroid outside grid; assigned to nearest cell %s",
                     zid, cid)
        pop = int(pop) if float(pop).is_integer() else float(pop)
        out[cid] = out[cid] + pop
    return out


def locate_comuna(lat, lon, comunas):
    for c in comunas:
        if c.contains(lat, lon):
            return c.comuna_id
    return None


def build_cells(cells, populations, comunas, hdi):
    """GridCell records carrying population and the HDI of the comuna at the center."""
    out = []
    for cid in cells:
        center = cell_center(cid)
        com = locate_comuna(*center, comunas)
        out.append(GridCell(cid, center, populations.get(cid, 0),
                            hdi.get(com, float("nan")) if com else float("nan")))
    return out
