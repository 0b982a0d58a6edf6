"""Synthetic cities and event streams with planted ground truth.

A city is a rectangular grid of 0.01-degree cells, each with one outdoor
home antenna at its center, tiled into rectangular comunas with known HDI.
Malls are small square polygons inside distinct cells, each holding indoor
antennas.  Visitor counts per (cell, mall) are Poisson draws around the
gravity law, and every visitor receives night-time home events plus
daytime events on the mall's antennas on visit days.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from .geometry import (cell_center, haversine_array, ring_centroid, snap_to_grid,
                       validate_ring)
from .gravity import DISTANCE_FLOOR_KM, LOG_FLOOR
from .ingest import Comuna, GridCell, MallSite

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

MAX_MEAN_FLOW = 1e7
MALL_HALF_SIDE = 0.001
MALL_OFFSET = 0.0025


@dataclass
class Scenario:
    seed: int = 0
    rows: int = 10
    cols: int = 10
    origin_lat: float = -33.30
    origin_lon: float = -70.50
    comuna_rows: int = 3
    comuna_cols: int = 3
    hdi_range: tuple = (0.69, 0.99)
    population_range: tuple = (500, 5000)
    zones_per_cell: int = 2
    n_malls: int = 4
    mall_sqm_range: tuple = (7000.0, 173000.0)
    antennas_per_mall: int = 2
    G: float | None = None
    mean_flow: float = 5.0
    alpha: float = 0.52
    beta: float = 0.49
    gamma: float = 1.16
    lam: float = 0.0
    attraction: str = "linear"
    start_date: str = "2016-08-01"
    n_days: int = 30
    endpoint_reliability: float = 1.0
    fidelity: float = 1.0
    visit_days_max: int = 2
    mall_affinity: float = 0.3
    staff_per_mall: int = 0
    daytime_events: int = 1
    utc_offset_hours: int = -4
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.hdi_range = tuple(self.hdi_range)
        self.population_range = tuple(self.population_range)
        self.mall_sqm_range = tuple(self.mall_sqm_range)
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have at least one cell")
        if self.n_malls < 1 or self.n_malls > self.rows * self.cols:
            raise ValueError("need 1 <= n_malls <= number of cells")
        if not 0 < self.endpoint_reliability <= 1 or not 0 < self.fidelity <= 1:
            raise ValueError("reliability and fidelity must lie in (0, 1]")
        if not 1 <= self.visit_days_max <= 10:
            raise ValueError("visit_days_max must lie in [1, 10]")
        if self.attraction not in ("linear", "log"):
            raise ValueError(f"unknown attraction mode {self.attraction!r}")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        kw = {k: v for k, v in data.items() if k in known}
        extra = {k: v for k, v in data.items() if k not in known}
        if extra:
            raise ValueError(f"unknown scenario keys: {sorted(extra)}")
        return cls(**kw)

    @classmethod
    def from_toml(cls, path):
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return cls.from_dict(data.get("scenario", data))


@dataclass
class City:
    scenario: Scenario
    cells: list
    malls: list
    comunas: list
    hdi: dict
    antennas: pd.DataFrame
    census: pd.DataFrame
    home_antenna: dict
    mall_antennas: dict

    @property
    def total_population(self):
        return int(sum(c.population for c in self.cells))


def _rng(seed, *stream):
    return np.random.default_rng([int(seed), *stream])


def _cell_lat(s, r):
    return round(s.origin_lat - 0.01 * r - 0.005, 4)


def _cell_lon(s, c):
    return round(s.origin_lon - 0.01 * c - 0.005, 4)


def generate_city(scenario):
    """Build the city geometry, census and HDI tables for ``scenario``."""
    s = scenario
    rng = _rng(s.seed, 0)
    com_hdi = {}
    comunas = []
    r_edges = np.linspace(0, s.rows, s.comuna_rows + 1).round().astype(int)
    c_edges = np.linspace(0, s.cols, s.comuna_cols + 1).round().astype(int)
    comuna_of = {}
    for a in range(s.comuna_rows):
        for b in range(s.comuna_cols):
            cid = f"C{a:02d}{b:02d}"
            r0, r1, c0, c1 = r_edges[a], r_edges[a + 1], c_edges[b], c_edges[b + 1]
            lat_hi = round(s.origin_lat - 0.01 * r0, 4)
            lat_lo = round(s.origin_lat - 0.01 * r1, 4)
            lon_hi = round(s.origin_lon - 0.01 * c0, 4)
            lon_lo = round(s.origin_lon - 0.01 * c1, 4)
            ring = validate_ring([(lat_lo, lon_lo), (lat_lo, lon_hi),
                                  (lat_hi, lon_hi), (lat_hi, lon_lo)])
            comunas.append(Comuna(cid, f"Comuna {a}-{b}", tuple(ring)))
            com_hdi[cid] = round(float(rng.uniform(*s.hdi_range)), 3)
            for r in range(r0, r1):
                for c in range(c0, c1):
                    comuna_of[(r, c)] = cid

    cells, antennas, census, home_antenna = [], [], [], {}
    for r in range(s.rows):
        for c in range(s.cols):
            lat, lon = _cell_lat(s, r), _cell_lon(s, c)
            cid = snap_to_grid(lat, lon)
            pop = int(rng.integers(s.population_range[0], s.population_range[1] + 1))
            cells.append(GridCell(cid, cell_center(cid), pop, com_hdi[comuna_of[(r, c)]]))
            aid = f"A{r:03d}{c:03d}"
            antennas.append((aid, f"T{r:03d}{c:03d}", lat, lon, False,
                             f"outdoor macro {r}-{c}"))
            home_antenna[cid] = aid
            # split population over zones with centroids inside the cell
            k = s.zones_per_cell
            cuts = np.sort(rng.integers(0, pop + 1, size=k - 1))
            parts = np.diff(np.r_[0, cuts, pop])
            for z, part in enumerate(parts):
                dlat, dlon = rng.uniform(-0.004, 0.004, size=2)
                census.append((f"Z{r:03d}{c:03d}{z}", round(lat + dlat, 6),
                               round(lon + dlon, 6), int(part)))

    mall_cells = rng.choice(s.rows * s.cols, size=s.n_malls, replace=False)
    malls, mall_antennas = [], {}
    lo, hi = np.log(s.mall_sqm_range[0]), np.log(s.mall_sqm_range[1])
    for j, idx in enumerate(sorted(int(x) for x in mall_cells)):
        r, c = divmod(idx, s.cols)
        clat = _cell_lat(s, r) + MALL_OFFSET
        clon = _cell_lon(s, c) + MALL_OFFSET
        h = MALL_HALF_SIDE
        ring = validate_ring([(round(clat - h, 6), round(clon - h, 6)),
                              (round(clat - h, 6), round(clon + h, 6)),
                              (round(clat + h, 6), round(clon + h, 6)),
                              (round(clat + h, 6), round(clon - h, 6))])
        mid = f"M{j:02d}"
        sqm = float(round(np.exp(rng.uniform(lo, hi)), -2))
        malls.append(MallSite(mid, f"Plaza {j:02d}", tuple(ring), sqm,
                              ring_centroid(ring)))
        ids = []
        for k in range(s.antennas_per_mall):
            aid = f"AM{j:02d}{k}"
            dl = (k + 1) / (s.antennas_per_mall + 1) * 2 * h - h
            antennas.append((aid, f"TM{j:02d}", round(clat + dl * 0.5, 6),
                             round(clon + dl * 0.5, 6), True,
                             f"MALL PLAZA {j:02d} LEVEL {k + 1}"))
            ids.append(aid)
        mall_antennas[mid] = ids
    _check_disjoint(malls)

    ant = pd.DataFrame(antennas, columns=["antenna_id", "tower_id", "lat", "lon",
                                          "indoor", "description"])
    cen = pd.DataFrame(census, columns=["zone_id", "centroid_lat", "centroid_lon",
                                        "population"])
    return City(s, cells, malls, comunas, com_hdi, ant, cen, home_antenna,
                mall_antennas)


def _check_disjoint(malls):
    boxes = [(min(p[0] for p in m.polygon), min(p[1] for p in m.polygon),
              max(p[0] for p in m.polygon), max(p[1] for p in m.polygon))
             for m in malls]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            a, b = boxes[i], boxes[j]
            if a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]:
                raise ValueError(f"mall polygons {malls[i].mall_id} and "
                                 f"{malls[j].mall_id} overlap")


def _distances(city):
    centers = np.array([c.center for c in city.cells])
    cents = np.array([m.centroid for m in city.malls])
    D = haversine_array(centers[:, None, 0], centers[:, None, 1],
                        cents[None, :, 0], cents[None, :, 1])
    return np.maximum(D, DISTANCE_FLOOR_KM)


def expected_flows(scenario, city):
    """Mean flows per (cell, mall) and the planted attraction values.

    The attraction term depends on each mall's mean customer HDI, which in
    turn depends on the flows; the pair is solved by fixed-point iteration
    on expected values.  ``G`` is calibrated to ``mean_flow`` when unset.

    Returns ``(mu, A, G)`` with ``mu`` and ``A`` of shape (cells, malls).
    """
    s = scenario
    Mi = np.array([c.population for c in city.cells], dtype=float)
    Mj = np.array([m.rental_sqm for m in city.malls], dtype=float)
    hdi = np.array([c.hdi for c in city.cells])
    D = _distances(city)
    with np.errstate(over="ignore", divide="ignore"):
        log_base = (s.alpha * np.log(Mi)[:, None] + s.beta * np.log(Mj)[None, :]
                    - s.gamma * np.log(D))
    A = np.zeros_like(D)
    for _ in range(200):
        weights = np.exp(log_base - log_base.max())
        if s.lam != 0:
            weights = weights * np.exp(_attraction_term(s, A) - _attraction_term(s, A).max())
        profile = (weights * hdi[:, None]).sum(0) / weights.sum(0)
        A_new = profile[None, :] - hdi[:, None]
        if np.max(np.abs(A_new - A)) < 1e-13:
            A = A_new
            break
        A = A_new
    log_mu = log_base + _attraction_term(s, A)
    if s.G is None:
        shift = log_mu.max()
        G = s.mean_flow / np.mean(np.exp(log_mu - shift)) * np.exp(-shift)
    else:
        G = float(s.G)
    mu = G * np.exp(log_mu)
    if not np.all(np.isfinite(mu)) or mu.max() > MAX_MEAN_FLOW:
        raise OverflowError("mean flow overflow; use a smaller G")
    return mu, A, float(G)


def _attraction_term(s, A):
    if s.lam == 0:
        return np.zeros_like(A)
    if s.attraction == "linear":
        return s.lam * A
    return -s.lam * np.log(np.maximum(A, LOG_FLOOR))


def draw_flows(scenario, city):
    """Poisson flows around the gravity law, as a flow table.

    ``A`` is recomputed from the realized flows (visitor-weighted mean HDI
    per mall), as the pipeline would observe it; the planted value is kept
    in ``A_planted``.
    """
    mu, A, G = expected_flows(scenario, city)
    rng = _rng(scenario.seed, 1)
    F = rng.poisson(mu)
    hdi = np.array([c.hdi for c in city.cells])
    tot = F.sum(0)
    profile = np.where(tot > 0, (F * hdi[:, None]).sum(0) / np.maximum(tot, 1), np.nan)
    D = _distances(city)
    rows = []
    for i, cell in enumerate(city.cells):
        for j, m in enumerate(city.malls):
            rows.append((cell.cell_id[0], cell.cell_id[1], m.mall_id, int(F[i, j]),
                         cell.population, m.rental_sqm, D[i, j],
                         profile[j] - cell.hdi, cell.hdi, mu[i, j], A[i, j]))
    t = pd.DataFrame(rows, columns=["cell_lat", "cell_lon", "mall_id", "F", "M_i",
                                    "M_j", "D_km", "A", "cell_hdi", "mean",
                                    "A_planted"])
    t.attrs["G"] = G
    return t


def _device_id(seed, *parts):
    key = ":".join(str(p) for p in (seed, *parts))
    return hashlib.sha1(key.encode()).hexdigest()[:16]


@dataclass
class Traces:
    events: pd.DataFrame
    flows: pd.DataFrame
    homes: dict
    visits: pd.DataFrame
    staff: list
    G: float


def generate_traces(scenario, city):
    """Simulate the event log.

    Returns a :class:`Traces` bundle; ``events`` carries ``ts`` as epoch
    seconds and is written by :func:`write_traces` with local ISO timestamps.
    """
    s = scenario
    flows = draw_flows(s, city)
    F = flows["F"].to_numpy().reshape(len(city.cells), len(city.malls))
    offset = s.utc_offset_hours * 3600
    start = date.fromisoformat(s.start_date)
    day0 = int((pd.Timestamp(start).value // 10**9)) - offset
    days = np.arange(s.n_days)
    outdoor = np.array([city.home_antenna[c.cell_id] for c in city.cells])

    dev_ids, dev_home = [], []
    ev_dev, ev_ts, ev_ant = [], [], []
    visit_rows = []
    homes = {}

    def night_events(rng, d_idx, home):
        n = s.n_days
        on = rng.random(n) < s.endpoint_reliability
        for which, (lo, hi) in enumerate(((5 * 3600, 8 * 3600 - 1),
                                          (22 * 3600 + 1, 24 * 3600 - 1))):
            secs = rng.integers(lo, hi + 1, size=n)
            stay = rng.random(n) < s.fidelity
            other = outdoor[rng.integers(0, outdoor.size, size=n)]
            ant = np.where(stay, home, other)
            sel = days[on]
            ev_dev.append(np.full(sel.size, d_idx))
            ev_ts.append(day0 + sel * 86400 + secs[on])
            ev_ant.append(ant[on])
        if s.daytime_events:
            k = s.daytime_events * n
            dd = rng.integers(0, n, size=k)
            ev_dev.append(np.full(k, d_idx))
            ev_ts.append(day0 + dd * 86400 + rng.integers(9 * 3600, 21 * 3600, size=k))
            ev_ant.append(outdoor[rng.integers(0, outdoor.size, size=k)])

    def mall_events(rng, d_idx, mall_idx, visit_days):
        mall = city.malls[mall_idx]
        ants = city.mall_antennas[mall.mall_id]
        for d in visit_days:
            k = int(rng.integers(1, 4))
            ev_dev.append(np.full(k, d_idx))
            ev_ts.append(day0 + int(d) * 86400
                         + rng.integers(10 * 3600, 21 * 3600, size=k))
            ev_ant.append(np.array([ants[int(x)] for x in rng.integers(0, len(ants), k)]))
            visit_rows.append((d_idx, mall.mall_id, int(d)))

    for i, cell in enumerate(city.cells):
        rng = _rng(s.seed, 2, i)
        home = city.home_antenna[cell.cell_id]
        local = []  # (device index, presences, malls visited)
        for j in range(len(city.malls)):
            for v in range(int(F[i, j])):
                n_visit = int(rng.integers(1, s.visit_days_max + 1))
                reuse = None
                if local and rng.random() < s.mall_affinity:
                    pool = [e for e in local if j not in e[2] and e[1] + n_visit <= 10]
                    if pool:
                        reuse = pool[int(rng.integers(0, len(pool)))]
                if reuse is None:
                    d_idx = len(dev_ids)
                    dev_ids.append(_device_id(s.seed, i, j, v))
                    dev_home.append(home)
                    homes[dev_ids[-1]] = home
                    night_events(rng, d_idx, home)
                    reuse = [d_idx, 0, set()]
                    local.append(reuse)
                reuse[1] += n_visit
                reuse[2].add(j)
                vd = np.sort(rng.choice(s.n_days, size=n_visit, replace=False))
                mall_events(rng, reuse[0], j, vd)

    staff = []
    for j in range(len(city.malls)):
        rng = _rng(s.seed, 3, j)
        for k in range(s.staff_per_mall):
            d_idx = len(dev_ids)
            dev_ids.append(_device_id(s.seed, "staff", j, k))
            home = outdoor[int(rng.integers(0, outdoor.size))]
            dev_home.append(home)
            staff.append(dev_ids[-1])
            night_events(rng, d_idx, home)
            n_visit = min(s.n_days, 20)
            mall_events(rng, d_idx, j, np.sort(rng.choice(s.n_days, n_visit, replace=False)))

    dev_arr = np.array(dev_ids, dtype=object)
    idx = np.concatenate(ev_dev) if ev_dev else np.zeros(0, int)
    events = pd.DataFrame({
        "device_id": dev_arr[idx] if idx.size else np.array([], dtype=object),
        "ts": np.concatenate(ev_ts).astype(np.int64) if ev_ts else np.zeros(0, np.int64),
        "antenna_id": np.concatenate(ev_ant) if ev_ant else np.array([], dtype=object),
    })
    brng = _rng(s.seed, 4)
    events["bytes_down"] = brng.integers(0, 5_000_000, size=len(events))
    events["bytes_up"] = brng.integers(0, 500_000, size=len(events))
    events = events.sort_values(["ts", "device_id", "antenna_id"],
                                kind="mergesort").reset_index(drop=True)

    visits = pd.DataFrame(visit_rows, columns=["device", "mall_id", "day_index"])
    visits["device_id"] = dev_arr[visits["device"].to_numpy()] if len(visits) else []
    visits["day"] = [start + timedelta(days=int(d)) for d in visits["day_index"]]
    visits = visits[["device_id", "mall_id", "day"]].sort_values(
        ["device_id", "mall_id", "day"]).reset_index(drop=True)
    return Traces(events, flows, homes, visits, staff, flows.attrs["G"])


# -- file output -------------------------------------------------------------

def _geojson(features):
    return {"type": "FeatureCollection", "features": features}


def _polygon_feature(ring, props):
    return {"type": "Feature", "properties": props,
            "geometry": {"type": "Polygon",
                         "coordinates": [[[p[1], p[0]] for p in ring]]}}


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_city(city, out_dir):
    """Write ingest-compatible city files; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "antennas": out / "antennas.csv",
        "malls": out / "malls.geojson",
        "comunas": out / "comunas.geojson",
        "hdi": out / "hdi.csv",
        "census": out / "census.csv",
        "city_manifest": out / "city_manifest.json",
    }
    ant = city.antennas.copy()
    ant["indoor"] = ant["indoor"].map({True: "true", False: "false"})
    ant.to_csv(paths["antennas"], index=False, lineterminator="\n")
    _write_json(paths["malls"], _geojson([
        _polygon_feature(m.polygon, {"mall_id": m.mall_id, "name": m.name,
                                     "rental_sqm": m.rental_sqm})
        for m in city.malls]))
    _write_json(paths["comunas"], _geojson([
        _polygon_feature(c.polygon, {"comuna_id": c.comuna_id, "name": c.name})
        for c in city.comunas]))
    pd.DataFrame(sorted(city.hdi.items()), columns=["comuna_id", "hdi"]).to_csv(
        paths["hdi"], index=False, lineterminator="\n")
    city.census.to_csv(paths["census"], index=False, lineterminator="\n")
    _write_json(paths["city_manifest"], {
        "scenario": scenario_to_dict(city.scenario),
        "total_population": city.total_population,
        "cells": [{"cell_lat": c.cell_id[0], "cell_lon": c.cell_id[1],
                   "population": c.population, "hdi": c.hdi} for c in city.cells],
        "malls": [{"mall_id": m.mall_id, "rental_sqm": m.rental_sqm,
                   "centroid": list(m.centroid)} for m in city.malls],
    })
    return paths


def scenario_to_dict(s):
    d = asdict(s)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


def format_local_iso(ts, offset_hours):
    """Epoch seconds to ISO-8601 strings in a fixed UTC offset."""
    off = int(offset_hours) * 3600
    local = pd.to_datetime(np.asarray(ts, np.int64) + off, unit="s")
    sign = "-" if off < 0 else "+"
    hh, mm = divmod(abs(off) // 60, 60)
    suffix = f"{sign}{hh:02d}:{mm:02d}"
    return local.strftime("%Y-%m-%dT%H:%M:%S") + suffix


def write_traces(traces, scenario, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ev = traces.events
    frame = pd.DataFrame({
        "device_id": ev["device_id"],
        "timestamp": format_local_iso(ev["ts"], scenario.utc_offset_hours),
        "antenna_id": ev["antenna_id"],
        "bytes_down": ev["bytes_down"],
        "bytes_up": ev["bytes_up"],
    })
    path = out / "events.csv"
    frame.to_csv(path, index=False, lineterminator="\n")
    flows = traces.flows
    _write_json(out / "manifest.json", {
        "scenario": scenario_to_dict(scenario),
        "G": traces.G,
        "planted": {"alpha": scenario.alpha, "beta": scenario.beta,
                    "gamma": scenario.gamma, "lambda": scenario.lam},
        "n_events": int(len(ev)),
        "n_devices": int(ev["device_id"].nunique()),
        "n_visit_rows": int(len(traces.visits)),
        "staff_devices": traces.staff,
        "flows": [{"cell_lat": a, "cell_lon": b, "mall_id": m, "F": int(f)}
                  for a, b, m, f in flows[["cell_lat", "cell_lon", "mall_id", "F"]]
                  .itertuples(index=False)],
        "homes": dict(sorted(traces.homes.items())),
    })
    return path
