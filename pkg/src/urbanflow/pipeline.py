"""Pipeline stages behind the command line.

Every stage reads declared inputs and writes fixed artifact names under the
output directory.  A stage is skipped when a stamp of its configuration and
input hashes matches the previous run and all its outputs are present.
Derived stages (ingest, visits, homes) run on demand for later stages.
"""
from __future__ import annotations

import hashlib
import json
import logging
import platform
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, covisit, gravity, ingest, mixing, plots, residence, synth
from . import visits as visits_mod
from .numerics.kde import kde

log = logging.getLogger(__name__)


class MissingArtifact(Exception):
    def __init__(self, path, stage):
        self.path = Path(path)
        self.stage = stage
        super().__init__(f"missing {self.path.name}; run '{stage}' first")


class NonConvergence(Exception):
    pass


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions():
    import scipy
    import sklearn

    return {"urbanflow": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "pandas": pd.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def _dump(path, obj):
    # insertion order is deterministic and keeps coefficient tables in model order
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        v = float(o)
        return v if np.isfinite(v) else None
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _csv(frame, path, **kw):
    frame.to_csv(path, lineterminator="\n", **kw)


RAW_PRODUCER = {
    "events": "synth traces",
    "antennas": "synth city",
    "malls": "synth city",
    "comunas": "synth city",
    "hdi": "synth city",
    "census": "synth city",
}


class Pipeline:
    def __init__(self, cfg):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self._ran = set()

    def p(self, name):
        return self.out / name

    # -- bookkeeping ---------------------------------------------------------

    def _stage(self, name, inputs, outputs, fn, config_keys=None):
        """Run ``fn`` unless the stamp for ``name`` is current."""
        self.out.mkdir(parents=True, exist_ok=True)
        in_hashes = {}
        for path in inputs:
            path = Path(path)
            if not path.exists():
                raise MissingArtifact(path, self._producer(path))
            in_hashes[path.name] = file_hash(path)
        stamp = {"stage": name, "config": self.cfg.digest(config_keys),
                 "inputs": in_hashes}
        key = hashlib.sha256(json.dumps(stamp, sort_keys=True).encode()).hexdigest()
        stamp_path = self.out / ".stamps" / f"{name.replace(' ', '_')}.json"
        if (stamp_path.exists() and all(self.p(o).exists() for o in outputs)
                and json.loads(stamp_path.read_text()).get("key") == key):
            log.info("stage up to date", extra={"stage": name})
            return False
        log.info("running stage", extra={"stage": name})
        fn()
        stamp_path.parent.mkdir(exist_ok=True)
        stamp_path.write_text(json.dumps({"key": key}) + "\n")
        runs = self.out / "runs"
        runs.mkdir(exist_ok=True)
        _dump(runs / f"{name.replace(' ', '_')}.json", {
            "stage": name,
            "config_digest": stamp["config"],
            "inputs": in_hashes,
            "outputs": {o: file_hash(self.p(o)) for o in outputs if self.p(o).exists()},
            "versions": _versions(),
        })
        return True

    def _producer(self, path):
        for raw, stage in RAW_PRODUCER.items():
            if Path(path) == self.cfg.input_path(raw):
                return stage
        return _ARTIFACT_STAGE.get(Path(path).name, "ingest")

    def _raw(self, name):
        path = self.cfg.input_path(name)
        if not path.exists():
            raise MissingArtifact(path, RAW_PRODUCER[name])
        return path

    def _ensure(self, stage):
        if stage not in self._ran:
            getattr(self, stage)()
            self._ran.add(stage)

    # -- synthetic data ------------------------------------------------------

    def scenario(self):
        data = dict(self.cfg.scenario)
        data.setdefault("seed", self.cfg.require_seed())
        return synth.Scenario.from_dict(data)

    def synth_city(self):
        s = self.scenario()

        def run():
            synth.write_city(synth.generate_city(s), self.out)
        return self._stage("synth city", [], _SYNTH_CITY_OUT, run, ["scenario", "seed"])

    def synth_traces(self):
        s = self.scenario()
        manifest = self.p("city_manifest.json")
        if not manifest.exists():
            raise MissingArtifact(manifest, "synth city")
        recorded = json.loads(manifest.read_text())["scenario"]
        if recorded != synth.scenario_to_dict(s):
            raise ValueError("city files were generated from a different scenario; "
                             "rerun 'synth city'")

        def run():
            city = synth.generate_city(s)
            synth.write_traces(synth.generate_traces(s, city), s, self.out)
        return self._stage("synth traces", [manifest], ["events.csv", "manifest.json"],
                           run, ["scenario", "seed"])

    # -- derived stages ------------------------------------------------------

    def load_registry(self):
        ant = ingest.load_antennas(self._raw("antennas"))
        malls = ingest.load_malls(self._raw("malls"))
        comunas = ingest.load_comunas(self._raw("comunas"))
        hdi = ingest.load_hdi(self._raw("hdi"))
        return ant, malls, comunas, hdi

    def ingest(self):
        raws = [self._raw(n) for n in ("events", "antennas", "malls", "comunas",
                                       "hdi", "census")]

        def run():
            ant, malls, comunas, hdi = self.load_registry()
            events, rejections = ingest.parse_events(self._raw("events"), ant)
            _csv(events.drop(columns="line"), self.p("events_clean.csv"), index=False)
            _csv(pd.DataFrame([(r.line, r.reason, r.raw) for r in rejections],
                              columns=["line", "reason", "raw"]),
                 self.p("rejections.csv"), index=False)
            mapping, report = ingest.map_antennas_to_malls(
                ant, malls, self.cfg.mall_keywords)
            _csv(pd.DataFrame(sorted(mapping.items()), columns=["antenna_id", "mall_id"]),
                 self.p("antenna_mall.csv"), index=False)
            _csv(report, self.p("mall_mapping_report.csv"), index=False)
            cells = ingest.grid_from_antennas(ant)
            pops = ingest.cell_populations(ingest.load_census(self._raw("census")), cells)
            grid = ingest.build_cells(cells, pops, comunas, hdi)
            _csv(pd.DataFrame([(c.cell_id[0], c.cell_id[1], c.center[0], c.center[1],
                                c.population, c.hdi) for c in grid],
                              columns=["cell_lat", "cell_lon", "center_lat",
                                       "center_lon", "population", "hdi"]),
                 self.p("cells.csv"), index=False)
        return self._stage("ingest", raws, _INGEST_OUT, run,
                           ["mall_keywords"])

    def _events(self):
        return pd.read_csv(self.p("events_clean.csv"),
                           dtype={"device_id": str, "antenna_id": str})

    def _mapping(self):
        m = pd.read_csv(self.p("antenna_mall.csv"), dtype=str)
        return dict(zip(m["antenna_id"], m["mall_id"]))

    def visits(self):
        self._ensure("ingest")

        def run():
            table = visits_mod.detect_visits(self._events(), self._mapping(),
                                             self.cfg.timezone)
            customers, dropped = visits_mod.filter_nonvisitors(
                table, self.cfg.max_day_presences)
            _csv(table, self.p("visits_all.csv"), index=False)
            _csv(customers, self.p("visits.csv"), index=False)
            _csv(pd.DataFrame({"device_id": dropped}), self.p("discarded.csv"),
                 index=False)
            _csv(visits_mod.presence_histogram(table), self.p("presence_histogram.csv"))
        return self._stage("visits", [self.p("events_clean.csv"),
                                      self.p("antenna_mall.csv")],
                           _VISITS_OUT, run, ["timezone", "max_day_presences"])

    def _visits(self):
        return pd.read_csv(self.p("visits.csv"), dtype={"device_id": str,
                                                        "mall_id": str, "day": str})

    def homes(self):
        self._ensure("visits")

        def run():
            ant, malls, comunas, hdi = self.load_registry()
            customers = self._visits()
            events = self._events()
            events = events[events["device_id"].isin(set(customers["device_id"]))]
            ends = residence.daily_endpoints(events, ant, self.cfg.timezone)
            homes, rejected = residence.infer_home(
                ends, self.cfg.days_in_period, self.cfg.min_day_share,
                self.cfg.min_tower_share,
                devices=sorted(customers["device_id"].unique()))
            homes = residence.attach_geography(homes, ant, comunas, hdi)
            _csv(homes[residence.HOME_COLUMNS], self.p("homes.csv"), index=False)
            _csv(pd.DataFrame(list(rejected.items()), columns=["device_id", "reason"]),
                 self.p("home_rejections.csv"), index=False)
            census = ingest.load_census(self._raw("census"))
            by_com = {}
            for lat, lon, pop in zip(census["centroid_lat"], census["centroid_lon"],
                                     census["population"]):
                c = ingest.locate_comuna(lat, lon, comunas)
                if c is not None:
                    by_com[c] = by_com.get(c, 0) + pop
            try:
                r = residence.census_correlation(homes, by_com)
                corr = {"pearson_r": r, "flag": None}
            except ValueError as exc:
                corr = {"pearson_r": None, "flag": str(exc)}
            corr.update({"retained": int(len(homes)), "rejected": len(rejected)})
            _dump(self.p("census_correlation.json"), corr)
            mat, flagged = visits_mod.comuna_mall_matrix(
                customers, homes, [m.mall_id for m in malls])
            _csv(mat, self.p("comuna_mall.csv"))
            if flagged:
                log.warning("comunas without visitors", extra={"comunas": flagged})
        return self._stage("homes", [self.p("visits.csv"), self.p("events_clean.csv")]
                           + [self._raw(n) for n in ("antennas", "comunas", "hdi",
                                                      "census")],
                           _HOMES_OUT, run,
                           ["timezone", "start", "end", "min_day_share",
                            "min_tower_share"])

    def _homes(self):
        return pd.read_csv(self.p("homes.csv"), dtype={"device_id": str,
                                                       "home_antenna_id": str,
                                                       "comuna_id": str})

    def _retained_visits(self, homes):
        v = self._visits()
        return v[v["device_id"].isin(set(homes["device_id"]))]

    # -- analyses ------------------------------------------------------------

    def mixing(self):
        self._ensure("homes")
        seed = self.cfg.require_seed()

        def run():
            _, malls, comunas, hdi = self.load_registry()
            homes = self._homes().dropna(subset=["hdi"])
            v = self._retained_visits(homes)
            table, labels = residence.quantize_hdi(homes, self.cfg.quantiles)
            _csv(table.to_frame(), self.p("hdi_quantiles.csv"), index=False)
            lab = pd.Series(labels.to_numpy(), index=homes["device_id"].to_numpy())
            cats = table.labels
            counts, mall_ids, dev_cat, inc = mixing.category_counts(v, lab, cats)
            rep = mixing.exposure_report(counts, cats, B=self.cfg.bootstrap, seed=seed,
                                         device_categories=dev_cat, incidence=inc)
            out = rep.to_dict()
            out["malls"] = mall_ids
            _dump(self.p("exposure.json"), out)
            loc_hdi = {m.mall_id: hdi.get(ingest.locate_comuna(*m.centroid, comunas),
                                          np.nan) for m in malls}
            summary, per_dev = mixing.hdi_gap_analysis(v, homes, loc_hdi)
            _csv(per_dev, self.p("gaps.csv"), index=False)
            _dump(self.p("gaps_summary.json"), summary)
        return self._stage("mixing", [self.p("homes.csv"), self.p("visits.csv"),
                                      self._raw("malls"), self._raw("comunas"),
                                      self._raw("hdi")],
                           _MIXING_OUT, run, ["quantiles", "bootstrap", "seed"])

    def _cells(self):
        c = pd.read_csv(self.p("cells.csv"))
        return [ingest.GridCell((a, b), (ca, cb), pop, h)
                for a, b, ca, cb, pop, h in c.itertuples(index=False)]

    def _flow_table(self):
        homes = self._homes()
        malls = ingest.load_malls(self._raw("malls"))
        v = self._retained_visits(homes)
        return gravity.build_flow_table(v, homes, self._cells(), malls,
                                        self.cfg.distance_floor_km)

    def gravity_fit(self, attraction=False):
        self._ensure("homes")
        suffix = "_attraction" if attraction else ""
        outputs = ["flows.csv", f"gravity_fit{suffix}.json",
                   f"predicted_vs_real{suffix}.csv", f"predicted_profiles{suffix}.csv"]
        state = {}

        def run():
            table = self._flow_table()
            _csv(table[gravity.FLOW_COLUMNS], self.p("flows.csv"), index=False)
            mode = self.cfg.attraction if attraction else None
            fit = gravity.fit_gravity(table, attraction=mode)
            _dump(self.p(f"gravity_fit{suffix}.json"), fit.to_dict())
            _csv(pd.DataFrame({"cell_lat": table["cell_lat"], "cell_lon": table["cell_lon"],
                               "mall_id": table["mall_id"], "real": fit.observed,
                               "predicted": fit.predicted}),
                 self.p(f"predicted_vs_real{suffix}.csv"), index=False)
            prof = gravity.predicted_profile_distribution(fit, table)
            _csv(pd.concat([d.assign(mall_id=m) for m, d in prof.items()])
                 [["mall_id", "hdi", "weight"]],
                 self.p(f"predicted_profiles{suffix}.csv"), index=False)
            state["converged"] = fit.report.converged
        self._stage("gravity fit" + suffix, [self.p("homes.csv"), self.p("visits.csv"),
                                             self.p("cells.csv"), self._raw("malls")],
                    outputs, run, ["attraction", "distance_floor_km"])
        converged = state.get("converged")
        if converged is None:
            converged = json.loads(self.p(f"gravity_fit{suffix}.json").read_text())[
                "fit"]["converged"]
        if not converged:
            raise NonConvergence("gravity fit did not converge")

    def _covisit_inputs(self):
        return [self.p("homes.csv"), self.p("visits.csv"), self._raw("malls")]

    def _similarity(self, v, homes):
        return covisit.similarity_matrix(v, homes, self.cfg.similarity)

    def covisit_fit(self):
        self._ensure("homes")
        state = {}

        def run():
            homes = self._homes()
            v = self._retained_visits(homes)
            malls = ingest.load_malls(self._raw("malls"))
            P = covisit.covisit_matrix(v, [m.mall_id for m in malls])
            S = self._similarity(v, homes)
            _csv(P.to_frame(), self.p("covisit.csv"))
            _csv(S.to_frame(), self.p("similarity.csv"))
            fit = covisit.fit_covisit_logit(P, S, malls, None,
                                            min_p=self.cfg.covisit_min_p)
            _dump(self.p("covisit_fit.json"), fit.to_dict())
            state["converged"] = fit.full.converged
        self._stage("covisit fit", self._covisit_inputs(),
                    ["covisit.csv", "similarity.csv", "covisit_fit.json"], run,
                    ["similarity", "covisit_min_p"])
        converged = state.get("converged")
        if converged is None:
            converged = json.loads(self.p("covisit_fit.json").read_text())[
                "full"]["converged"]
        if not converged:
            raise NonConvergence("co-visitation logit did not converge")

    def covisit_cluster(self):
        self._ensure("homes")
        seed = self.cfg.require_seed()

        def run():
            homes = self._homes()
            v = self._retained_visits(homes)
            S = covisit.similarity_matrix(v, homes, "similarity")
            samples = covisit.visitor_hdi_samples(v, homes)
            labels, summary = covisit.cluster_malls(S, self.cfg.clusters, seed, samples)
            _dump(self.p("clusters.json"), {
                "k": self.cfg.clusters, "seed": seed,
                "labels": dict(zip(S.malls, labels.tolist())),
                "clusters": summary})
        self._stage("covisit cluster", self._covisit_inputs(), ["clusters.json"], run,
                    ["clusters", "seed"])

    def covisit_network(self):
        self._ensure("homes")

        def run():
            homes = self._homes()
            v = self._retained_visits(homes)
            malls = ingest.load_malls(self._raw("malls"))
            P = covisit.covisit_matrix(v, [m.mall_id for m in malls])
            edges = covisit.export_network(P, self.cfg.covisit_threshold)
            self.p("network.dot").write_text(covisit.network_dot(edges, P.malls))
            self.p("network.json").write_text(covisit.network_json(edges, P.malls) + "\n")
        self._stage("covisit network", self._covisit_inputs(),
                    ["network.dot", "network.json"], run, ["covisit_threshold"])

    # -- report --------------------------------------------------------------

    def report(self):
        needed = {"predicted_vs_real.csv": "gravity fit", "exposure.json": "mixing",
                  "flows.csv": "gravity fit", "predicted_profiles.csv": "gravity fit"}
        for name, stage in needed.items():
            if not self.p(name).exists():
                raise MissingArtifact(self.p(name), stage)
        inputs = [self.p(n) for n in needed] + [self.p("homes.csv"), self.p("visits.csv")]
        optional = [n for n in ("similarity.csv", "comuna_mall.csv") if self.p(n).exists()]
        inputs += [self.p(n) for n in optional]
        outputs = ["scatter_predicted_vs_real.svg", "exposure.svg", "mall_kde.svg"]
        outputs += [n.replace(".csv", ".svg") for n in optional]

        def run():
            pvr = pd.read_csv(self.p("predicted_vs_real.csv"))
            self.p("scatter_predicted_vs_real.svg").write_text(plots.scatter(
                pvr["real"], pvr["predicted"], "real flow", "predicted flow",
                "Predicted vs real flows"))
            exp = json.loads(self.p("exposure.json").read_text())
            cats = exp["categories"]
            labels = [f"{a}-{b}" for a in cats for b in cats]
            vals = np.asarray(exp["E"], float).ravel()
            self.p("exposure.svg").write_text(plots.bars(
                labels, vals, "Exposure between HDI quantiles", "E", ref=1.0))
            homes = self._homes()
            obs = gravity.observed_profile(self._retained_visits(homes), homes)
            pred = pd.read_csv(self.p("predicted_profiles.csv"), dtype={"mall_id": str})
            grid = np.linspace(0.5, 1.1, 121)
            panels = []
            for m, g in pred.groupby("mall_id", sort=True):
                series = []
                if m in obs and len(obs[m]) > 1 and np.ptp(obs[m]) > 0:
                    series.append(("observed", kde(obs[m], grid)))
                w = g["weight"].to_numpy()
                if len(g) > 1 and np.ptp(g["hdi"]) > 0:
                    series.append(("predicted", kde(g["hdi"], grid, weights=w)))
                if series:
                    panels.append((m, grid, series))
            self.p("mall_kde.svg").write_text(plots.line_panels(
                panels, "HDI", "Customer HDI per mall: observed vs predicted"))
            for name in optional:
                M = pd.read_csv(self.p(name), index_col=0)
                self.p(name.replace(".csv", ".svg")).write_text(plots.heatmap(
                    M.to_numpy(), list(M.index), list(M.columns), name[:-4]))
        self._stage("report", inputs, outputs, run, [])


_SYNTH_CITY_OUT = ["antennas.csv", "malls.geojson", "comunas.geojson", "hdi.csv",
                   "census.csv", "city_manifest.json"]
_INGEST_OUT = ["events_clean.csv", "rejections.csv", "antenna_mall.csv",
               "mall_mapping_report.csv", "cells.csv"]
_VISITS_OUT = ["visits_all.csv", "visits.csv", "discarded.csv",
               "presence_histogram.csv"]
_HOMES_OUT = ["homes.csv", "home_rejections.csv", "census_correlation.json",
              "comuna_mall.csv"]
_MIXING_OUT = ["hdi_quantiles.csv", "exposure.json", "gaps.csv", "gaps_summary.json"]

_ARTIFACT_STAGE = {}
for _stage, _outs in (("ingest", _INGEST_OUT), ("visits", _VISITS_OUT),
                      ("homes", _HOMES_OUT), ("mixing", _MIXING_OUT),
                      ("synth city", _SYNTH_CITY_OUT)):
    for _o in _outs:
        _ARTIFACT_STAGE[_o] = _stage
