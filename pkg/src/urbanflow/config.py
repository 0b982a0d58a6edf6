"""Pipeline configuration loaded from TOML."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .residence import days_in_window, resolve_timezone

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


INPUT_NAMES = ("events", "antennas", "malls", "comunas", "hdi", "census")


@dataclass
class PipelineConfig:
    out_dir: Path = Path("out")
    inputs: dict = field(default_factory=dict)
    timezone: str = "UTC-04:00"
    start: str = "2016-08-01"
    end: str = "2016-08-30"
    max_day_presences: int = 10
    min_day_share: float = 0.8
    min_tower_share: float = 0.6
    covisit_threshold: float = 0.10
    distance_floor_km: float = 0.5
    mall_keywords: tuple = ("mall",)
    quantiles: int = 5
    bootstrap: int = 1000
    seed: int | None = None
    attraction: str = "linear"
    similarity: str = "similarity"
    clusters: int = 3
    covisit_min_p: float | None = None
    scenario: dict = field(default_factory=dict)

    def input_path(self, name):
        p = self.inputs.get(name)
        return Path(p) if p else self.out_dir / _DEFAULT_INPUT[name]

    @property
    def days_in_period(self):
        return days_in_window(self.start, self.end)

    def validate(self):
        try:
            resolve_timezone(self.timezone)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        try:
            self.days_in_period
        except ValueError as exc:
            raise ConfigError(f"analysis window: {exc}") from None
        checks = [
            (self.max_day_presences >= 1, "max_day_presences must be >= 1"),
            (0 < self.min_day_share <= 1, "min_day_share must lie in (0, 1]"),
            (0 < self.min_tower_share <= 1, "min_tower_share must lie in (0, 1]"),
            (0 <= self.covisit_threshold <= 1, "covisit_threshold must lie in [0, 1]"),
            (self.distance_floor_km > 0, "distance_floor_km must be > 0"),
            (self.quantiles >= 2, "quantiles must be >= 2"),
            (self.bootstrap >= 100, "bootstrap must be >= 100"),
            (self.attraction in ("linear", "log"),
             "attraction must be 'linear' or 'log'"),
            (self.similarity in ("similarity", "distance"),
             "similarity must be 'similarity' or 'distance'"),
            (self.clusters >= 1, "clusters must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def require_seed(self):
        if self.seed is None:
            raise ConfigError("randomized stage needs an explicit seed "
                              "(config 'seed' or --seed)")
        return int(self.seed)

    def to_dict(self):
        d = asdict(self)
        d["out_dir"] = str(self.out_dir)
        d["mall_keywords"] = list(self.mall_keywords)
        return d

    def digest(self, keys=None):
        d = self.to_dict()
        d.pop("out_dir")
        if keys is not None:
            d = {k: d[k] for k in keys}
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


_DEFAULT_INPUT = {
    "events": "events.csv",
    "antennas": "antennas.csv",
    "malls": "malls.geojson",
    "comunas": "comunas.geojson",
    "hdi": "hdi.csv",
    "census": "census.csv",
}

_SECTIONS = {
    "analysis": ("timezone", "start", "end"),
    "thresholds": ("max_day_presences", "min_day_share", "min_tower_share",
                   "covisit_threshold", "distance_floor_km"),
    "ingest": ("mall_keywords",),
    "mixing": ("quantiles", "bootstrap"),
    "gravity": ("attraction",),
    "covisit": ("similarity", "clusters", "covisit_min_p"),
}


def load_config(path=None, seed=None, out=None):
    """Read a pipeline TOML file; ``seed`` and ``out`` override file values."""
    data = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from None
        base = path.parent

    kw = {}
    for section, keys in _SECTIONS.items():
        sec = data.get(section, {})
        unknown = set(sec) - set(keys)
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
        kw.update({k: sec[k] for k in keys if k in sec})
    if "mall_keywords" in kw:
        kw["mall_keywords"] = tuple(kw["mall_keywords"])
    if "seed" in data:
        kw["seed"] = int(data["seed"])
    inputs = data.get("inputs", {})
    unknown = set(inputs) - set(INPUT_NAMES)
    if unknown:
        raise ConfigError(f"unknown inputs: {sorted(unknown)}")
    kw["inputs"] = {k: str(base / v) for k, v in inputs.items()}
    out_dir = out if out is not None else data.get("output", {}).get("dir")
    kw["out_dir"] = Path(out_dir) if out is not None else \
        (base / out_dir if out_dir else Path("out"))
    synth = dict(data.get("synth", {}))
    if "scenario_file" in synth:
        sp = base / synth.pop("scenario_file")
        with open(sp, "rb") as fh:
            sd = tomllib.load(fh)
        synth = {**sd.get("scenario", sd), **synth}
    kw["scenario"] = synth
    if seed is not None:
        kw["seed"] = int(seed)
    try:
        cfg = PipelineConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()
