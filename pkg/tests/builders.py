"""Small fixture writers shared by several test modules."""
from __future__ import annotations

import json

import pandas as pd

from urbanflow.ingest import ANTENNA_COLUMNS


def antennas_frame(rows):
    return pd.DataFrame(rows, columns=ANTENNA_COLUMNS)


def write_antennas(path, rows):
    antennas_frame(rows).to_csv(path, index=False)
    return path


def square(lat, lon, half):
    return [(lat - half, lon - half), (lat - half, lon + half),
            (lat + half, lon + half), (lat + half, lon - half)]


def write_polygons(path, items):
    """``items``: list of (properties, ring of (lat, lon))."""
    feats = [{"type": "Feature", "properties": props,
              "geometry": {"type": "Polygon",
                           "coordinates": [[[p[1], p[0]] for p in ring + ring[:1]]]}}
             for props, ring in items]
    with open(path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": feats}, fh)
    return path


def write_events(path, rows, header=("device_id", "timestamp", "antenna_id",
                                      "bytes_down", "bytes_up")):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")
    return path


def pipeline_for(out, seed=7, bootstrap=200, **scenario):
    from urbanflow.config import PipelineConfig
    from urbanflow.pipeline import Pipeline
    cfg = PipelineConfig(out_dir=out, seed=seed, bootstrap=bootstrap,
                         scenario=scenario).validate()
    return Pipeline(cfg)
