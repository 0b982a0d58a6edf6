"""Planar and spherical primitives on (lat, lon) coordinates."""
from __future__ import annotations

import math
from decimal import ROUND_DOWN, Decimal

import numpy as np

from ._validation import check_latlon

EARTH_RADIUS_KM = 6371.0
GRID_STEP = 0.01
_Q = Decimal("0.01")


def _truncate(v):
    # Decimal on repr() avoids binary artefacts such as 0.29 * 100 = 28.999...
    return float(Decimal(repr(v)).quantize(_Q, rounding=ROUND_DOWN)) + 0.0


def snap_to_grid(lat, lon):
    """Cell id of a point: both coordinates truncated toward zero at 0.01 deg."""
    lat, lon = check_latlon(lat, lon)
    return (_truncate(lat), _truncate(lon))


def _center_1d(v):
    if v == 0.0:
        return 0.0
    return round(v + math.copysign(GRID_STEP / 2, v), 4)


def cell_center(cell_id):
    """Midpoint of the region whose points truncate to ``cell_id``.

    Truncation toward zero maps (-0.01, 0.01) to 0.00, so the zero row and
    column are twice as wide and centered on zero.
    """
    lat, lon = cell_id
    return (_center_1d(lat), _center_1d(lon))


def haversine_km(a, b):
    """Great-circle distance in km between two (lat, lon) points."""
    lat1, lon1 = check_latlon(*a)
    lat2, lon2 = check_latlon(*b)
    return float(haversine_array(lat1, lon1, lat2, lon2))


def haversine_array(lat1, lon1, lat2, lon2):
    """Vectorized haversine distance (km); arguments broadcast."""
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def _distinct_vertices(ring):
    return {(float(p[0]), float(p[1])) for p in ring}


def validate_ring(ring):
    """Return ``ring`` as a closed list of (lat, lon) tuples.

    Raises ValueError when fewer than three distinct vertices are present.
    """
    pts = [(float(p[0]), float(p[1])) for p in ring]
    if len(_distinct_vertices(pts)) < 3:
        raise ValueError("degenerate ring: fewer than 3 distinct vertices")
    if pts[0] != pts[-1]:
        pts.append(pts[0])
    return pts


def _on_segment(py, px, ay, ax, by, bx, eps=1e-12):
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if abs(cross) > eps * max(1.0, abs(bx - ax) + abs(by - ay)):
        return False
    return (min(ax, bx) - eps <= px <= max(ax, bx) + eps
            and min(ay, by) - eps <= py <= max(ay, by) + eps)


def point_in_polygon(pt, ring):
    """Even-odd ray casting; points on an edge or vertex count as inside."""
    ring = validate_ring(ring)
    py, px = float(pt[0]), float(pt[1])
    inside = False
    for (ay, ax), (by, bx) in zip(ring[:-1], ring[1:]):
        if _on_segment(py, px, ay, ax, by, bx):
            return True
        if (ay > py) != (by > py):
            x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
            if px < x_cross:
                inside = not inside
    return inside


def ring_bbox(ring):
    lats = [p[0] for p in ring]
    lons = [p[1] for p in ring]
    return min(lats), min(lons), max(lats), max(lons)


def ring_centroid(ring):
    """Area centroid of a simple polygon in the (lat, lon) plane."""
    ring = validate_ring(ring)
    a = cy = cx = 0.0
    for (y0, x0), (y1, x1) in zip(ring[:-1], ring[1:]):
        c = x0 * y1 - x1 * y0
        a += c
        cx += (x0 + x1) * c
        cy += (y0 + y1) * c
    if a == 0:
        pts = ring[:-1]
        return (sum(p[0] for p in pts) / len(pts), sum(p[1] for p in pts) / len(pts))
    a *= 0.5
    return (cy / (6 * a), cx / (6 * a))
