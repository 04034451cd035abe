"""Planar point-in-polygon predicates for port geofence zones.

Even-odd ray casting on raw lat/lon treated as plane coordinates. Points on
a polygon edge or vertex count as inside, so zone boundaries never flip with
floating-point noise. Port zones are small enough that ignoring curvature is
harmless.
"""

from __future__ import annotations

import numpy as np


class GeometryError(ValueError):
    pass


def _ring_arrays(polygon) -> tuple[np.ndarray, np.ndarray]:
    """Validate a ring and return its vertex arrays (closing vertex dropped)."""
    pts = np.asarray(polygon, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise GeometryError(f"polygon must be an Nx2 vertex list, got shape {pts.shape}")
    if len(pts) >= 2 and np.array_equal(pts[0], pts[-1]):
        pts = pts[:-1]
    if len(np.unique(pts, axis=0)) < 3:
        raise GeometryError(f"degenerate polygon with {len(np.unique(pts, axis=0))} distinct vertices")
    return pts[:, 0], pts[:, 1]


def point_in_region(lat: float, lon: float, polygon) -> bool:
    """True iff (lat, lon) lies inside or on the boundary of the ring.

    ``polygon`` is a sequence of (lat, lon) vertices; a repeated closing
    vertex is accepted and ignored.
    """
    return bool(points_in_region(np.array([lat]), np.array([lon]), polygon)[0])


def points_in_region(lat: np.ndarray, lon: np.ndarray, polygon) -> np.ndarray:
    """Vectorized membership test; returns a boolean array over the points."""
    px, py = _ring_arrays(polygon)  # x := lat, y := lon
    x = np.asarray(lat, dtype=np.float64)
    y = np.asarray(lon, dtype=np.float64)

    inside = np.zeros(x.shape, dtype=bool)
    boundary = np.zeros(x.shape, dtype=bool)
    n = len(px)
    for i in range(n):
        x1, y1 = px[i], py[i]
        x2, y2 = px[(i + 1) % n], py[(i + 1) % n]

        # collinear within edge bounding box => on the segment
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        on_seg = (
            (cross == 0.0)
            & (x >= min(x1, x2))
            & (x <= max(x1, x2))
            & (y >= min(y1, y2))
            & (y <= max(y1, y2))
        )
        boundary |= on_seg

        # even-odd crossing of the ray y = const toward +x
        straddles = (y1 > y) != (y2 > y)
        with np.errstate(invalid="ignore", divide="ignore"):
            x_at = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddles & (x < np.where(straddles, x_at, np.inf))

    return inside | boundary


def polygon_bbox(polygon) -> tuple[float, float, float, float]:
    """(lat_min, lat_max, lon_min, lon_max) of the ring."""
    px, py = _ring_arrays(polygon)
    return float(px.min()), float(px.max()), float(py.min()), float(py.max())
