"""Coordinate frames, projections and trajectory resampling.

Conventions used throughout the package:

* local frames are metric, x east (or forward), y north (or left);
* headings are radians, counter-clockwise, 0 along +x, normalized to (-pi, pi];
* the ego frame puts the vehicle at the origin facing +x.
"""
import math
from typing import NamedTuple

import numpy as np

from .errors import DomainError, InsufficientLengthError

EARTH_RADIUS = 6378137.0


class GeoPoint(NamedTuple):
    lat: float
    lon: float


class LocalPoint(NamedTuple):
    x: float
    y: float


class Pose2D(NamedTuple):
    x: float
    y: float
    heading: float

    @property
    def position(self):
        return LocalPoint(self.x, self.y)

    def normalized(self):
        return Pose2D(self.x, self.y, wrap_angle(self.heading))


def wrap_angle(a):
    """Map an angle onto (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def _check_geo(p):
    if not -90.0 <= p.lat <= 90.0 or not math.isfinite(p.lat):
        raise DomainError(f"latitude {p.lat} outside [-90, 90]")
    if not -180.0 <= p.lon <= 180.0 or not math.isfinite(p.lon):
        raise DomainError(f"longitude {p.lon} outside [-180, 180]")


def wgs84_to_local(origin, p):
    """Equirectangular projection of ``p`` about ``origin``, in meters."""
    _check_geo(origin)
    _check_geo(p)
    if abs(p.lat - origin.lat) >= 1.0 or abs(p.lon - origin.lon) >= 1.0:
        raise DomainError("point is more than 1 degree from the projection origin")
    k = math.pi / 180.0
    x = (p.lon - origin.lon) * k * EARTH_RADIUS * math.cos(origin.lat * k)
    y = (p.lat - origin.lat) * k * EARTH_RADIUS
    return LocalPoint(x, y)


def local_to_wgs84(origin, q):
    """Inverse of :func:`wgs84_to_local`."""
    _check_geo(origin)
    k = math.pi / 180.0
    lat = origin.lat + q[1] / (k * EARTH_RADIUS)
    lon = origin.lon + q[0] / (k * EARTH_RADIUS * math.cos(origin.lat * k))
    return GeoPoint(lat, lon)


def haversine(a, b):
    """Great-circle distance in meters between two GeoPoints."""
    k = math.pi / 180.0
    dlat = (b.lat - a.lat) * k
    dlon = (b.lon - a.lon) * k
    h = math.sin(dlat / 2) ** 2 + math.cos(a.lat * k) * math.cos(b.lat * k) * math.sin(dlon / 2) ** 2
    return 2.0 * EARTH_RADIUS * math.asin(min(1.0, math.sqrt(h)))


def rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def to_ego_frame(ego, pts):
    """Express ``pts`` (N x 2, map frame) in the frame of pose ``ego``."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    d = pts - np.array([ego[0], ego[1]])
    c, s = math.cos(ego[2]), math.sin(ego[2])
    # rotate by -heading
    return np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]], axis=1)


def from_ego_frame(ego, pts):
    """Inverse of :func:`to_ego_frame`."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    c, s = math.cos(ego[2]), math.sin(ego[2])
    x = c * pts[:, 0] - s * pts[:, 1] + ego[0]
    y = s * pts[:, 0] + c * pts[:, 1] + ego[1]
    return np.stack([x, y], axis=1)


def arc_lengths(poly):
    poly = np.asarray(poly, dtype=float)
    seg = np.hypot(*np.diff(poly, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def sample_polyline(poly, s):
    """Points at arc-lengths ``s`` along the piecewise-linear curve ``poly``.

    ``s`` must lie within [0, total length]; values are clipped to it.
    """
    poly = np.asarray(poly, dtype=float)
    cum = arc_lengths(poly)
    s = np.clip(np.asarray(s, dtype=float), 0.0, cum[-1])
    idx = np.searchsorted(cum, s, side="right") - 1
    idx = np.clip(idx, 0, len(poly) - 2)
    seg = cum[idx + 1] - cum[idx]
    t = np.where(seg > 0, (s - cum[idx]) / np.where(seg > 0, seg, 1.0), 0.0)
    return poly[idx] + t[:, None] * (poly[idx + 1] - poly[idx])


def interpolate_trajectory(raw, spacing=3.0, count=10):
    """Resample a polyline to ``count`` points at arc-lengths spacing, 2*spacing, ...

    The first vertex of ``raw`` is the start of the curve and is not emitted.
    Raises InsufficientLengthError when the curve is shorter than
    ``spacing * count``.
    """
    raw = np.asarray(raw, dtype=float).reshape(-1, 2)
    if len(raw) < 2:
        raise DomainError("need at least two points to interpolate")
    total = arc_lengths(raw)[-1]
    need = spacing * count
    if total < need - 1e-9:
        raise InsufficientLengthError(total, need)
    s = spacing * np.arange(1, count + 1)
    return sample_polyline(raw, s)


def offset_polyline(poly, offset):
    """Parallel curve at signed lateral ``offset`` (positive = left of travel).

    Vertices are displaced along the miter direction so that both adjacent
    segments stay exactly ``offset`` away.
    """
    poly = np.asarray(poly, dtype=float)
    d = np.diff(poly, axis=0)
    n = np.hypot(d[:, 0], d[:, 1])[:, None]
    t = d / n
    left = np.stack([-t[:, 1], t[:, 0]], axis=1)
    out = np.empty_like(poly)
    out[0] = poly[0] + offset * left[0]
    out[-1] = poly[-1] + offset * left[-1]
    for i in range(1, len(poly) - 1):
        m = left[i - 1] + left[i]
        denom = 1.0 + float(left[i - 1] @ left[i])
        if denom < 1e-6:
            # reversal: no finite miter
            out[i] = poly[i] + offset * left[i]
        else:
            out[i] = poly[i] + offset * m / denom
    return out


def project_onto_polyline(poly, p):
    """Arc-length of the point on ``poly`` closest to ``p``."""
    poly = np.asarray(poly, dtype=float)
    a, b = poly[:-1], poly[1:]
    ab = b - a
    L2 = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", np.asarray(p, float) - a, ab) / np.where(L2 > 0, L2, 1.0), 0, 1)
    q = a + t[:, None] * ab
    dist = np.hypot(*(q - p).T)
    k = int(np.argmin(dist))
    cum = arc_lengths(poly)
    return cum[k] + t[k] * math.sqrt(L2[k])
