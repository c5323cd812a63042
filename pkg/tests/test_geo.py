import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridplan.errors import DomainError, InsufficientLengthError
from gridplan.geo import (EARTH_RADIUS, GeoPoint, arc_lengths, from_ego_frame,
                          interpolate_trajectory, local_to_wgs84, offset_polyline,
                          project_onto_polyline, to_ego_frame, wgs84_to_local, wrap_angle)


def test_projection_identity():
    o = GeoPoint(32.88, -117.23)
    assert wgs84_to_local(o, o) == (0.0, 0.0)


def test_projection_meridian_step():
    p = wgs84_to_local(GeoPoint(0, 0), GeoPoint(0.001, 0))
    # 0.001 deg of arc on a sphere of radius R
    assert p.y == pytest.approx(0.001 * math.pi / 180 * EARTH_RADIUS, rel=1e-12)
    assert p.y == pytest.approx(111.319, abs=1e-3)
    assert p.x == 0.0


def test_projection_high_latitude_scaling():
    p = wgs84_to_local(GeoPoint(89.9, 0), GeoPoint(89.9, 0.001))
    assert p.x == pytest.approx(0.194, abs=5e-4)
    assert p.y == 0.0


@pytest.mark.parametrize("bad", [GeoPoint(91, 0), GeoPoint(-90.5, 0), GeoPoint(0, 181)])
def test_projection_domain(bad):
    with pytest.raises(DomainError):
        wgs84_to_local(bad, bad)


def test_projection_inverse():
    o = GeoPoint(32.88, -117.23)
    q = (123.4, -56.7)
    back = wgs84_to_local(o, local_to_wgs84(o, q))
    assert back.x == pytest.approx(q[0], abs=1e-9)
    assert back.y == pytest.approx(q[1], abs=1e-9)


@pytest.mark.parametrize("ego,pts,expected", [
    ((0, 0, 0), [(1, 2)], [(1, 2)]),
    ((0, 0, math.pi / 2), [(0, 1)], [(1, 0)]),
    ((5, 5, math.pi), [(4, 5)], [(1, 0)]),
])
def test_to_ego_frame_examples(ego, pts, expected):
    np.testing.assert_allclose(to_ego_frame(ego, pts), expected, atol=1e-12)


def test_wrap_angle():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)


coords = st.floats(-1e3, 1e3, allow_nan=False)
poses = st.tuples(coords, coords, st.floats(-math.pi, math.pi))
clouds = st.lists(st.tuples(coords, coords), min_size=2, max_size=12)


@given(poses, clouds)
def test_ego_frame_is_isometry(ego, pts):
    pts = np.array(pts)
    out = to_ego_frame(ego, pts)
    d_in = np.hypot(*(pts[:, None] - pts[None]).transpose(2, 0, 1))
    d_out = np.hypot(*(out[:, None] - out[None]).transpose(2, 0, 1))
    np.testing.assert_allclose(d_out, d_in, rtol=1e-9, atol=1e-9)


@given(poses)
def test_ego_maps_to_origin(ego):
    np.testing.assert_allclose(to_ego_frame(ego, [ego[:2]]), [[0, 0]], atol=1e-12)


@given(poses, clouds)
def test_ego_frame_round_trip(ego, pts):
    np.testing.assert_allclose(from_ego_frame(ego, to_ego_frame(ego, pts)), pts, atol=1e-9)


def test_interpolate_straight():
    out = interpolate_trajectory([(0, 0), (40, 0)], 3, 10)
    np.testing.assert_allclose(out, [(3.0 * i, 0) for i in range(1, 11)], atol=1e-12)


def test_interpolate_corner():
    out = interpolate_trajectory([(0, 0), (15, 0), (15, 20)], 3, 10)
    np.testing.assert_allclose(out[:5], [(3, 0), (6, 0), (9, 0), (12, 0), (15, 0)], atol=1e-12)
    np.testing.assert_allclose(out[5], (15, 3), atol=1e-12)
    np.testing.assert_allclose(out[-1], (15, 15), atol=1e-12)


def test_interpolate_too_short():
    with pytest.raises(InsufficientLengthError) as exc:
        interpolate_trajectory([(0, 0), (10, 0)], 3, 10)
    assert exc.value.available == pytest.approx(10.0)


def _arc_position(poly, p):
    return project_onto_polyline(poly, p)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=2, max_size=8),
       st.integers(0, 2**31))
def test_interpolate_spacing_along_curve(steps, seed):
    # random polyline of total length >= 30 built from a random walk
    rng = np.random.default_rng(seed)
    pts = [np.zeros(2)]
    while arc_lengths(np.array(pts))[-1] < 35:
        step = rng.normal(size=2)
        pts.append(pts[-1] + 6 * step / max(np.linalg.norm(step), 1e-3))
    poly = np.array(pts)
    out = interpolate_trajectory(poly, 3.0, 10)
    # every output lies on the curve at arc length 3k: walk the curve independently
    cum = arc_lengths(poly)
    for k, q in enumerate(out, start=1):
        s = 3.0 * k
        i = np.searchsorted(cum, s) - 1
        i = max(0, min(i, len(poly) - 2))
        t = (s - cum[i]) / (cum[i + 1] - cum[i])
        np.testing.assert_allclose(q, poly[i] + t * (poly[i + 1] - poly[i]), atol=1e-6)
    chords = np.hypot(*np.diff(np.vstack([poly[:1], out]), axis=0).T)
    assert np.all(chords <= 3.0 + 1e-6)


def test_offset_polyline_keeps_distance():
    poly = np.array([(0, 0), (10, 0), (10, 10)])
    right = offset_polyline(poly, -1.5)
    np.testing.assert_allclose(right, [(0, -1.5), (11.5, -1.5), (11.5, 10)], atol=1e-12)
