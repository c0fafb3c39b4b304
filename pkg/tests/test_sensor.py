import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pralab.sensor import (
    Box3D, BoxClass, GeometryError, Scan, SensorConfig, angular_extent, cartesian_to_spherical,
    extent_center, extent_width, load_sensor_config, nearest_channel, points_per_degree,
    sensor_preset, spherical_to_cartesian, synthesize_ring_scan, wrap_deg,
)


def test_vlp16_preset(vlp16):
    assert vlp16.channel_count == 16
    assert vlp16.vertical_angles_deg == tuple(float(a) for a in range(-15, 16, 2))
    assert vlp16.azimuth_resolution_deg == 0.2
    assert vlp16.columns_per_rotation == 1800
    assert points_per_degree(vlp16) == pytest.approx(80.0)


def test_hdl64_preset(hdl64):
    assert hdl64.channel_count == 64
    assert hdl64.vertical_angles_deg[0] == pytest.approx(-24.8)
    assert hdl64.vertical_angles_deg[-1] == pytest.approx(2.0)


def test_unknown_preset():
    with pytest.raises(KeyError):
        sensor_preset("vlp17")
    with pytest.raises(ValueError, match="unknown sensor preset"):
        load_sensor_config("vlp17")


@pytest.mark.parametrize("kwargs, message", [
    (dict(channel_count=3, vertical_angles_deg=(0, 1)), "expected 3"),
    (dict(channel_count=2, vertical_angles_deg=(1, 0)), "increasing"),
    (dict(channel_count=2, vertical_angles_deg=(0, 1), azimuth_resolution_deg=0), "positive"),
    (dict(channel_count=2, vertical_angles_deg=(0, 1), internal_mot_m=2.0, recommended_mot_m=1.0), "internal_mot_m"),
])
def test_config_validation(kwargs, message):
    kwargs.setdefault("azimuth_resolution_deg", 0.2)
    with pytest.raises(ValueError, match=message):
        SensorConfig(**kwargs)


def test_config_file_round_trip(tmp_path, vlp16):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(vlp16.to_dict()))
    assert load_sensor_config(path) == vlp16
    assert SensorConfig.from_dict(vlp16.to_dict()) == vlp16


@pytest.mark.parametrize("angle, expected", [(-10, 350), (360, 0), (720.5, 0.5), (0, 0), (-1e-18, 0)])
def test_wrap_deg(angle, expected):
    assert wrap_deg(angle) == pytest.approx(expected)
    assert 0 <= wrap_deg(angle) < 360


def test_wrap_deg_array():
    out = wrap_deg(np.array([-90.0, 450.0]))
    np.testing.assert_allclose(out, [270.0, 90.0])


def test_spherical_known_point():
    r, az, el = cartesian_to_spherical((1.0, 1.0, 0.0))
    assert r == pytest.approx(math.sqrt(2))
    assert az == pytest.approx(45.0)
    assert el == pytest.approx(0.0)
    r, az, el = cartesian_to_spherical((0.0, -2.0, 2.0))
    assert (az, el) == (pytest.approx(270.0), pytest.approx(45.0))


@pytest.mark.parametrize("bad", [(0, 0, 0), (np.nan, 1, 1), (np.inf, 0, 0)])
def test_spherical_rejects(bad):
    with pytest.raises(GeometryError):
        cartesian_to_spherical(bad)


@given(st.floats(0.1, 200), st.floats(0, 359.999), st.floats(-89, 89))
def test_spherical_round_trip(r, az, el):
    r2, az2, el2 = cartesian_to_spherical(spherical_to_cartesian(r, az, el))
    assert r2 == pytest.approx(r, rel=1e-9)
    assert min(abs(az2 - az), 360 - abs(az2 - az)) < 1e-7
    assert el2 == pytest.approx(el, abs=1e-7)


def test_extent_of_square_ahead():
    box = Box3D(10.0, 0.0, 0.0, 2.0, 2.0, 1.0)
    ext = angular_extent(box)
    # widest corners at (9, +-1): 2 * atan(1/9)
    assert extent_width(ext) == pytest.approx(2 * math.degrees(math.atan(1 / 9)))
    assert extent_width(ext) == pytest.approx(12.680383, abs=1e-6)
    assert extent_center(ext) == pytest.approx(0.0, abs=1e-9) or extent_center(ext) == pytest.approx(360.0)


def test_extent_wraps_through_zero():
    start, end = angular_extent(Box3D(10.0, 0.0, 0.0, 2.0, 2.0, 1.0))
    assert start > end
    assert start == pytest.approx(360 - 6.340192, abs=1e-6)


def test_extent_behind():
    start, end = angular_extent(Box3D(-10.0, 0.0, 0.0, 2.0, 2.0, 1.0))
    assert extent_center((start, end)) == pytest.approx(180.0)


def test_extent_origin_inside():
    with pytest.raises(GeometryError):
        angular_extent(Box3D(0.0, 0.0, 0.0, 2.0, 2.0, 1.0))


@given(st.floats(3, 60), st.floats(0, 360), st.floats(0.3, 5), st.floats(0.3, 2), st.floats(-3.2, 3.2))
def test_extent_covers_footprint(d, az, l, w, yaw):
    a = math.radians(az)
    box = Box3D(d * math.cos(a), d * math.sin(a), 0, l, w, 1.0, yaw)
    start, end = angular_extent(box)
    width = extent_width((start, end))
    # a fine sample of the footprint outline stays inside the reported arc
    fp = box.footprint()
    t = np.linspace(0, 1, 50)[:, None]
    outline = np.vstack([fp[i] + t * (fp[(i + 1) % 4] - fp[i]) for i in range(4)])
    off = np.mod(np.degrees(np.arctan2(outline[:, 1], outline[:, 0])) - start, 360)
    assert np.all((off <= width + 1e-7) | (off >= 360 - 1e-7))
    # a convex footprint seen from outside subtends less than 180 degrees
    assert 0 < width < 180


def test_box_contains_rotated():
    box = Box3D(5.0, 5.0, 0.0, 4.0, 1.0, 2.0, math.pi / 4)
    along = np.array([math.cos(math.pi / 4), math.sin(math.pi / 4), 0.0])
    pts = np.array([[5, 5, 0], [5, 5, 0]]) + np.array([1.9 * along, 2.1 * along])
    assert box.contains(pts).tolist() == [True, False]
    assert box.contains(np.array([5.0, 5.0, 1.01])).tolist() == [False]


def test_box_rejects_bad_dims():
    with pytest.raises(ValueError):
        Box3D(0, 0, 0, 0, 1, 1)


def test_box_class_coerced():
    assert Box3D(0, 0, 0, 1, 1, 1, 0, "vehicle").class_label is BoxClass.VEHICLE


def test_ring_scan(vlp16, ring10):
    assert len(ring10) == 1800 * 16
    np.testing.assert_allclose(ring10.range_m, 10.0)
    # column-major ordering and firing timestamps
    assert ring10.channel[:16].tolist() == list(range(16))
    assert ring10.timestamp_us[16 + 3] == pytest.approx(55.296 + 3 * 2.304)
    assert ring10.azimuth_deg[16] == pytest.approx(0.2)


def test_ring_scan_range_bounds(vlp16):
    with pytest.raises(ValueError):
        synthesize_ring_scan(vlp16, [0.3] * 16)
    with pytest.raises(ValueError):
        synthesize_ring_scan(vlp16, [10.0] * 15)


def test_scan_is_read_only(ring10):
    with pytest.raises(ValueError):
        ring10.xyz[0, 0] = 1.0


def test_scan_validation(vlp16):
    with pytest.raises(ValueError, match="intensity"):
        Scan(np.ones((1, 3)), [1.5], [0], vlp16)
    with pytest.raises(ValueError, match="channel"):
        Scan(np.ones((1, 3)), [0.5], [16], vlp16)


def test_scan_subset_keeps_ids(ring10):
    sub = ring10.subset(ring10.channel == 3)
    assert len(sub) == 1800
    assert np.all(sub.point_id % 16 == 3)


def test_scan_getitem(ring10):
    p = ring10[17]
    assert p.channel == 1
    assert p.range_m == pytest.approx(10.0)


def test_scan_rotated(ring10):
    rot = ring10.rotated(90.0)
    d = np.mod(rot.azimuth_deg - ring10.azimuth_deg, 360)
    assert np.all((np.abs(d - 90) < 1e-9))
    np.testing.assert_allclose(rot.range_m, ring10.range_m)


def test_scan_concat(vlp16):
    a = Scan.from_xyz([[1, 0, 0]], [0.5], vlp16)
    b = Scan.from_xyz([[0, 1, 0]], [0.5], vlp16, point_id=[7])
    c = Scan.concat([a, b])
    assert c.point_id.tolist() == [0, 7]


def test_nearest_channel(vlp16):
    pts = np.array([spherical_to_cartesian(10, 0, el) for el in (-15.2, -0.9, 1.1, 14.0)])
    assert nearest_channel(pts, vlp16).tolist() == [0, 7, 8, 14]


def test_empty_scan(vlp16):
    s = Scan.empty(vlp16, frame_id=3)
    assert len(s) == 0 and s.frame_id == 3
