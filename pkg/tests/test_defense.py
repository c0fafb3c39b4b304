import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pralab.attack import AttackSpec, synthesize
from pralab.defense import (
    AzimuthGapReport, DetectionVerdict, InsufficientDataError, Method, ShadowParams,
    azimuth_detector, azimuth_gap_detect, evaluate, fake_shadow_detect, object_shadow_associate,
    shadow_regions,
)
from pralab.echo import chain_preset
from pralab.scenes import attack_scene, benign_scene, raycast_scene
from pralab.sensor import Box3D, Scan

APOLLO = chain_preset("vlp16-apollo")


@pytest.fixture(scope="module")
def ground_only(vlp16):
    return raycast_scene(vlp16, [])


def test_full_ring_has_no_gaps(ring10):
    report = azimuth_gap_detect(ring10)
    assert report.gaps == () and not report.is_attack and report.verdict == "benign"


def test_gap_from_attack(ring10):
    out, _ = synthesize(ring10, AttackSpec(90.0, 10.0), APOLLO)
    report = azimuth_gap_detect(out)
    assert len(report.gaps) == 1
    start, extent = report.gaps[0]
    # last surviving column 84.8, next 95.0
    assert start == pytest.approx(84.8)
    assert extent == pytest.approx(10.2)
    assert report.widest == report.gaps[0]


def test_gap_across_zero(ring10):
    out, _ = synthesize(ring10, AttackSpec(0.0, 10.0), APOLLO)
    (start, extent), = azimuth_gap_detect(out).gaps
    assert start == pytest.approx(354.8) and extent == pytest.approx(10.2)


def test_one_degree_attack_is_caught(ring10):
    out, _ = synthesize(ring10, AttackSpec(33.3, 1.0), APOLLO)
    assert azimuth_gap_detect(out, 1.0).is_attack
    assert not azimuth_gap_detect(out, 1.3).is_attack


def _brute_gaps(az, thr):
    """For every point, the clockwise distance to its nearest neighbour."""
    count = 0
    for i, a in enumerate(az):
        d = np.mod(np.delete(az, i) - a, 360.0)
        d = d[d > 0]
        nxt = d.min() if len(d) else 360.0
        dup = np.sum(az == a) > 1 and i != np.flatnonzero(az == a)[-1]
        if not dup and nxt > thr:
            count += 1
    return count


@given(st.lists(st.floats(0, 359.9, allow_subnormal=False), min_size=1, max_size=60), st.floats(0.5, 30))
def test_gap_count_matches_brute_force(vlp16, azs, thr):
    az = np.radians(np.array(azs))
    xyz = np.column_stack([10 * np.cos(az), 10 * np.sin(az), np.zeros(len(az))])
    scan = Scan.from_xyz(xyz, np.full(len(az), 0.5), vlp16)
    az_deg = scan.azimuth_deg
    d = np.abs(np.mod(az_deg[:, None] - az_deg[None] + 180, 360) - 180)
    if np.any(np.abs(d - thr) < 1e-9):
        return
    assert len(azimuth_gap_detect(scan, thr).gaps) == _brute_gaps(az_deg, thr)


def test_roi_ignores_gaps_outside(ring10):
    out, _ = synthesize(ring10, AttackSpec(200.0, 10.0), APOLLO)
    assert not azimuth_gap_detect(out, 1.0, roi=(80.0, 120.0)).is_attack
    assert azimuth_gap_detect(out, 1.0, roi=(180.0, 220.0)).is_attack


def test_roi_edge_counts_as_boundary(ring10):
    out, _ = synthesize(ring10, AttackSpec(80.0, 10.0), APOLLO)
    (start, extent), = azimuth_gap_detect(out, 1.0, roi=(80.0, 120.0)).gaps
    assert start == pytest.approx(80.0) and extent == pytest.approx(5.0)


def test_empty_scan_is_an_error(vlp16):
    with pytest.raises(InsufficientDataError):
        azimuth_gap_detect(Scan.empty(vlp16))


def test_verdict_checks_evidence():
    with pytest.raises(TypeError):
        DetectionVerdict(Method.FSD, True, AzimuthGapReport((), 1.0))


def test_detector_factory(ring10):
    v = azimuth_detector()(ring10)
    assert v.method is Method.AZIMUTH and v.is_attack is False


def test_flat_ground_has_no_shadow(ground_only):
    assert shadow_regions(ground_only) == []
    v = fake_shadow_detect(ground_only)
    assert not v.is_attack and v.evidence.residual_volume_m3 == 0.0


def test_removed_wedge_shadow_volume(ground_only):
    p = ShadowParams()
    keep = ~((ground_only.azimuth_deg >= 90.0) & (ground_only.azimuth_deg < 100.0))
    v = fake_shadow_detect(ground_only.subset(keep), params=p)
    from pralab.defense import _shadow_grid
    bounds = _shadow_grid(ground_only.config.vertical_angles_deg, p).ring_bounds
    # annular wedge between the innermost and outermost observable ground patch
    area = math.pi * (bounds[-1] ** 2 - bounds[0] ** 2) * 10.0 / 360.0
    assert v.evidence.residual_volume_m3 == pytest.approx(area * p.height_band_m, rel=0.03)
    assert v.is_attack
    assert len(v.evidence.regions) == 1


def test_ring_bounds_follow_beam_geometry(vlp16):
    from pralab.defense import _shadow_grid
    b = _shadow_grid(vlp16.vertical_angles_deg, ShadowParams()).ring_bounds
    r15, r13 = 1.73 / math.tan(math.radians(15)), 1.73 / math.tan(math.radians(13))
    assert b[1] == pytest.approx((r15 + r13) / 2)


def test_no_ground_is_insufficient(ring10):
    with pytest.raises(InsufficientDataError):
        fake_shadow_detect(ring10)


def test_object_shadow_is_explained(vlp16):
    car = Box3D(12.0, 3.0, -1.73 + 0.75, 4.5, 1.8, 1.5, 0.3, "vehicle")
    scan = raycast_scene(vlp16, [car])
    v = fake_shadow_detect(scan)
    assert not v.is_attack
    assert v.evidence.shadow_volume_m3 > 15.0
    assert v.evidence.residual_volume_m3 == 0.0
    assert v.evidence.association_rate == 1.0


def test_removed_object_leaves_unexplained_shadow(vlp16):
    car = Box3D(12.0, 3.0, -1.73 + 0.75, 4.5, 1.8, 1.5, 0.3, "vehicle")
    scan = raycast_scene(vlp16, [car])
    center = math.degrees(math.atan2(3.0, 12.0))
    out, _ = synthesize(scan, AttackSpec(center, 25.0, spoof_range_m=0.45), APOLLO, targets=[car])
    assert not car.contains(out.xyz).any()
    v = fake_shadow_detect(out)
    assert v.is_attack and v.evidence.residual_volume_m3 > 15.0


def test_association_without_clusters(ground_only):
    mapping, rate = object_shadow_associate([], [], ground_only)
    assert mapping == {} and math.isnan(rate)


def test_synthetic_scenes(vlp16):
    rng = np.random.default_rng(5)
    benign = benign_scene(vlp16, rng).scan
    attacked = attack_scene(vlp16, rng, APOLLO).scan
    assert not azimuth_gap_detect(benign).is_attack
    assert azimuth_gap_detect(attacked).is_attack
    assert fake_shadow_detect(attacked).is_attack


def test_evaluate_counts(ring10, vlp16):
    benign = [ring10] * 3
    attacks = [ring10] * 2
    res = evaluate(lambda s: True, benign, attacks)
    assert (res.tpr, res.tnr, res.true_positives, res.false_positives) == (1.0, 0.0, 2, 3)
    assert res.scene_count == 5
    assert res.mean_runtime_ms >= 0


def test_evaluate_counts_undecidable_as_flagged(ring10, vlp16):
    def picky(scan):
        raise InsufficientDataError("nope")
    res = evaluate(picky, [ring10], [ring10])
    assert res.errors == 2 and res.tpr == 1.0 and res.tnr == 0.0


def test_evaluate_needs_both_sets(ring10):
    with pytest.raises(ValueError):
        evaluate(lambda s: False, [], [ring10])
