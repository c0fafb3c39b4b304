"""Removal-attack detectors: azimuth gaps and unexplained ground shadows."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from . import _kernels
from .attack import AzimuthInterval
from .perception import Cluster, euclidean_cluster
from .sensor import Scan, wrap_deg


class InsufficientDataError(ValueError):
    """The scan cannot support a verdict (e.g. it is empty)."""


class Method(str, Enum):
    AZIMUTH = "azimuth"
    FSD = "fsd"


@dataclass(frozen=True)
class AzimuthGapReport:
    gaps: tuple[tuple[float, float], ...]
    threshold_deg: float

    @property
    def is_attack(self) -> bool:
        return bool(self.gaps)

    @property
    def verdict(self) -> str:
        return "attack" if self.gaps else "benign"

    @property
    def widest(self) -> Optional[tuple[float, float]]:
        return max(self.gaps, key=lambda g: g[1]) if self.gaps else None


@dataclass(frozen=True)
class DetectionVerdict:
    method: Method
    is_attack: bool
    evidence: object

    def __post_init__(self):
        expected = AzimuthGapReport if self.method is Method.AZIMUTH else FSDReport
        if not isinstance(self.evidence, expected):
            raise TypeError(f"{self.method.value} verdict needs {expected.__name__} evidence")


def _as_interval(roi) -> Optional[AzimuthInterval]:
    if roi is None or isinstance(roi, AzimuthInterval):
        return roi
    start, end = roi
    return AzimuthInterval(wrap_deg(start), float((end - start) % 360.0) or 360.0)


def azimuth_gap_detect(scan: Scan, gap_threshold_deg: float = 1.0, roi=None) -> AzimuthGapReport:
    """Sort every return's azimuth and report jumps wider than the threshold.

    ``roi`` restricts the search to an azimuth span, given as an
    :class:`AzimuthInterval` or a ``(start_deg, end_deg)`` pair; its edges
    count as boundaries.  Without it the circle wraps through 0.
    """
    if len(scan) == 0:
        raise InsufficientDataError("empty scan: no azimuths to inspect")
    span = _as_interval(roi)
    if span is None:
        az = np.sort(scan.azimuth_deg)
        az = np.append(az, az[0] + 360.0)
        origin = 0.0
    else:
        off = np.mod(scan.azimuth_deg - span.start_deg, 360.0)
        off = np.sort(off[off <= span.width_deg])
        az = np.concatenate([[0.0], off, [span.width_deg]])
        origin = span.start_deg
    idx = _kernels.gap_indices(az, gap_threshold_deg)
    gaps = sorted(
        (wrap_deg(origin + az[i]), float(az[i + 1] - az[i])) for i in idx
    )
    return AzimuthGapReport(tuple(gaps), gap_threshold_deg)


def azimuth_detector(gap_threshold_deg: float = 1.0, roi=None) -> Callable[[Scan], DetectionVerdict]:
    def detect(scan: Scan) -> DetectionVerdict:
        report = azimuth_gap_detect(scan, gap_threshold_deg, roi)
        return DetectionVerdict(Method.AZIMUTH, report.is_attack, report)
    return detect


# ------------------------------------------------------------------ shadows

@dataclass(frozen=True)
class ShadowParams:
    ground_z_m: float = -1.73
    cell_m: float = 0.2
    max_range_m: float = 70.0
    height_band_m: float = 2.0
    ground_tol_m: float = 0.15
    az_bin_deg: float = 0.5


@dataclass(frozen=True, eq=False)
class _ShadowGrid:
    """Cells of the ground annulus that some downward beam observes."""

    ring_bounds: np.ndarray   # (n_rings + 1,) horizontal-range patch edges
    n_bins: int
    size: int                 # cells per grid side
    cell_flat: np.ndarray     # flat index of each observable cell
    cell_ring: np.ndarray
    cell_bin: np.ndarray
    cell_range: np.ndarray
    cell_az: np.ndarray


@lru_cache(maxsize=16)
def _shadow_grid(vertical_angles: tuple[float, ...], p: ShadowParams) -> _ShadowGrid:
    height = -p.ground_z_m
    down = np.radians([-a for a in vertical_angles if a < 0])
    rings = np.sort(height / np.tan(down))
    rings = rings[rings <= p.max_range_m]
    if len(rings) == 0:
        bounds = np.zeros(1)
    elif len(rings) == 1:
        bounds = np.array([rings[0] * 0.9, min(rings[0] * 1.1, p.max_range_m)])
    else:
        mids = (rings[1:] + rings[:-1]) / 2
        bounds = np.concatenate([
            [rings[0] - (mids[0] - rings[0])], mids,
            [min(rings[-1] + (rings[-1] - mids[-1]), p.max_range_m)],
        ])
    size = int(math.ceil(2 * p.max_range_m / p.cell_m))
    centers = (np.arange(size) + 0.5) * p.cell_m - p.max_range_m
    gx, gy = np.meshgrid(centers, centers, indexing="ij")
    rng = np.hypot(gx, gy).ravel()
    flat = np.flatnonzero((rng >= bounds[0]) & (rng < bounds[-1])) if len(bounds) > 1 else np.zeros(0, np.int64)
    az = wrap_deg(np.degrees(np.arctan2(gy.ravel()[flat], gx.ravel()[flat])))
    n_bins = int(round(360.0 / p.az_bin_deg))
    return _ShadowGrid(
        ring_bounds=bounds, n_bins=n_bins, size=size, cell_flat=flat,
        cell_ring=np.searchsorted(bounds, rng[flat], side="right") - 1,
        cell_bin=np.minimum((az / p.az_bin_deg).astype(np.int64), n_bins - 1),
        cell_range=rng[flat], cell_az=az,
    )


@dataclass(frozen=True, eq=False)
class ShadowRegion:
    cells: np.ndarray          # flat grid indices
    volume_m3: float
    near_ring: int
    az_interval: tuple[float, float]
    near_range_m: float
    associated_cluster: Optional[int] = None


def _covering_interval(az: np.ndarray) -> tuple[float, float]:
    """Smallest arc (start, end) covering all azimuths, wrap aware."""
    s = np.sort(az)
    gaps = np.diff(np.append(s, s[0] + 360.0))
    k = int(np.argmax(gaps))
    return float(s[(k + 1) % len(s)]), float(s[k])


def _arcs_overlap(a: tuple[float, float], b: tuple[float, float], pad: float = 0.0) -> bool:
    wa = (a[1] - a[0]) % 360.0 + 2 * pad
    wb = (b[1] - b[0]) % 360.0 + 2 * pad
    sa, sb = a[0] - pad, b[0] - pad
    d = (sb - sa) % 360.0
    return d <= wa or (360.0 - d) <= wb


def _ground_mask(scan: Scan, p: ShadowParams) -> np.ndarray:
    return np.abs(scan.xyz[:, 2] - p.ground_z_m) <= p.ground_tol_m


def _shadow_cells(scan: Scan, p: ShadowParams) -> tuple[_ShadowGrid, np.ndarray]:
    grid = _shadow_grid(scan.config.vertical_angles_deg, p)
    ground = _ground_mask(scan, p) if len(scan) else np.zeros(0, bool)
    if not ground.any():
        raise InsufficientDataError("no ground returns to derive shadows from")
    n_rings = len(grid.ring_bounds) - 1
    g_rng = np.hypot(scan.xyz[ground, 0], scan.xyz[ground, 1])
    g_ring = np.searchsorted(grid.ring_bounds, g_rng, side="right") - 1
    g_bin = np.minimum((scan.azimuth_deg[ground] / p.az_bin_deg).astype(np.int64), grid.n_bins - 1)
    ok = (g_ring >= 0) & (g_ring < n_rings)
    visible = np.zeros((max(n_rings, 1), grid.n_bins), bool)
    visible[g_ring[ok], g_bin[ok]] = True
    shadow = ~visible[grid.cell_ring, grid.cell_bin] if n_rings else np.zeros(0, bool)
    return grid, shadow


def shadow_regions(scan: Scan, params: ShadowParams = ShadowParams()) -> list[ShadowRegion]:
    """Connected patches of observable ground that returned nothing.

    A ground cell belongs to the beam (downward channel, azimuth bin) whose
    flat-ground footprint covers it; the cell is in shadow when that beam
    produced no ground return, whether it was blocked or never came back.
    """
    grid, shadow = _shadow_cells(scan, params)
    return _regions_from_mask(grid, grid.cell_flat[shadow], params)


def _regions_from_mask(grid: _ShadowGrid, flat: np.ndarray, p: ShadowParams) -> list[ShadowRegion]:
    if len(flat) == 0:
        return []
    img = np.zeros(grid.size * grid.size, bool)
    img[flat] = True
    labels, n = ndimage.label(img.reshape(grid.size, grid.size), structure=np.ones((3, 3)))
    lab = labels.ravel()[grid.cell_flat]
    pos = np.flatnonzero(lab)
    order = pos[np.argsort(lab[pos], kind="stable")]
    splits = np.flatnonzero(np.diff(lab[order])) + 1
    regions = []
    cell_vol = p.cell_m * p.cell_m * p.height_band_m
    for members in np.split(order, splits):
        regions.append(ShadowRegion(
            cells=grid.cell_flat[members],
            volume_m3=len(members) * cell_vol,
            near_ring=int(grid.cell_ring[members].min()),
            az_interval=_covering_interval(grid.cell_az[members]),
            near_range_m=float(grid.cell_range[members].min()),
        ))
    regions.sort(key=lambda r: int(r.cells.min()))
    return regions


def above_ground(scan: Scan, p: ShadowParams = ShadowParams()) -> Scan:
    keep = (scan.xyz[:, 2] > p.ground_z_m + p.ground_tol_m) & (
        np.hypot(scan.xyz[:, 0], scan.xyz[:, 1]) <= p.max_range_m)
    return scan.subset(keep)


def detect_objects(scan: Scan, p: ShadowParams = ShadowParams(), tolerance_m: float = 0.5,
                   min_points: int = 5) -> tuple[Scan, list[Cluster]]:
    """Cluster above-ground returns on the ground plane (z flattened)."""
    obj = above_ground(scan, p)
    flat = Scan(np.column_stack([obj.xyz[:, :2], np.zeros(len(obj))]), obj.intensity,
                obj.channel, obj.config, obj.frame_id, obj.timestamp_us, obj.point_id)
    return obj, euclidean_cluster(flat, tolerance_m, min_points)


@dataclass(frozen=True)
class _ClusterFootprint:
    az_interval: tuple[float, float]
    near_range_m: float
    near_ring: int


def _footprints(obj: Scan, clusters: Sequence[Cluster], grid: _ShadowGrid) -> list[_ClusterFootprint]:
    out = []
    pos = {int(pid): i for i, pid in enumerate(obj.point_id)}
    for c in clusters:
        idx = np.fromiter((pos[int(i)] for i in c.point_ids), np.int64, len(c.point_ids))
        rng = np.hypot(obj.xyz[idx, 0], obj.xyz[idx, 1])
        near = float(rng.min())
        ring = int(np.searchsorted(grid.ring_bounds, near, side="right") - 1)
        out.append(_ClusterFootprint(_covering_interval(obj.azimuth_deg[idx]), near, max(ring, 0)))
    return out


def _behind(fp: _ClusterFootprint, grid: _ShadowGrid, p: ShadowParams) -> np.ndarray:
    """Grid cells a cluster can shade: its padded azimuth span, its ring or farther."""
    start, end = fp.az_interval
    span = AzimuthInterval(wrap_deg(start - p.az_bin_deg), (end - start) % 360.0 + 2 * p.az_bin_deg + 1e-9)
    return span.contains(grid.cell_az) & (grid.cell_ring >= fp.near_ring)


def object_shadow_associate(
    clusters: Sequence[Cluster], shadows: Sequence[ShadowRegion], scan: Scan,
    params: ShadowParams = ShadowParams(),
) -> tuple[dict[int, Optional[int]], float]:
    """Match each cluster to a shadow region with cells lying behind it.

    Returns ``(mapping, rate)`` where ``mapping[i]`` is the region index for
    cluster ``i`` (or None) and ``rate`` the matched fraction (nan without
    clusters).
    """
    grid = _shadow_grid(scan.config.vertical_angles_deg, params)
    obj = scan.subset(np.isin(scan.point_id, np.concatenate([c.point_ids for c in clusters]))) \
        if clusters else scan
    owner = np.full(len(grid.cell_flat), -1)
    for j, region in enumerate(shadows):
        owner[np.searchsorted(grid.cell_flat, region.cells)] = j
    mapping: dict[int, Optional[int]] = {}
    for i, fp in enumerate(_footprints(obj, clusters, grid)):
        hit = owner[_behind(fp, grid, params) & (owner >= 0)]
        mapping[i] = int(hit.min()) if len(hit) else None
    rate = (sum(v is not None for v in mapping.values()) / len(mapping)) if mapping else math.nan
    return mapping, rate


@dataclass(frozen=True, eq=False)
class FSDReport:
    residual_volume_m3: float
    shadow_volume_m3: float
    threshold_m3: float
    regions: tuple[ShadowRegion, ...]
    residual_regions: tuple[ShadowRegion, ...]
    clusters: tuple[Cluster, ...]
    association: dict = field(default_factory=dict)
    association_rate: float = math.nan


def fake_shadow_detect(
    scan: Scan,
    volume_threshold_m3: float = 15.0,
    params: ShadowParams = ShadowParams(),
    tolerance_m: float = 0.5,
    min_points: int = 5,
) -> DetectionVerdict:
    """Flag scans whose shadow volume is not explained by detected objects.

    Each cluster explains the shadow cells behind it: those in its azimuth
    span (padded by one bin) on its own ground ring or farther out.
    """
    grid, shadow = _shadow_cells(scan, params)
    obj, clusters = detect_objects(scan, params, tolerance_m, min_points)
    explained = np.zeros(len(grid.cell_flat), bool)
    footprints = _footprints(obj, clusters, grid)
    for fp in footprints:
        explained |= _behind(fp, grid, params)
    cell_vol = params.cell_m ** 2 * params.height_band_m
    regions = _regions_from_mask(grid, grid.cell_flat[shadow], params)
    residual = _regions_from_mask(grid, grid.cell_flat[shadow & ~explained], params)
    residual_volume = float((shadow & ~explained).sum() * cell_vol)
    mapping, rate = object_shadow_associate(clusters, regions, scan, params)
    report = FSDReport(
        residual_volume_m3=residual_volume,
        shadow_volume_m3=float(shadow.sum() * cell_vol),
        threshold_m3=volume_threshold_m3,
        regions=tuple(regions), residual_regions=tuple(residual),
        clusters=tuple(clusters), association=mapping, association_rate=rate,
    )
    return DetectionVerdict(Method.FSD, residual_volume > volume_threshold_m3, report)


def fsd_detector(volume_threshold_m3: float = 15.0, params: ShadowParams = ShadowParams(),
                 **kwargs) -> Callable[[Scan], DetectionVerdict]:
    def detect(scan: Scan) -> DetectionVerdict:
        return fake_shadow_detect(scan, volume_threshold_m3, params, **kwargs)
    return detect


# --------------------------------------------------------------- evaluation

@dataclass(frozen=True)
class EvaluationResult:
    tpr: float
    tnr: float
    mean_runtime_ms: float
    p50_runtime_ms: float
    p95_runtime_ms: float
    true_positives: int
    false_negatives: int
    true_negatives: int
    false_positives: int
    errors: int = 0

    @property
    def scene_count(self) -> int:
        return self.true_positives + self.false_negatives + self.true_negatives + self.false_positives


def _flag(verdict) -> bool:
    return bool(verdict.is_attack if isinstance(verdict, DetectionVerdict) else verdict)


def evaluate(detector: Callable[[Scan], object], benign_scenes: Iterable[Scan],
             attack_scenes: Iterable[Scan]) -> EvaluationResult:
    """Confusion counts and per-scene wall-clock runtime of ``detector``.

    A scene the detector cannot judge (:class:`InsufficientDataError`) is
    counted as flagged.
    """
    benign, attacks = list(benign_scenes), list(attack_scenes)
    if not benign or not attacks:
        raise ValueError("need at least one benign and one attack scene")
    times: list[float] = []
    errors = 0

    def run(scan) -> bool:
        nonlocal errors
        t0 = time.perf_counter()
        try:
            flagged = _flag(detector(scan))
        except InsufficientDataError:
            errors += 1
            flagged = True
        times.append((time.perf_counter() - t0) * 1e3)
        return flagged

    tp = sum(run(s) for s in attacks)
    fp = sum(run(s) for s in benign)
    t = np.array(times)
    return EvaluationResult(
        tpr=tp / len(attacks), tnr=(len(benign) - fp) / len(benign),
        mean_runtime_ms=float(t.mean()), p50_runtime_ms=float(np.percentile(t, 50)),
        p95_runtime_ms=float(np.percentile(t, 95)),
        true_positives=tp, false_negatives=len(attacks) - tp,
        true_negatives=len(benign) - fp, false_positives=fp, errors=errors,
    )
