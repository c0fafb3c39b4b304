"""Physical removal attack synthesis on scans.

Every firing column inside the attack sector receives an extra spoofed
echo at ``spoof_range_m``.  The sensor then picks returns per its mode and
the filter cascade drops anything closer than the spoofing-region width,
so an injection inside the region erases the column.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .echo import (
    FilterChain, ReturnMode, SaturationPolicy, mot_mask, select_returns_pairwise,
    spoofing_region_width,
)
from .sensor import Box3D, Scan, angular_extent, extent_center, wrap_deg

# tolerance on sector edges, in degrees, so grid azimuths such as 0.2 * k
# land on the intended side despite rounding
SECTOR_EPS_DEG = 1e-6


class AttackMode(str, Enum):
    IDEAL = "ideal"
    CAPABILITY_LIMITED = "capability_limited"


class NoTargetPointsError(ValueError):
    pass


@dataclass(frozen=True)
class AzimuthInterval:
    """Half-open azimuth interval ``[start, start + width)`` on the circle."""

    start_deg: float
    width_deg: float

    @property
    def end_deg(self) -> float:
        return wrap_deg(self.start_deg + self.width_deg)

    @property
    def is_empty(self) -> bool:
        return self.width_deg <= 0

    def contains(self, azimuth_deg) -> np.ndarray:
        az = np.asarray(azimuth_deg, dtype=float)
        if self.width_deg <= 0:
            return np.zeros(az.shape, bool)
        if self.width_deg >= 360:
            return np.ones(az.shape, bool)
        offset = np.mod(az - self.start_deg + SECTOR_EPS_DEG, 360.0)
        return offset < self.width_deg

    def offset_from_center(self, azimuth_deg) -> np.ndarray:
        center = self.start_deg + self.width_deg / 2.0
        d = np.mod(np.asarray(azimuth_deg, float) - center + 180.0, 360.0) - 180.0
        return np.abs(d)


@dataclass(frozen=True)
class AttackSpec:
    center_azimuth_deg: float
    attack_angle_deg: float
    spoof_range_m: float = 0.2
    spoof_intensity: float = 1.0
    mode: AttackMode = AttackMode.IDEAL
    spoofer_distance_m: float = 2.5

    def __post_init__(self):
        if not 0 <= self.attack_angle_deg <= 360:
            raise ValueError("attack angle must lie in [0, 360]")
        if not self.spoof_range_m > 0:
            raise ValueError("spoof range must be positive")
        if not 0 <= self.spoof_intensity <= 1:
            raise ValueError("spoof intensity must lie in [0, 1]")
        object.__setattr__(self, "mode", AttackMode(self.mode))


@dataclass(frozen=True)
class CapabilityModel:
    max_stable_angle_deg: float = 45.0
    removal_rate_pts_per_deg: float = 80.0
    distance_capacity: tuple[tuple[float, float], ...] = ()
    daylight_factor: float = 1.0

    def __post_init__(self):
        pts = tuple((float(d), float(c)) for d, c in self.distance_capacity)
        object.__setattr__(self, "distance_capacity", pts)
        if any(b[0] <= a[0] for a, b in zip(pts, pts[1:])):
            raise ValueError("capacity distances must be strictly increasing")
        if any(c < 0 for _, c in pts):
            raise ValueError("capacities must be non-negative")
        if not 0 < self.daylight_factor <= 1:
            raise ValueError("daylight_factor must lie in (0, 1]")

    def capacity(self, spoofer_distance_m: Optional[float]) -> float:
        """Removable points at a spoofer distance; unlimited without a curve.

        Outside the tabulated range the nearest end value is used.
        """
        if spoofer_distance_m is None or not self.distance_capacity:
            return math.inf
        d, c = np.array(self.distance_capacity).T
        return float(np.interp(spoofer_distance_m, d, c))

    @classmethod
    def from_dict(cls, data: dict) -> "CapabilityModel":
        data = {k: v for k, v in data.items() if not k.startswith("_")}
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "CapabilityModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def default_capability() -> CapabilityModel:
    """Shipped outdoor curve (approximate; see the data file note)."""
    text = resources.files("pralab").joinpath("data/capability_outdoor.json").read_text()
    return CapabilityModel.from_dict(json.loads(text))


@dataclass
class AttackResult:
    sector: AzimuthInterval
    sector_point_ids: np.ndarray
    removed_point_ids: np.ndarray
    injected: Optional[Scan]
    removal_percentage: dict[int, float] = field(default_factory=dict)

    @property
    def surviving_sector_ids(self) -> np.ndarray:
        return np.setdiff1d(self.sector_point_ids, self.removed_point_ids)

    @property
    def removed_count(self) -> int:
        return int(len(self.removed_point_ids))


def attack_sector(spec: AttackSpec) -> AzimuthInterval:
    width = float(spec.attack_angle_deg)
    return AzimuthInterval(wrap_deg(spec.center_azimuth_deg - width / 2.0), width)


def chord_length(target_distance_m: float, attack_angle_deg: float) -> float:
    """Lateral width the sector spans at the target distance."""
    if target_distance_m < 0:
        raise ValueError("distance must be non-negative")
    if not 0 <= attack_angle_deg <= 360:
        raise ValueError("angle must lie in [0, 360]")
    return 2.0 * target_distance_m * math.sin(math.radians(attack_angle_deg) / 2.0)


def expected_removed_points(cap: CapabilityModel, attack_angle_deg: float,
                            spoofer_distance_m: Optional[float] = None) -> float:
    if attack_angle_deg < 0:
        raise ValueError("angle must be non-negative")
    linear = cap.removal_rate_pts_per_deg * min(attack_angle_deg, cap.max_stable_angle_deg)
    return min(linear, cap.capacity(spoofer_distance_m) * cap.daylight_factor)


def _affected_mask(scan: Scan, spec: AttackSpec, sector: AzimuthInterval,
                   cap: Optional[CapabilityModel]) -> np.ndarray:
    in_sector = sector.contains(scan.azimuth_deg)
    if spec.mode is AttackMode.IDEAL:
        return in_sector
    cap = cap or CapabilityModel()
    budget = int(math.floor(expected_removed_points(cap, spec.attack_angle_deg, spec.spoofer_distance_m)))
    idx = np.flatnonzero(in_sector)
    if budget >= len(idx):
        return in_sector
    # consume columns from the sector centre outward; ties broken by point id
    order = np.lexsort((scan.point_id[idx], np.round(sector.offset_from_center(scan.azimuth_deg[idx]), 9)))
    mask = np.zeros(len(scan), bool)
    mask[idx[order[:budget]]] = True
    return mask


def synthesize(
    scan: Scan,
    spec: AttackSpec,
    chain: FilterChain,
    policy: SaturationPolicy = SaturationPolicy(),
    cap: Optional[CapabilityModel] = None,
    mode: ReturnMode = ReturnMode.STRONGEST,
    targets: Sequence[Box3D] = (),
) -> tuple[Scan, AttackResult]:
    """Apply the attack, the return selection and the MOT filter to ``scan``."""
    sector = attack_sector(spec)
    if sector.is_empty or len(scan) == 0:
        result = AttackResult(sector, np.zeros(0, np.int64), np.zeros(0, np.int64), None)
        result.removal_percentage = {i: _rp_or_nan(scan, scan, t) for i, t in enumerate(targets)}
        return scan, result

    affected = _affected_mask(scan, spec, sector, cap)
    a_idx = np.flatnonzero(affected)
    spoof_r = np.full(len(a_idx), float(spec.spoof_range_m))
    spoof_i = np.full(len(a_idx), float(spec.spoof_intensity))
    keep_gen, keep_spoof = select_returns_pairwise(
        scan.range_m[a_idx], scan.intensity[a_idx], spoof_r, spoof_i, mode, policy,
    )

    keep = np.ones(len(scan), bool)
    keep[a_idx] = keep_gen
    keep &= mot_mask(scan.range_m, chain)
    genuine_out = scan.subset(keep)

    s_idx = a_idx[keep_spoof]
    injected = None
    if len(s_idx) and spec.spoof_range_m >= spoofing_region_width(chain):
        unit = scan.xyz[s_idx] / scan.range_m[s_idx, None]
        next_id = int(scan.point_id.max()) + 1 if len(scan) else 0
        injected = Scan(
            unit * spec.spoof_range_m, np.full(len(s_idx), float(spec.spoof_intensity)),
            scan.channel[s_idx], scan.config, scan.frame_id,
            scan.timestamp_us[s_idx], np.arange(next_id, next_id + len(s_idx)),
            np.ones(len(s_idx), bool),
        )
        out = Scan.concat([genuine_out, injected])
    else:
        out = genuine_out

    removed = scan.point_id[a_idx[~keep[a_idx]]]
    result = AttackResult(
        sector=sector,
        sector_point_ids=scan.point_id[sector.contains(scan.azimuth_deg)],
        removed_point_ids=np.sort(removed),
        injected=injected,
    )
    result.removal_percentage = {i: _rp_or_nan(scan, out, t) for i, t in enumerate(targets)}
    return out, result


def removal_percentage(before: Scan, after: Scan, target: Box3D) -> float:
    if before.frame_id != after.frame_id:
        raise ValueError("scans belong to different frames")
    n_before = int(target.contains(before.xyz).sum()) if len(before) else 0
    if n_before == 0:
        raise NoTargetPointsError("target has no points in the reference scan")
    n_after = int(target.contains(after.xyz).sum()) if len(after) else 0
    return 100.0 * (n_before - n_after) / n_before


def _rp_or_nan(before: Scan, after: Scan, target: Box3D) -> float:
    try:
        return removal_percentage(before, after, target)
    except NoTargetPointsError:
        return math.nan


def target_center_azimuth(target: Box3D, origin=(0.0, 0.0)) -> float:
    return extent_center(angular_extent(target, origin))


def min_attack_angle(
    scan: Scan,
    target: Box3D,
    step_deg: float = 1.0,
    chain: Optional[FilterChain] = None,
    max_angle_deg: float = 360.0,
) -> float:
    """Smallest multiple of ``step_deg`` whose centred sector removes the whole target."""
    in_box = target.contains(scan.xyz) if len(scan) else np.zeros(0, bool)
    if not in_box.any():
        raise NoTargetPointsError("target has no points in the scan")
    chain = chain or FilterChain(0.40, 0.40, 0.90)
    sub = scan.subset(in_box)
    center = target_center_azimuth(target)
    spoof_r = spoofing_region_width(chain) / 2.0
    k = 1
    while k * step_deg <= max_angle_deg + 1e-12:
        spec = AttackSpec(center, min(k * step_deg, 360.0), spoof_range_m=spoof_r)
        after, _ = synthesize(sub, spec, chain)
        if removal_percentage(sub, after, target) >= 100.0:
            return k * step_deg
        k += 1
    raise NoTargetPointsError("target not fully removable within max_angle_deg")
