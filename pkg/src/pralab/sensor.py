"""Spinning-LiDAR geometry: sensor configs, scans, boxes and angular bookkeeping.

Azimuths follow ``atan2(y, x)`` in degrees, counterclockwise, wrapped to
``[0, 360)``.  Scans are stored column-wise as numpy arrays; a
:class:`CloudPoint` view is produced on indexing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class GeometryError(ValueError):
    """Raised when a geometric quantity is undefined for the given input."""


@dataclass(frozen=True)
class SensorConfig:
    channel_count: int
    vertical_angles_deg: tuple[float, ...]
    azimuth_resolution_deg: float
    rotation_period_ms: float = 100.0
    firing_cycle_us: float = 55.296
    firing_period_us: float = 2.304
    receive_window_ns: float = 667.0
    max_range_m: float = 100.0
    internal_mot_m: float = 0.40
    recommended_mot_m: float = 1.00
    name: str = "custom"

    def __post_init__(self):
        angles = tuple(float(a) for a in self.vertical_angles_deg)
        object.__setattr__(self, "vertical_angles_deg", angles)
        if len(angles) != self.channel_count:
            raise ValueError(
                f"expected {self.channel_count} vertical angles, got {len(angles)}"
            )
        if any(b <= a for a, b in zip(angles, angles[1:])):
            raise ValueError("vertical angles must be strictly increasing")
        if not self.azimuth_resolution_deg > 0:
            raise ValueError("azimuth_resolution_deg must be positive")
        if not 0 < self.internal_mot_m <= self.recommended_mot_m <= self.max_range_m:
            raise ValueError(
                "require 0 < internal_mot_m <= recommended_mot_m <= max_range_m"
            )

    @property
    def columns_per_rotation(self) -> int:
        return int(round(360.0 / self.azimuth_resolution_deg))

    @classmethod
    def from_dict(cls, data: dict) -> "SensorConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown sensor config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "SensorConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = {f: getattr(self, f) for f in self.__dataclass_fields__}
        out["vertical_angles_deg"] = list(self.vertical_angles_deg)
        return out


@lru_cache(maxsize=None)
def _presets() -> dict:
    text = resources.files("pralab").joinpath("data/presets.json").read_text()
    return json.loads(text)


def sensor_preset(name: str) -> SensorConfig:
    """Built-in sensor configuration by name (``vlp16``, ``hdl64``)."""
    try:
        return SensorConfig.from_dict(_presets()["sensors"][name])
    except KeyError:
        known = ", ".join(sorted(_presets()["sensors"]))
        raise KeyError(f"unknown sensor preset {name!r} (known: {known})") from None


def load_sensor_config(name_or_path: str | Path) -> SensorConfig:
    if str(name_or_path) in _presets()["sensors"]:
        return sensor_preset(str(name_or_path))
    if not Path(name_or_path).is_file():
        known = ", ".join(sorted(_presets()["sensors"]))
        raise ValueError(f"unknown sensor preset or file {str(name_or_path)!r} (presets: {known})")
    return SensorConfig.from_file(name_or_path)


@dataclass(frozen=True)
class CloudPoint:
    x: float
    y: float
    z: float
    intensity: float
    channel: int
    azimuth_deg: float
    range_m: float
    timestamp_us: float = 0.0


class BoxClass(str, Enum):
    PEDESTRIAN = "pedestrian"
    VEHICLE = "vehicle"
    OTHER = "other"


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    yaw: float = 0.0
    class_label: BoxClass = BoxClass.OTHER

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise ValueError("box dimensions must be positive")
        object.__setattr__(self, "class_label", BoxClass(self.class_label))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def footprint(self) -> np.ndarray:
        """The four ground-plane corners, shape (4, 2)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        half = np.array([[1, 1], [1, -1], [-1, -1], [-1, 1]]) * [self.l / 2, self.w / 2]
        rot = np.array([[c, -s], [s, c]])
        return half @ rot.T + [self.x, self.y]

    def corners(self) -> np.ndarray:
        """All eight corners, shape (8, 3)."""
        fp = self.footprint()
        lo = np.column_stack([fp, np.full(4, self.z - self.h / 2)])
        hi = np.column_stack([fp, np.full(4, self.z + self.h / 2)])
        return np.vstack([lo, hi])

    def contains(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.atleast_2d(xyz)
        d = xyz - self.center
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local_x = c * d[:, 0] + s * d[:, 1]
        local_y = -s * d[:, 0] + c * d[:, 1]
        return (
            (np.abs(local_x) <= self.l / 2)
            & (np.abs(local_y) <= self.w / 2)
            & (np.abs(d[:, 2]) <= self.h / 2)
        )

    def translated(self, dx: float = 0.0, dy: float = 0.0, dz: float = 0.0) -> "Box3D":
        return replace(self, x=self.x + dx, y=self.y + dy, z=self.z + dz)


def wrap_deg(angle):
    """Map degrees onto [0, 360)."""
    out = np.mod(angle, 360.0)
    # np.mod(-1e-18, 360.0) rounds to 360.0
    out = np.where(out >= 360.0, 0.0, out)
    return float(out) if np.ndim(out) == 0 else out


def cartesian_to_spherical(xyz: Sequence[float]) -> tuple[float, float, float]:
    """Return ``(range_m, azimuth_deg, elevation_deg)`` for a single point."""
    x, y, z = (float(v) for v in xyz)
    if not all(math.isfinite(v) for v in (x, y, z)):
        raise GeometryError("coordinates must be finite")
    r = math.sqrt(x * x + y * y + z * z)
    if r == 0.0:
        raise GeometryError("direction undefined for a zero-length vector")
    azimuth = wrap_deg(math.degrees(math.atan2(y, x)))
    elevation = math.degrees(math.asin(max(-1.0, min(1.0, z / r))))
    return r, azimuth, elevation


def spherical_to_cartesian(range_m: float, azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    if range_m < 0:
        raise GeometryError("range must be non-negative")
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    return np.array([
        range_m * math.cos(el) * math.cos(az),
        range_m * math.cos(el) * math.sin(az),
        range_m * math.sin(el),
    ])


def azimuths_deg(xyz: np.ndarray) -> np.ndarray:
    return wrap_deg(np.degrees(np.arctan2(xyz[:, 1], xyz[:, 0])))


def nearest_channel(xyz: np.ndarray, config: SensorConfig) -> np.ndarray:
    """Channel index whose vertical angle is closest to each point's elevation."""
    rng = np.linalg.norm(xyz, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        elev = np.degrees(np.arcsin(np.clip(xyz[:, 2] / np.where(rng > 0, rng, 1.0), -1, 1)))
    angles = np.asarray(config.vertical_angles_deg)
    idx = np.searchsorted(angles, elev)
    idx = np.clip(idx, 1, len(angles) - 1) if len(angles) > 1 else np.zeros_like(idx)
    if len(angles) > 1:
        left = angles[idx - 1]
        right = angles[idx]
        idx = np.where(np.abs(elev - left) <= np.abs(right - elev), idx - 1, idx)
    return idx.astype(np.int64)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Scan:
    """One rotation of returns, stored as parallel arrays.

    ``point_id`` is stable across filtering so removals can be traced;
    ``spoofed`` is provenance metadata that no filter reads.
    """

    xyz: np.ndarray
    intensity: np.ndarray
    channel: np.ndarray
    config: SensorConfig
    frame_id: int = 0
    timestamp_us: np.ndarray | None = None
    point_id: np.ndarray | None = None
    spoofed: np.ndarray | None = None
    azimuth_deg: np.ndarray = field(init=False, repr=False)
    range_m: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        n = len(xyz)
        intensity = np.asarray(self.intensity, dtype=np.float64).reshape(n)
        channel = np.asarray(self.channel, dtype=np.int64).reshape(n)
        if n and (intensity.min() < 0 or intensity.max() > 1):
            raise ValueError("intensity must lie in [0, 1]")
        if n and (channel.min() < 0 or channel.max() >= self.config.channel_count):
            raise ValueError("channel index out of range for sensor config")
        ts = np.zeros(n) if self.timestamp_us is None else np.asarray(self.timestamp_us, float).reshape(n)
        pid = np.arange(n, dtype=np.int64) if self.point_id is None else np.asarray(self.point_id, np.int64).reshape(n)
        spoofed = np.zeros(n, bool) if self.spoofed is None else np.asarray(self.spoofed, bool).reshape(n)
        for name, value in (
            ("xyz", xyz), ("intensity", intensity), ("channel", channel),
            ("timestamp_us", ts), ("point_id", pid), ("spoofed", spoofed),
            ("azimuth_deg", azimuths_deg(xyz)), ("range_m", np.linalg.norm(xyz, axis=1)),
        ):
            object.__setattr__(self, name, _frozen(value))

    @classmethod
    def from_xyz(cls, xyz, intensity, config: SensorConfig, **kwargs) -> "Scan":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        channel = kwargs.pop("channel", None)
        if channel is None:
            channel = nearest_channel(xyz, config)
        return cls(xyz=xyz, intensity=intensity, channel=channel, config=config, **kwargs)

    @classmethod
    def empty(cls, config: SensorConfig, frame_id: int = 0) -> "Scan":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0, np.int64), config, frame_id)

    def __len__(self) -> int:
        return len(self.xyz)

    def __getitem__(self, i: int) -> CloudPoint:
        x, y, z = self.xyz[i]
        return CloudPoint(float(x), float(y), float(z), float(self.intensity[i]),
                          int(self.channel[i]), float(self.azimuth_deg[i]),
                          float(self.range_m[i]), float(self.timestamp_us[i]))

    def __iter__(self) -> Iterator[CloudPoint]:
        return (self[i] for i in range(len(self)))

    def subset(self, mask_or_index) -> "Scan":
        sel = np.asarray(mask_or_index)
        return Scan(
            self.xyz[sel], self.intensity[sel], self.channel[sel], self.config,
            self.frame_id, self.timestamp_us[sel], self.point_id[sel], self.spoofed[sel],
        )

    def with_spoofed(self, spoofed) -> "Scan":
        return Scan(self.xyz, self.intensity, self.channel, self.config, self.frame_id,
                    self.timestamp_us, self.point_id, spoofed)

    def rotated(self, angle_deg: float) -> "Scan":
        """Rigid rotation about the sensor z axis."""
        a = math.radians(angle_deg)
        rot = np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])
        return Scan(self.xyz @ rot.T, self.intensity, self.channel, self.config, self.frame_id,
                    self.timestamp_us, self.point_id, self.spoofed)

    @staticmethod
    def concat(scans: Sequence["Scan"]) -> "Scan":
        first = scans[0]
        return Scan(
            np.vstack([s.xyz for s in scans]),
            np.concatenate([s.intensity for s in scans]),
            np.concatenate([s.channel for s in scans]),
            first.config, first.frame_id,
            np.concatenate([s.timestamp_us for s in scans]),
            np.concatenate([s.point_id for s in scans]),
            np.concatenate([s.spoofed for s in scans]),
        )


def angular_extent(box: Box3D, origin: Sequence[float] = (0.0, 0.0)) -> tuple[float, float]:
    """Smallest azimuth interval covering the box footprint as seen from ``origin``.

    Returns ``(min_azimuth_deg, max_azimuth_deg)``; when the interval wraps
    through 0 the first value is larger than the second.
    """
    ox, oy = float(origin[0]), float(origin[1])
    fp = box.footprint()
    if _inside_polygon(ox, oy, fp):
        raise GeometryError("origin lies inside the box footprint; extent is ambiguous")
    az = np.sort(wrap_deg(np.degrees(np.arctan2(fp[:, 1] - oy, fp[:, 0] - ox))))
    # the complement of the largest gap between sorted corner azimuths
    gaps = np.diff(np.append(az, az[0] + 360.0))
    k = int(np.argmax(gaps))
    start = az[(k + 1) % 4]
    end = az[k]
    return float(start), float(end)


def extent_width(interval: tuple[float, float]) -> float:
    start, end = interval
    return float((end - start) % 360.0)


def extent_center(interval: tuple[float, float]) -> float:
    start, _ = interval
    return float(wrap_deg(start + extent_width(interval) / 2.0))


def _inside_polygon(x: float, y: float, poly: np.ndarray) -> bool:
    sign = 0
    for i in range(len(poly)):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % len(poly)]
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if cross == 0:
            continue
        s = 1 if cross > 0 else -1
        if sign == 0:
            sign = s
        elif s != sign:
            return False
    return True


def points_per_degree(config: SensorConfig) -> float:
    return config.channel_count / config.azimuth_resolution_deg


def synthesize_ring_scan(
    config: SensorConfig,
    ranges_by_channel: Sequence[float],
    intensity: float = 0.5,
    frame_id: int = 0,
) -> Scan:
    """Dense scan with one return per (channel, column) at a fixed range per channel.

    Points are ordered column-major: all channels of column 0, then column 1...
    """
    ranges = np.asarray(ranges_by_channel, dtype=float)
    if ranges.shape != (config.channel_count,):
        raise ValueError(f"need one range per channel ({config.channel_count})")
    if np.any(ranges <= config.internal_mot_m) or np.any(ranges > config.max_range_m):
        raise ValueError(
            f"ranges must lie in ({config.internal_mot_m}, {config.max_range_m}] m"
        )
    ncol = config.columns_per_rotation
    az = np.radians(np.arange(ncol) * config.azimuth_resolution_deg)
    el = np.radians(np.asarray(config.vertical_angles_deg))
    cos_el, sin_el = np.cos(el), np.sin(el)
    xyz = np.empty((ncol, config.channel_count, 3))
    xyz[..., 0] = np.cos(az)[:, None] * (ranges * cos_el)[None, :]
    xyz[..., 1] = np.sin(az)[:, None] * (ranges * cos_el)[None, :]
    xyz[..., 2] = (ranges * sin_el)[None, :]
    channel = np.tile(np.arange(config.channel_count), ncol)
    ts = (np.arange(ncol)[:, None] * config.firing_cycle_us
          + np.arange(config.channel_count)[None, :] * config.firing_period_us).ravel()
    return Scan(
        xyz.reshape(-1, 3), np.full(ncol * config.channel_count, float(intensity)),
        channel, config, frame_id, timestamp_us=ts,
    )
