"""Echo selection and the sensor -> middleware -> framework filter cascade."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .sensor import Scan, _presets


@dataclass(frozen=True)
class Echo:
    range_m: float
    intensity: float
    # simulation provenance only; never read by any filter
    spoofed: bool = False

    def __post_init__(self):
        if not self.range_m > 0:
            raise ValueError("echo range must be positive")


@dataclass(frozen=True)
class EchoColumn:
    channel: int
    azimuth_deg: float
    echoes: tuple[Echo, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "echoes", tuple(self.echoes))
        if len(self.echoes) > 2:
            raise ValueError("a column holds at most two echoes")


class ReturnMode(str, Enum):
    STRONGEST = "strongest"
    LAST = "last"
    DUAL = "dual"


@dataclass(frozen=True)
class SaturationPolicy:
    """An echo at or above ``dominance_threshold`` saturates the receiver."""

    dominance_threshold: float = 0.95

    def __post_init__(self):
        if not 0 < self.dominance_threshold <= 1:
            raise ValueError("dominance_threshold must lie in (0, 1]")


@dataclass(frozen=True)
class ROI:
    x: tuple[float, float] = (-np.inf, np.inf)
    y: tuple[float, float] = (-np.inf, np.inf)
    z: tuple[float, float] = (-np.inf, np.inf)

    def contains(self, xyz: np.ndarray) -> np.ndarray:
        return (
            (xyz[:, 0] >= self.x[0]) & (xyz[:, 0] <= self.x[1])
            & (xyz[:, 1] >= self.y[0]) & (xyz[:, 1] <= self.y[1])
            & (xyz[:, 2] >= self.z[0]) & (xyz[:, 2] <= self.z[1])
        )


@dataclass(frozen=True)
class FilterChain:
    sensor_mot_m: float
    middleware_mot_m: float = 0.0
    framework_mot_m: float = 0.0
    roi: Optional[ROI] = None
    name: str = "custom"

    def __post_init__(self):
        if min(self.sensor_mot_m, self.middleware_mot_m, self.framework_mot_m) < 0:
            raise ValueError("thresholds must be non-negative")

    @property
    def spoofing_region_width(self) -> float:
        return spoofing_region_width(self)


def chain_preset(name: str, roi: Optional[ROI] = None) -> FilterChain:
    """Filter chain from the built-in table, e.g. ``vlp16-apollo``."""
    try:
        row = _presets()["chains"][name]
    except KeyError:
        known = ", ".join(sorted(_presets()["chains"]))
        raise KeyError(f"unknown chain preset {name!r} (known: {known})") from None
    return FilterChain(row["sensor_mot_m"], row["middleware_mot_m"], row["framework_mot_m"],
                       roi=roi, name=name)


def chain_sensor_name(name: str) -> str:
    return _presets()["chains"][name]["sensor"]


def select_returns(column: EchoColumn, mode: ReturnMode,
                   policy: SaturationPolicy = SaturationPolicy()) -> list[Echo]:
    echoes = list(column.echoes)
    if not echoes:
        return []
    strongest = max(echoes, key=lambda e: e.intensity)
    if strongest.intensity >= policy.dominance_threshold:
        return [strongest]
    mode = ReturnMode(mode)
    if mode is ReturnMode.STRONGEST:
        return [strongest]
    if mode is ReturnMode.LAST:
        return [max(echoes, key=lambda e: e.range_m)]
    out: list[Echo] = []
    for e in sorted(echoes, key=lambda e: e.range_m):
        if not any(e.range_m == o.range_m and e.intensity == o.intensity for o in out):
            out.append(e)
    return out


def select_returns_pairwise(
    genuine_range: np.ndarray, genuine_intensity: np.ndarray,
    extra_range: np.ndarray, extra_intensity: np.ndarray,
    mode: ReturnMode, policy: SaturationPolicy = SaturationPolicy(),
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`select_returns` over two-echo columns.

    Returns boolean masks ``(keep_genuine, keep_extra)``.  Ties in the
    strongest/last choice go to the genuine echo, matching ``max`` over
    ``(genuine, extra)`` order in the scalar version.
    """
    extra_stronger = extra_intensity > genuine_intensity
    strongest_i = np.maximum(genuine_intensity, extra_intensity)
    dominant = strongest_i >= policy.dominance_threshold
    mode = ReturnMode(mode)
    if mode is ReturnMode.STRONGEST:
        keep_extra = extra_stronger
    elif mode is ReturnMode.LAST:
        keep_extra = extra_range > genuine_range
    else:
        same = (extra_range == genuine_range) & (extra_intensity == genuine_intensity)
        keep_extra = ~same
    keep_genuine = ~keep_extra if mode is not ReturnMode.DUAL else np.ones_like(keep_extra)
    keep_extra = np.where(dominant, extra_stronger, keep_extra)
    keep_genuine = np.where(dominant, ~extra_stronger, keep_genuine)
    return keep_genuine.astype(bool), keep_extra.astype(bool)


def spoofing_region_width(chain: FilterChain) -> float:
    return max(chain.sensor_mot_m, chain.middleware_mot_m, chain.framework_mot_m)


def mot_mask(range_m: np.ndarray, chain: FilterChain) -> np.ndarray:
    return range_m >= spoofing_region_width(chain)


def apply_mot_filter(scan: Scan, chain: FilterChain) -> Scan:
    """Drop every return strictly closer than the widest stage threshold."""
    return scan.subset(mot_mask(scan.range_m, chain))


def apply_roi_filter(scan: Scan, chain: FilterChain) -> Scan:
    if chain.roi is None:
        return scan
    return scan.subset(chain.roi.contains(scan.xyz))


def apply_chain(scan: Scan, chain: FilterChain) -> Scan:
    return apply_roi_filter(apply_mot_filter(scan, chain), chain)

