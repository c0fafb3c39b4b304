"""Ray-cast synthetic scenes: flat ground plus box obstacles around the sensor."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .attack import AttackSpec, min_attack_angle, synthesize, target_center_azimuth
from .echo import FilterChain
from .sensor import Box3D, BoxClass, GeometryError, Scan, SensorConfig, angular_extent, extent_width

SENSOR_HEIGHT_M = 1.73

# (l, w, h) ranges in metres
_SIZES = {
    BoxClass.VEHICLE: ((3.6, 4.8), (1.6, 1.9), (1.4, 1.7)),
    BoxClass.PEDESTRIAN: ((0.5, 0.9), (0.5, 0.8), (1.55, 1.9)),
    BoxClass.OTHER: ((0.2, 0.4), (0.2, 0.4), (2.5, 3.5)),
}


def beam_directions(config: SensorConfig) -> np.ndarray:
    """Unit vectors for every (column, channel) firing, column-major."""
    ncol = config.columns_per_rotation
    az = np.radians(np.arange(ncol) * config.azimuth_resolution_deg)
    el = np.radians(np.asarray(config.vertical_angles_deg))
    d = np.empty((ncol, config.channel_count, 3))
    d[..., 0] = np.cos(az)[:, None] * np.cos(el)[None, :]
    d[..., 1] = np.sin(az)[:, None] * np.cos(el)[None, :]
    d[..., 2] = np.sin(el)[None, :]
    return d.reshape(-1, 3)


def raycast_scene(
    config: SensorConfig,
    boxes: Sequence[Box3D],
    sensor_height_m: float = SENSOR_HEIGHT_M,
    ground_intensity: float = 0.2,
    object_intensity: float = 0.6,
    dropout: float = 0.0,
    max_range_m: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
    frame_id: int = 0,
) -> Scan:
    """Cast every beam against the ground plane and the boxes; keep first hits.

    ``point_id`` encodes the firing (``column * channel_count + channel``).
    """
    dirs = beam_directions(config)
    max_range_m = config.max_range_m if max_range_m is None else max_range_m
    with np.errstate(divide="ignore"):
        t_ground = np.where(dirs[:, 2] < 0, -sensor_height_m / dirs[:, 2], np.inf)
    if boxes:
        centers = np.array([[b.x, b.y, b.z] for b in boxes])
        dims = np.array([[b.l, b.w, b.h] for b in boxes])
        yaws = np.array([b.yaw for b in boxes])
        t_box, _ = _kernels.raycast_boxes(dirs, centers, dims, yaws)
    else:
        t_box = np.full(len(dirs), np.inf)
    t = np.minimum(t_ground, t_box)
    keep = np.isfinite(t) & (t <= max_range_m) & (t > config.internal_mot_m)
    if dropout > 0:
        rng = rng or np.random.default_rng(0)
        keep &= rng.random(len(dirs)) >= dropout
    idx = np.flatnonzero(keep)
    intensity = np.where(t_box[idx] < t_ground[idx], object_intensity, ground_intensity)
    channel = idx % config.channel_count
    column = idx // config.channel_count
    ts = column * config.firing_cycle_us + channel * config.firing_period_us
    return Scan(dirs[idx] * t[idx, None], intensity, channel, config, frame_id,
                timestamp_us=ts, point_id=idx)


def random_box(rng: np.random.Generator, cls: BoxClass, distance_m: float, azimuth_deg: float,
               sensor_height_m: float = SENSOR_HEIGHT_M) -> Box3D:
    (l0, l1), (w0, w1), (h0, h1) = _SIZES[cls]
    h = rng.uniform(h0, h1)
    a = math.radians(azimuth_deg)
    return Box3D(distance_m * math.cos(a), distance_m * math.sin(a), -sensor_height_m + h / 2,
                 rng.uniform(l0, l1), rng.uniform(w0, w1), h, rng.uniform(-math.pi, math.pi), cls)


def place_at_extent(box: Box3D, extent_deg: float, azimuth_deg: float, tol_deg: float = 1e-9) -> Box3D:
    """Move ``box`` along the ray at ``azimuth_deg`` until it subtends ``extent_deg``."""
    if not 0 < extent_deg < 180:
        raise ValueError("extent must lie in (0, 180) degrees")
    a = math.radians(azimuth_deg)

    def at(d: float) -> Box3D:
        return Box3D(d * math.cos(a), d * math.sin(a), box.z, box.l, box.w, box.h, box.yaw, box.class_label)

    def width(d: float) -> float:
        try:
            return extent_width(angular_extent(at(d)))
        except GeometryError:
            return 360.0

    near, far = math.hypot(box.l, box.w) / 2, 1.0
    while width(far) > extent_deg:
        far *= 2
    # the extent shrinks monotonically with distance once outside the box
    while width(near) - width(far) > tol_deg and far - near > 1e-12:
        mid = (near + far) / 2
        if width(mid) > extent_deg:
            near = mid
        else:
            far = mid
    return at(far)


def _separated(box: Box3D, others: Sequence[Box3D], margin: float = 1.0) -> bool:
    r = math.hypot(box.l, box.w) / 2
    return all(math.hypot(box.x - o.x, box.y - o.y) > r + math.hypot(o.l, o.w) / 2 + margin for o in others)


def random_objects(rng: np.random.Generator, n: int, distance_range=(5.0, 28.0),
                   classes: Sequence[BoxClass] = (BoxClass.VEHICLE, BoxClass.PEDESTRIAN, BoxClass.OTHER),
                   existing: Sequence[Box3D] = ()) -> list[Box3D]:
    boxes = list(existing)
    tries = 0
    while len(boxes) < len(existing) + n and tries < 50 * (n + 1):
        tries += 1
        cls = classes[rng.integers(len(classes))]
        box = random_box(rng, cls, rng.uniform(*distance_range), rng.uniform(0, 360))
        if _separated(box, boxes):
            boxes.append(box)
    return boxes[len(existing):]


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    scan: Scan
    boxes: tuple[Box3D, ...]
    target: Optional[int] = None
    attack_angle_deg: float = 0.0
    attack_center_deg: float = 0.0


def benign_scene(config: SensorConfig, rng: np.random.Generator, n_objects=(6, 16),
                 distance_range=(5.0, 28.0), dropout: float = 0.01, frame_id: int = 0) -> SyntheticScene:
    """Occlusion-rich street-like scene; objects hide ground and each other."""
    n = int(rng.integers(n_objects[0], n_objects[1] + 1))
    boxes = random_objects(rng, n, distance_range)
    scan = raycast_scene(config, boxes, dropout=dropout, rng=rng, frame_id=frame_id)
    return SyntheticScene(scan, tuple(boxes))


def attack_scene(
    config: SensorConfig,
    rng: np.random.Generator,
    chain: FilterChain,
    angle_deg: Optional[float] = None,
    target_class: Optional[BoxClass] = None,
    distance_range=(6.0, 28.0),
    frame_id: int = 0,
    **benign_kwargs,
) -> SyntheticScene:
    """A benign scene with one object removed by an ideal attack.

    With ``angle_deg`` None the attack uses the target's minimum full-removal
    angle; otherwise a fixed angle centred on the target.
    """
    cls = target_class or (BoxClass.VEHICLE if rng.random() < 0.5 else BoxClass.PEDESTRIAN)
    for _ in range(100):
        target = random_box(rng, cls, rng.uniform(*distance_range), rng.uniform(0, 360))
        others = random_objects(rng, int(rng.integers(4, 12)), existing=[target])
        scene = raycast_scene(config, [target] + others, frame_id=frame_id,
                              dropout=benign_kwargs.get("dropout", 0.01), rng=rng)
        if target.contains(scene.xyz).sum() >= 5:
            break
    angle = angle_deg if angle_deg is not None else min_attack_angle(scene, target, chain=chain)
    center = target_center_azimuth(target)
    spoof = chain.spoofing_region_width / 2.0
    attacked, _ = synthesize(scene, AttackSpec(center, angle, spoof_range_m=spoof), chain)
    return SyntheticScene(attacked, tuple([target] + others), 0, angle, center)
