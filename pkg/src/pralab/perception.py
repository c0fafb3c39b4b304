"""Non-learned stand-ins for the perception stack.

Detection is reduced to "is there a euclidean cluster here"; camera/LiDAR
fusion is reduced to a 2D overlap test between back-projected boxes.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels
from .sensor import Box3D, Scan


class ProjectionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Cluster:
    point_ids: np.ndarray
    centroid: np.ndarray
    aabb_min: np.ndarray
    aabb_max: np.ndarray

    def __len__(self) -> int:
        return len(self.point_ids)


def euclidean_cluster(scan: Scan, tolerance_m: float = 0.5, min_points: int = 5,
                      max_points: int | None = None) -> list[Cluster]:
    """Connected components under a radius-``tolerance_m`` neighbourhood.

    Components smaller than ``min_points`` are dropped.  Clusters come back
    ordered by their smallest point id, so the result does not depend on
    the order of points in the scan.
    """
    if len(scan) == 0:
        return []
    labels = _kernels.cluster_labels(scan.xyz, tolerance_m)
    uniq, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    clusters = []
    for k in range(len(uniq)):
        if counts[k] < min_points or (max_points is not None and counts[k] > max_points):
            continue
        members = np.flatnonzero(inverse == k)
        pts = scan.xyz[members]
        clusters.append(Cluster(
            point_ids=np.sort(scan.point_id[members]),
            centroid=pts.mean(axis=0),
            aabb_min=pts.min(axis=0),
            aabb_max=pts.max(axis=0),
        ))
    clusters.sort(key=lambda c: int(c.point_ids[0]))
    return clusters


def cluster_present(clusters: list[Cluster], scan: Scan, target: Box3D, min_points: int = 1) -> bool:
    """True if some cluster has at least ``min_points`` points inside ``target``."""
    if not clusters:
        return False
    inside_ids = scan.point_id[target.contains(scan.xyz)] if len(scan) else np.zeros(0, np.int64)
    return any(np.isin(c.point_ids, inside_ids).sum() >= min_points for c in clusters)


@dataclass(frozen=True)
class Box2D:
    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self):
        if not (self.left < self.right and self.top < self.bottom):
            raise ValueError("need left < right and top < bottom")

    @property
    def area(self) -> float:
        return (self.right - self.left) * (self.bottom - self.top)


@dataclass(frozen=True, eq=False)
class Calibration:
    P: np.ndarray
    R0: np.ndarray
    Tr: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, float).reshape(3, 4)
        R0 = _as_hom(np.asarray(self.R0, float))
        Tr = _as_hom(np.asarray(self.Tr, float))
        for m in (P, R0, Tr):
            if not np.all(np.isfinite(m)):
                raise ValueError("calibration matrices must be finite")
        if abs(np.linalg.det(Tr)) < 1e-12:
            raise ValueError("lidar-to-camera transform is singular")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R0", R0)
        object.__setattr__(self, "Tr", Tr)

    @classmethod
    def identity(cls) -> "Calibration":
        return cls(np.hstack([np.eye(3), np.zeros((3, 1))]), np.eye(4), np.eye(4))

    def lidar_to_rect(self, xyz: np.ndarray) -> np.ndarray:
        hom = np.column_stack([xyz, np.ones(len(xyz))])
        return (hom @ (self.R0 @ self.Tr).T)[:, :3]

    def rect_to_lidar(self, xyz: np.ndarray) -> np.ndarray:
        hom = np.column_stack([xyz, np.ones(len(xyz))])
        return (hom @ np.linalg.inv(self.R0 @ self.Tr).T)[:, :3]


def _as_hom(m: np.ndarray) -> np.ndarray:
    if m.shape == (4, 4):
        return m
    out = np.eye(4)
    if m.shape == (3, 3):
        out[:3, :3] = m
    elif m.shape in ((3, 4), (12,)):
        out[:3, :] = m.reshape(3, 4)
    elif m.shape == (9,):
        out[:3, :3] = m.reshape(3, 3)
    else:
        raise ValueError(f"cannot interpret matrix of shape {m.shape}")
    return out


def project_to_image(box: Box3D, calib: Calibration) -> Box2D:
    """2D bounds of the eight box corners projected through ``P @ R0 @ Tr``."""
    rect = calib.lidar_to_rect(box.corners())
    if np.any(rect[:, 2] <= 0):
        raise ProjectionError("box is not entirely in front of the camera")
    uvw = np.column_stack([rect, np.ones(8)]) @ calib.P.T
    uv = uvw[:, :2] / uvw[:, 2:3]
    return Box2D(float(uv[:, 0].min()), float(uv[:, 1].min()),
                 float(uv[:, 0].max()), float(uv[:, 1].max()))


class OverlapMode(str, Enum):
    IOU = "iou"
    OVER_MIN = "over_min"


def _intersection(a: Box2D, b: Box2D) -> float:
    w = min(a.right, b.right) - max(a.left, b.left)
    h = min(a.bottom, b.bottom) - max(a.top, b.top)
    return max(w, 0.0) * max(h, 0.0)


def iou(a: Box2D, b: Box2D) -> float:
    inter = _intersection(a, b)
    return inter / (a.area + b.area - inter)


def overlap_over_min(a: Box2D, b: Box2D) -> float:
    return _intersection(a, b) / min(a.area, b.area)


def fusion_check(lidar_box: Box2D, camera_box: Box2D, overlap_threshold: float = 0.5,
                 mode: OverlapMode = OverlapMode.IOU) -> bool:
    """Whether the LiDAR and camera detections agree on an obstacle."""
    measure = iou if OverlapMode(mode) is OverlapMode.IOU else overlap_over_min
    return measure(lidar_box, camera_box) >= overlap_threshold
