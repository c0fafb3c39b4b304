"""Readers and writers: KITTI velodyne/label/calib files, raw sensor packets,
and the tool's own CSV and PCD-like scan traces.

Every reader fails with :class:`FormatError`, which carries the byte offset
or 1-based line number of the first problem; nothing is returned partially.
"""

from __future__ import annotations

import csv
import io as _io
import math
import struct
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .perception import Calibration
from .sensor import Box3D, BoxClass, Scan, SensorConfig, sensor_preset


class FormatError(ValueError):
    def __init__(self, message: str, *, offset: Optional[int] = None, line: Optional[int] = None):
        where = f" at byte {offset}" if offset is not None else f" on line {line}" if line is not None else ""
        super().__init__(message + where)
        self.message = message
        self.offset = offset
        self.line = line


# -------------------------------------------------------------- KITTI .bin

def read_pointcloud_bin(data: bytes, config: Optional[SensorConfig] = None, frame_id: int = 0) -> Scan:
    """Little-endian float32 quadruples ``x, y, z, reflectance``."""
    config = config or sensor_preset("hdl64")
    if len(data) % 16:
        raise FormatError(f"length {len(data)} is not a multiple of 16", offset=len(data) - len(data) % 16)
    arr = np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float64)
    bad = ~np.isfinite(arr).all(axis=1)
    if bad.any():
        raise FormatError("non-finite value", offset=int(np.argmax(bad)) * 16)
    refl = arr[:, 3]
    out = (refl < 0) | (refl > 1)
    if out.any():
        raise FormatError("reflectance outside [0, 1]", offset=int(np.argmax(out)) * 16 + 12)
    return Scan.from_xyz(arr[:, :3], refl, config, frame_id=frame_id)


def write_pointcloud_bin(scan: Scan) -> bytes:
    arr = np.column_stack([scan.xyz, scan.intensity]).astype("<f4")
    return arr.tobytes()


# ----------------------------------------------------------------- labels

_CLASS_MAP = {
    "Pedestrian": BoxClass.PEDESTRIAN, "Person_sitting": BoxClass.PEDESTRIAN,
    "Car": BoxClass.VEHICLE, "Van": BoxClass.VEHICLE, "Truck": BoxClass.VEHICLE,
}


@dataclass(frozen=True)
class LabelRecord:
    cls: str
    truncation: float
    occlusion: int
    alpha: float
    bbox: tuple[float, float, float, float]
    h: float
    w: float
    l: float
    location: tuple[float, float, float]   # bottom centre, rectified camera frame
    rotation_y: float

    @property
    def targetable(self) -> bool:
        return self.cls != "DontCare"

    @property
    def box_class(self) -> BoxClass:
        return _CLASS_MAP.get(self.cls, BoxClass.OTHER)


def read_labels(text: str) -> list[LabelRecord]:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 15:
            raise FormatError(f"expected 15 fields, got {len(fields)}", line=lineno)
        try:
            nums = [float(v) for v in fields[1:]]
        except ValueError as exc:
            raise FormatError(f"malformed number ({exc})", line=lineno) from None
        if not all(math.isfinite(v) for v in nums):
            raise FormatError("non-finite number", line=lineno)
        h, w, l = nums[7:10]
        if fields[0] != "DontCare" and not (h > 0 and w > 0 and l > 0):
            raise FormatError("dimensions must be positive", line=lineno)
        records.append(LabelRecord(
            cls=fields[0], truncation=nums[0], occlusion=int(nums[1]), alpha=nums[2],
            bbox=tuple(nums[3:7]), h=h, w=w, l=l, location=tuple(nums[10:13]), rotation_y=nums[13],
        ))
    return records


def read_calibration(text: str) -> Calibration:
    wanted = {"P2": 12, "R0_rect": 9, "Tr_velo_to_cam": 12}
    found: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise FormatError("expected 'key: values'", line=lineno)
        key = key.strip()
        if key not in wanted:
            continue
        try:
            vals = np.array([float(v) for v in rest.split()])
        except ValueError as exc:
            raise FormatError(f"malformed number in {key} ({exc})", line=lineno) from None
        if len(vals) != wanted[key]:
            raise FormatError(f"{key} needs {wanted[key]} values, got {len(vals)}", line=lineno)
        found[key] = vals
    missing = [k for k in wanted if k not in found]
    if missing:
        raise FormatError(f"missing calibration keys {missing}", line=len(text.splitlines()) + 1)
    return Calibration(found["P2"].reshape(3, 4), found["R0_rect"].reshape(3, 3),
                       found["Tr_velo_to_cam"].reshape(3, 4))


def _camera_axes(calib: Calibration) -> np.ndarray:
    """Linear part of the rectified-camera -> sensor map."""
    return np.linalg.inv((calib.R0 @ calib.Tr)[:3, :3])


def _heading_yaw(ry: float, to_lidar: np.ndarray) -> float:
    # heading: camera x-axis rotated by rotation_y about camera -y
    d = to_lidar @ [math.cos(ry), 0.0, -math.sin(ry)]
    return math.atan2(d[1], d[0])


def label_to_lidar_box(rec: LabelRecord, calib: Calibration) -> Box3D:
    """Label box (camera frame, bottom centre) as a sensor-frame :class:`Box3D`."""
    if not rec.targetable:
        raise ValueError("DontCare regions carry no box")
    to_lidar = _camera_axes(calib)
    bottom = calib.rect_to_lidar(np.array([rec.location]))[0]
    center = bottom + to_lidar @ [0.0, -rec.h / 2, 0.0]
    return Box3D(float(center[0]), float(center[1]), float(center[2]),
                 rec.l, rec.w, rec.h, _heading_yaw(rec.rotation_y, to_lidar), rec.box_class)


def lidar_box_to_label_pose(box: Box3D, calib: Calibration) -> tuple[tuple[float, float, float], float]:
    """Inverse of :func:`label_to_lidar_box` for location and rotation_y."""
    to_lidar = _camera_axes(calib)
    bottom_l = box.center - to_lidar @ [0.0, -box.h / 2, 0.0]
    bottom = calib.lidar_to_rect(bottom_l[None, :])[0]
    d = np.linalg.inv(to_lidar) @ [math.cos(box.yaw), math.sin(box.yaw), 0.0]
    ry = math.atan2(-d[2], d[0])
    # calibration rotations are not exactly orthonormal; polish so the forward map agrees
    for _ in range(50):
        err = math.remainder(_heading_yaw(ry, to_lidar) - box.yaw, 2 * math.pi)
        if abs(err) < 1e-13:
            break
        ry -= err * _yaw_slope(ry, to_lidar)
    return tuple(float(v) for v in bottom), math.remainder(ry, 2 * math.pi)


def _yaw_slope(ry: float, to_lidar: np.ndarray, h: float = 1e-7) -> float:
    """1 / d(yaw)/d(ry), by central difference."""
    dy = math.remainder(_heading_yaw(ry + h, to_lidar) - _heading_yaw(ry - h, to_lidar), 2 * math.pi)
    return 2 * h / dy


# ------------------------------------------------------------ raw packets

PACKET_SIZE = 1206
BLOCKS_PER_PACKET = 12
RETURNS_PER_BLOCK = 32
BLOCK_FLAG = b"\xff\xee"
DISTANCE_UNIT_M = 0.002

# firing order of the 16-laser sensor: laser id -> elevation (deg)
VLP16_LASER_ELEVATIONS = (-15, 1, -13, 3, -11, 5, -9, 7, -7, 9, -5, 11, -3, 13, -1, 15)

_BLOCK = struct.Struct("<2sH" + "HB" * RETURNS_PER_BLOCK)


class RawReturn(NamedTuple):
    channel: int        # laser id as fired
    azimuth_deg: float
    range_m: float
    intensity: float    # normalised by 255


@dataclass(frozen=True)
class RawPacket:
    returns: tuple[RawReturn, ...]
    timestamp_us: int
    factory: bytes


def decode_raw_packet(data: bytes, lasers: int = 16) -> RawPacket:
    """Decode one single-return data packet.

    A block carries ``32 // lasers`` firing sequences; later sequences get
    their azimuth interpolated halfway toward the next block.
    """
    if len(data) != PACKET_SIZE:
        raise FormatError(f"packet must be {PACKET_SIZE} bytes, got {len(data)}",
                          offset=min(len(data), PACKET_SIZE))
    blocks = []
    for b in range(BLOCKS_PER_PACKET):
        off = b * _BLOCK.size
        fields = _BLOCK.unpack_from(data, off)
        if fields[0] != BLOCK_FLAG:
            raise FormatError(f"block {b}: flag {fields[0].hex()} != ffee", offset=off)
        if fields[1] >= 36000:
            raise FormatError(f"block {b}: azimuth {fields[1]} out of range", offset=off + 2)
        blocks.append(fields)
    az = np.array([f[1] / 100.0 for f in blocks])
    step = np.mod(np.diff(az), 360.0)
    step = np.append(step, step[-1] if len(step) else 0.0)
    sequences = max(RETURNS_PER_BLOCK // lasers, 1)
    returns = []
    for b, fields in enumerate(blocks):
        for s in range(RETURNS_PER_BLOCK):
            raw_d, raw_i = fields[2 + 2 * s], fields[3 + 2 * s]
            if raw_d == 0:
                continue
            seq = min(s // lasers, sequences - 1)
            a = (az[b] + step[b] * seq / sequences) % 360.0
            returns.append(RawReturn(s % lasers, float(a), raw_d * DISTANCE_UNIT_M, raw_i / 255.0))
    ts, = struct.unpack_from("<I", data, 1200)
    return RawPacket(tuple(returns), ts, bytes(data[1204:1206]))


def parse_raw_packet(data: bytes, lasers: int = 16) -> list[RawReturn]:
    return list(decode_raw_packet(data, lasers).returns)


def build_raw_packet(azimuths_centideg: Sequence[int], distances: Sequence[Sequence[int]],
                     intensities: Sequence[Sequence[int]], timestamp_us: int = 0,
                     factory: bytes = b"\x37\x22") -> bytes:
    """Assemble a packet from 12 block azimuths and 12x32 raw distances/intensities."""
    out = bytearray()
    for b in range(BLOCKS_PER_PACKET):
        vals = []
        for d, i in zip(distances[b], intensities[b]):
            vals += [int(d), int(i)]
        out += _BLOCK.pack(BLOCK_FLAG, int(azimuths_centideg[b]), *vals)
    out += struct.pack("<I", timestamp_us) + bytes(factory)
    return bytes(out)


def raw_returns_to_scan(returns: Sequence[RawReturn], config: Optional[SensorConfig] = None,
                        elevations: Sequence[float] = VLP16_LASER_ELEVATIONS, frame_id: int = 0) -> Scan:
    config = config or sensor_preset("vlp16")
    sorted_el = np.asarray(config.vertical_angles_deg)
    if not returns:
        return Scan.empty(config, frame_id)
    laser = np.array([r.channel for r in returns])
    el = np.radians(np.asarray(elevations, float)[laser])
    az = np.radians([r.azimuth_deg for r in returns])
    rng = np.array([r.range_m for r in returns])
    xyz = np.column_stack([rng * np.cos(el) * np.cos(az), rng * np.cos(el) * np.sin(az), rng * np.sin(el)])
    channel = np.searchsorted(sorted_el, np.asarray(elevations, float)[laser])
    return Scan(xyz, [r.intensity for r in returns], channel, config, frame_id)


# ------------------------------------------------------------ scan traces

CSV_COLUMNS = ("frame", "channel", "azimuth_deg", "x", "y", "z", "intensity", "range_m")


def _f(v: float) -> str:
    return repr(float(v))


def write_scan(scan: Scan, fmt: str = "csv") -> bytes:
    if fmt == "csv":
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i in range(len(scan)):
            x, y, z = scan.xyz[i]
            w.writerow([scan.frame_id, int(scan.channel[i]), _f(scan.azimuth_deg[i]), _f(x), _f(y), _f(z),
                        _f(scan.intensity[i]), _f(scan.range_m[i])])
        return buf.getvalue().encode()
    if fmt == "pcd":
        header = _pcd_header(len(scan), scan.frame_id)
        rec = np.zeros(len(scan), dtype=_PCD_DTYPE)
        rec["x"], rec["y"], rec["z"] = scan.xyz.T
        rec["intensity"] = scan.intensity
        rec["channel"] = scan.channel
        return header + rec.tobytes()
    raise ValueError(f"unknown scan format {fmt!r} (expected 'csv' or 'pcd')")


def read_scan(data: bytes, fmt: str = "csv", config: Optional[SensorConfig] = None) -> Scan:
    config = config or sensor_preset("vlp16")
    if fmt == "csv":
        return _read_csv(data, config)
    if fmt == "pcd":
        return _read_pcd(data, config)
    raise ValueError(f"unknown scan format {fmt!r} (expected 'csv' or 'pcd')")


def _read_csv(data: bytes, config: SensorConfig) -> Scan:
    try:
        text = data.decode()
    except UnicodeDecodeError as exc:
        raise FormatError("not UTF-8 text", offset=exc.start) from None
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise FormatError(f"header must be {','.join(CSV_COLUMNS)}", line=1)
    frame = None
    xyz, inten, chan = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_COLUMNS):
            raise FormatError(f"expected {len(CSV_COLUMNS)} fields, got {len(row)}", line=lineno)
        try:
            f, c = int(row[0]), int(row[1])
            x, y, z, it = (float(row[k]) for k in (3, 4, 5, 6))
        except ValueError as exc:
            raise FormatError(f"malformed value ({exc})", line=lineno) from None
        if frame is None:
            frame = f
        elif f != frame:
            raise FormatError(f"frame {f} differs from {frame}", line=lineno)
        if not 0 <= c < config.channel_count:
            raise FormatError(f"channel {c} out of range", line=lineno)
        if not all(math.isfinite(v) for v in (x, y, z, it)) or not 0 <= it <= 1:
            raise FormatError("coordinate or intensity out of range", line=lineno)
        xyz.append((x, y, z)); inten.append(it); chan.append(c)
    if not xyz:
        return Scan.empty(config)
    return Scan(np.array(xyz), np.array(inten), np.array(chan), config, frame)


_PCD_DTYPE = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("intensity", "<f8"), ("channel", "<i4")])
_PCD_KEYS = ("VERSION", "FIELDS", "SIZE", "TYPE", "COUNT", "WIDTH", "HEIGHT", "VIEWPOINT", "POINTS", "FRAME", "DATA")
_PCD_FIXED = {
    "VERSION": "0.7", "FIELDS": "x y z intensity channel", "SIZE": "8 8 8 8 4",
    "TYPE": "F F F F I", "COUNT": "1 1 1 1 1", "HEIGHT": "1", "VIEWPOINT": "0 0 0 1 0 0 0",
    "DATA": "binary",
}


def _pcd_header(n: int, frame: int) -> bytes:
    values = dict(_PCD_FIXED, WIDTH=str(n), POINTS=str(n), FRAME=str(frame))
    lines = ["# .PCD v0.7 - pralab scan"] + [f"{k} {values[k]}" for k in _PCD_KEYS]
    return ("\n".join(lines) + "\n").encode()


def _read_pcd(data: bytes, config: SensorConfig) -> Scan:
    pos = 0
    lines = []
    for lineno in range(1, len(_PCD_KEYS) + 2):
        end = data.find(b"\n", pos)
        if end < 0:
            raise FormatError("truncated header", offset=len(data))
        try:
            lines.append((lineno, pos, data[pos:end].decode("ascii")))
        except UnicodeDecodeError:
            raise FormatError("non-ASCII header", offset=pos) from None
        pos = end + 1
    if not lines[0][2].startswith("#"):
        raise FormatError("missing comment line", line=1)
    values = {}
    for (lineno, off, text), key in zip(lines[1:], _PCD_KEYS):
        k, _, v = text.partition(" ")
        if k != key:
            raise FormatError(f"expected {key}, got {k!r}", line=lineno)
        if key in _PCD_FIXED and v != _PCD_FIXED[key]:
            raise FormatError(f"unsupported {key} {v!r}", line=lineno)
        values[key] = v
    try:
        n, width, frame = int(values["POINTS"]), int(values["WIDTH"]), int(values["FRAME"])
    except ValueError:
        raise FormatError("WIDTH/POINTS/FRAME must be integers", line=7) from None
    if n != width or n < 0:
        raise FormatError("WIDTH and POINTS disagree", line=10)
    payload = data[pos:]
    if len(payload) != n * _PCD_DTYPE.itemsize:
        raise FormatError(f"payload holds {len(payload)} bytes, expected {n * _PCD_DTYPE.itemsize}",
                          offset=pos + min(len(payload), n * _PCD_DTYPE.itemsize))
    rec = np.frombuffer(payload, dtype=_PCD_DTYPE)
    xyz = np.column_stack([rec["x"], rec["y"], rec["z"]])
    bad = ~(np.isfinite(xyz).all(axis=1) & np.isfinite(rec["intensity"])
            & (rec["intensity"] >= 0) & (rec["intensity"] <= 1)
            & (rec["channel"] >= 0) & (rec["channel"] < config.channel_count))
    if bad.any():
        raise FormatError("invalid point record", offset=pos + int(np.argmax(bad)) * _PCD_DTYPE.itemsize)
    return Scan(xyz, rec["intensity"].copy(), rec["channel"].astype(np.int64), config, frame)
