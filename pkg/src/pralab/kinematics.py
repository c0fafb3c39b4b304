"""Longitudinal consequence model for an AV approaching a hidden obstacle.

The AV drives along +x from the origin with its LiDAR at the front.  While
it perceives the obstacle it plans a stop ``stop_margin_m`` short of it; while
the obstacle is hidden it accelerates toward ``v_max``.  Braking is always at
``decel_mps2``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .attack import AzimuthInterval
from .sensor import Box3D, BoxClass, GeometryError, angular_extent, extent_width, wrap_deg

V_MAX_DEFAULT = 32.0 / 3.6
# reach v_max at 46 m from a standstill
ACCEL_DEFAULT = V_MAX_DEFAULT ** 2 / (2 * 46.0)


def collision_verdict(v_mps: float, d_m: float, decel_mps2: float) -> bool:
    """True iff braking at ``decel_mps2`` from ``v_mps`` cannot stop within ``d_m``."""
    if v_mps < 0 or d_m < 0 or decel_mps2 < 0:
        raise ValueError("inputs must be non-negative")
    if v_mps == 0:
        return False
    if decel_mps2 == 0:
        return True
    return d_m < v_mps * v_mps / (2.0 * decel_mps2)


def default_obstacle(lateral_m: float = 0.0, cls: BoxClass = BoxClass.PEDESTRIAN) -> Box3D:
    if BoxClass(cls) is BoxClass.VEHICLE:
        return Box3D(0.0, lateral_m, 0.0, 4.5, 1.8, 1.5, 0.0, cls)
    return Box3D(0.0, lateral_m, 0.0, 0.6, 0.6, 1.7, 0.0, cls)


@dataclass(frozen=True)
class ScenarioConfig:
    """``obstacle`` supplies size, lateral offset (``y``) and yaw; its near face
    sits ``obstacle_distance_m`` ahead of the AV start, so its ``x`` is ignored.
    ``spoofer_position`` defaults to the obstacle centre."""

    v_max_mps: float = V_MAX_DEFAULT
    accel_mps2: float = ACCEL_DEFAULT
    decel_mps2: float = 3.0
    obstacle_distance_m: float = 70.0
    attack_start_distance_m: float = 30.0
    attack_angle_deg: float = 10.0
    spoofer_position: Optional[tuple[float, float]] = None
    obstacle: Box3D = field(default_factory=default_obstacle)
    stop_margin_m: float = 10.0

    def __post_init__(self):
        for name in ("v_max_mps", "accel_mps2", "decel_mps2", "obstacle_distance_m",
                     "attack_start_distance_m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.attack_start_distance_m > self.obstacle_distance_m:
            raise ValueError("attack must start within the obstacle distance")
        if not 0 <= self.attack_angle_deg <= 360:
            raise ValueError("attack angle must lie in [0, 360]")

    @property
    def placed_obstacle(self) -> Box3D:
        # near face at obstacle_distance_m along the road, whatever the yaw
        half_x = _half_extent_x(self.obstacle)
        return replace(self.obstacle, x=self.obstacle_distance_m + half_x)

    @property
    def spoofer_xy(self) -> tuple[float, float]:
        if self.spoofer_position is not None:
            return tuple(self.spoofer_position)
        ob = self.placed_obstacle
        return ob.x, ob.y


def _half_extent_x(box: Box3D) -> float:
    fp = box.footprint() - [box.x, box.y]
    return float(fp[:, 0].max())


def obstacle_hidden(cfg: ScenarioConfig, position_m: float) -> bool:
    """Whether the obstacle is inside the attack sector seen from ``position_m``."""
    ob = cfg.placed_obstacle
    gap = cfg.obstacle_distance_m - position_m
    if cfg.attack_angle_deg <= 0 or gap > cfg.attack_start_distance_m or gap <= 0:
        return False
    if cfg.attack_angle_deg >= 360:
        return True
    try:
        extent = angular_extent(ob, (position_m, 0.0))
    except GeometryError:
        return False
    sx, sy = cfg.spoofer_xy
    center = wrap_deg(math.degrees(math.atan2(sy, sx - position_m)))
    sector = AzimuthInterval(wrap_deg(center - cfg.attack_angle_deg / 2), cfg.attack_angle_deg)
    width = extent_width(extent)
    if width > cfg.attack_angle_deg:
        return False
    # both extent edges inside the sector and the arc between them too
    start_off = (extent[0] - sector.start_deg) % 360.0
    return start_off + width <= sector.width_deg + 1e-12


@dataclass(frozen=True)
class Timeline:
    t: np.ndarray
    position_m: np.ndarray
    speed_mps: np.ndarray
    perceived: np.ndarray
    outcome: str                      # "stopped" or "collision"
    impact_speed_mps: float = 0.0
    reappearance: Optional[tuple[float, float, float]] = None  # (t, distance, speed)

    @property
    def collided(self) -> bool:
        return self.outcome == "collision"

    @property
    def route_time_s(self) -> float:
        return float(self.t[-1])

    def hidden_fraction(self) -> float:
        if len(self.t) < 2 or self.t[-1] <= 0:
            return 0.0
        dt = np.diff(self.t)
        return float(dt[~self.perceived[:-1]].sum() / self.t[-1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_s", "position_m", "speed_mps", "obstacle_perceived"])
        for row in zip(self.t, self.position_m, self.speed_mps, self.perceived):
            w.writerow([f"{row[0]:.4f}", f"{row[1]:.6f}", f"{row[2]:.6f}", int(row[3])])
        return buf.getvalue()


def simulate(cfg: ScenarioConfig, dt_s: float = 0.01, max_time_s: float = 300.0) -> Timeline:
    front = cfg.obstacle_distance_m
    x = v = t = 0.0
    ts, xs, vs, seen = [], [], [], []
    reappear = None
    was_hidden = False
    braking = False
    outcome, impact = "stopped", 0.0
    while t <= max_time_s:
        hidden = obstacle_hidden(cfg, x)
        perceived = not hidden
        if hidden:
            was_hidden = True
            braking = False
        elif was_hidden and reappear is None:
            reappear = (t, front - x, v)
        ts.append(t); xs.append(x); vs.append(v); seen.append(perceived)

        gap = front - x
        if perceived:
            stop_dist = v * v / (2 * cfg.decel_mps2)
            # brake once the stop point is within reach at this step's pace
            braking = braking or stop_dist + v * dt_s >= gap - cfg.stop_margin_m
        if braking:
            if v == 0.0:
                break
            t_stop = v / cfg.decel_mps2
            h = min(dt_s, t_stop)
            dx = v * h - 0.5 * cfg.decel_mps2 * h * h
            v_new = max(v - cfg.decel_mps2 * h, 0.0) if h < t_stop else 0.0
        else:
            t_cap = (cfg.v_max_mps - v) / cfg.accel_mps2
            h = dt_s
            if t_cap >= h:
                dx = v * h + 0.5 * cfg.accel_mps2 * h * h
                v_new = v + cfg.accel_mps2 * h
            else:
                dx = v * t_cap + 0.5 * cfg.accel_mps2 * t_cap ** 2 + cfg.v_max_mps * (h - t_cap)
                v_new = cfg.v_max_mps
        if x + dx > front + 1e-9 or (x + dx >= front and v_new > 0):
            tau, impact = _contact(gap, v, braking, cfg)
            ts.append(t + tau); xs.append(front); vs.append(impact); seen.append(perceived)
            outcome = "collision"
            break
        x += dx
        v = v_new
        t += h
    return Timeline(np.array(ts), np.array(xs), np.array(vs), np.array(seen, bool),
                    outcome, impact, reappear)


def _contact(gap: float, v: float, braking: bool, cfg: ScenarioConfig) -> tuple[float, float]:
    """Time into the step and speed at which the AV reaches the obstacle."""
    if braking:
        a = cfg.decel_mps2
        tau = (v - math.sqrt(max(v * v - 2 * a * gap, 0.0))) / a
        return tau, max(v - a * tau, 0.0)
    a = cfg.accel_mps2
    t_cap = (cfg.v_max_mps - v) / a
    d_cap = v * t_cap + 0.5 * a * t_cap * t_cap
    if gap <= d_cap:
        tau = (-v + math.sqrt(v * v + 2 * a * gap)) / a
        return tau, v + a * tau
    return t_cap + (gap - d_cap) / cfg.v_max_mps, cfg.v_max_mps


def removal_window(cfg: ScenarioConfig, dt_s: float = 0.01) -> float:
    """Fraction of the simulated route time during which the obstacle is hidden."""
    if cfg.attack_angle_deg <= 0:
        return 0.0
    return simulate(cfg, dt_s).hidden_fraction()


def scenario_grid(
    angles=(5.0, 10.0), start_distances=(10.0, 20.0, 30.0, 40.0, 50.0),
    laterals=(-1.5, 0.0, 1.5), classes=(BoxClass.PEDESTRIAN, BoxClass.VEHICLE),
    base: Optional[ScenarioConfig] = None,
) -> list[ScenarioConfig]:
    base = base or ScenarioConfig()
    grid = []
    for cls in classes:
        for lat in laterals:
            for ang in angles:
                for start in start_distances:
                    grid.append(replace(base, attack_angle_deg=float(ang),
                                        attack_start_distance_m=float(start),
                                        obstacle=default_obstacle(lat, cls)))
    return grid
