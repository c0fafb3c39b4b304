"""Experiment drivers behind the command-line front end.

Each driver returns an :class:`ExperimentReport` holding CSV rows plus a
JSON summary.  Reports carry no wall-clock timestamps; apart from measured
runtimes they are byte-identical across re-runs with the same inputs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import io as pio
from .attack import (
    AttackMode, AttackSpec, CapabilityModel, default_capability, expected_removed_points,
    min_attack_angle, synthesize, target_center_azimuth,
)
from .defense import (
    azimuth_detector, detect_objects, evaluate, fake_shadow_detect, fsd_detector,
)
from .echo import chain_preset
from .kinematics import ScenarioConfig, default_obstacle, scenario_grid, simulate
from .laser_safety import LaserParams, safety_report
from .perception import cluster_present
from .scenes import attack_scene, benign_scene, random_box, random_objects, raycast_scene
from .sensor import Box3D, BoxClass, Scan, SensorConfig, load_sensor_config, synthesize_ring_scan

log = logging.getLogger(__name__)


@dataclass
class ExperimentReport:
    experiment: str
    params: dict
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    inputs: list[str] = field(default_factory=list)
    soft_failures: list[str] = field(default_factory=list)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.params, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "experiment": self.experiment,
            "params": self.params,
            "summary": self.summary,
            "provenance": {"config_hash": self.config_hash, "inputs": self.inputs},
            "soft_failures": self.soft_failures,
            "row_count": len(self.rows),
        }
        return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{self.experiment}.csv"
        json_path = out / f"{self.experiment}.json"
        csv_path.write_text(self.to_csv())
        json_path.write_text(self.to_json())
        return csv_path, json_path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{float(v):.6g}"
    return str(v)


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"not JSON serialisable: {type(v).__name__}")


def _clean(v: float) -> Optional[float]:
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else round(float(v), 6)


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------- capability

def run_capability(
    sensor: SensorConfig,
    chain_name: str = "vlp16-apollo",
    angles: Sequence[float] = tuple(range(0, 46)),
    mode: AttackMode = AttackMode.IDEAL,
    spoofer_distance_m: Optional[float] = None,
    capability: Optional[CapabilityModel] = None,
    spoof_range_m: Optional[float] = None,
    center_deg: float = 180.0,
) -> ExperimentReport:
    """Removed points per attack angle on a dense 10 m ring."""
    chain = chain_preset(chain_name)
    mode = AttackMode(mode)
    cap = capability or default_capability()
    spoof = spoof_range_m if spoof_range_m is not None else chain.spoofing_region_width / 2
    ring = synthesize_ring_scan(sensor, [10.0] * sensor.channel_count)
    report = ExperimentReport(
        "capability",
        params={"sensor": sensor.to_dict(), "chain": chain_name, "mode": mode.value,
                "angles": list(map(float, angles)), "spoofer_distance_m": spoofer_distance_m,
                "spoof_range_m": spoof, "capability": asdict(cap), "center_deg": center_deg},
        columns=("angle_deg", "removed_points", "injected_points", "ideal_points", "expected_points"),
    )
    ideal_rate = sensor.channel_count / sensor.azimuth_resolution_deg
    for a in angles:
        spec = AttackSpec(center_deg, float(a), spoof_range_m=spoof, mode=mode,
                          spoofer_distance_m=spoofer_distance_m if spoofer_distance_m is not None else 2.5)
        _, res = synthesize(ring, spec, chain, cap=cap)
        injected = 0 if res.injected is None else len(res.injected)
        expected = expected_removed_points(cap, float(a), spoofer_distance_m) if mode is AttackMode.CAPABILITY_LIMITED \
            else ideal_rate * float(a)
        report.rows.append((float(a), res.removed_count, injected, ideal_rate * float(a), expected))
    report.summary = {"points_per_degree": ideal_rate,
                      "max_removed": max((r[1] for r in report.rows), default=0)}
    return report


# ------------------------------------------------------------------ attack

@dataclass(frozen=True)
class Campaign:
    scenes: Any = "all"
    classes: tuple[str, ...] = ("pedestrian", "vehicle")
    distance_m: tuple[float, float] = (6.0, 28.0)
    max_per_class: int = 40
    angle_sweep: tuple[float, float, float] = (1.0, 45.0, 1.0)
    chain: str = "hdl64-autoware"
    sensor: str = "hdl64"
    mode: str = "ideal"
    min_points: int = 10
    synthetic: Optional[dict] = None

    @classmethod
    def from_dict(cls, data: dict) -> "Campaign":
        data = dict(data)
        for k in ("classes", "distance_m", "angle_sweep"):
            if k in data:
                data[k] = tuple(data[k])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown campaign keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "Campaign":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class _Target:
    scene: str
    index: int
    box: Box3D


def _kitti_scene(dataset: Path, scene: str, sensor: SensorConfig):
    velo = dataset / "velodyne" / f"{scene}.bin"
    label = dataset / "label_2" / f"{scene}.txt"
    calib = dataset / "calib" / f"{scene}.txt"
    missing = [str(p) for p in (velo, label, calib) if not p.exists()]
    if missing:
        return None, missing
    scan = pio.read_pointcloud_bin(velo.read_bytes(), sensor)
    cal = pio.read_calibration(calib.read_text())
    boxes = [pio.label_to_lidar_box(r, cal) for r in pio.read_labels(label.read_text()) if r.targetable]
    return (scan, boxes), []


def _select_targets(scene: str, scan: Scan, boxes: Sequence[Box3D], camp: Campaign) -> list[_Target]:
    out = []
    for i, b in enumerate(boxes):
        d = math.hypot(b.x, b.y)
        if b.class_label.value not in camp.classes or not camp.distance_m[0] <= d <= camp.distance_m[1]:
            continue
        if int(b.contains(scan.xyz).sum()) < camp.min_points:
            continue
        out.append(_Target(scene, i, b))
    return out


def _attack_target(args) -> tuple[list[tuple], float]:
    scan, target, camp = args
    chain = chain_preset(camp.chain)
    min_angle = min_attack_angle(scan, target.box, step_deg=camp.angle_sweep[2], chain=chain)
    center = target_center_azimuth(target.box)
    rows = []
    lo, hi, step = camp.angle_sweep
    n_steps = int(math.floor((min(hi, min_angle) - lo) / step + 1e-9)) + 1
    for k in range(max(n_steps, 0)):
        angle = lo + k * step
        spec = AttackSpec(center, angle, spoof_range_m=chain.spoofing_region_width / 2, mode=camp.mode)
        after, res = synthesize(scan, spec, chain, targets=[target.box])
        obj, clusters = detect_objects(after)
        present = cluster_present(clusters, obj, target.box)
        rows.append((target.scene, target.index, target.box.class_label.value,
                     round(math.hypot(target.box.x, target.box.y), 3), angle,
                     res.removed_count, res.removal_percentage[0], present, min_angle))
    return rows, min_angle


def synthetic_campaign_scenes(camp: Campaign, sensor: SensorConfig, seed: int):
    """Ray-cast scenes each holding one target of the requested classes."""
    spec = camp.synthetic or {}
    count = int(spec.get("count", 40))
    rng = np.random.default_rng(seed)
    for cls_name in camp.classes:
        cls = BoxClass(cls_name)
        made = 0
        while made < count:
            d = rng.uniform(*camp.distance_m)
            target = random_box(rng, cls, d, rng.uniform(0, 360))
            others = random_objects(rng, int(rng.integers(3, 9)), existing=[target])
            scan = raycast_scene(sensor, [target] + others, rng=rng, frame_id=made)
            if int(target.contains(scan.xyz).sum()) < camp.min_points:
                continue
            yield f"syn-{cls_name}-{made:03d}", scan, [target] + others
            made += 1


def run_attack(
    campaign: Campaign,
    dataset: Optional[Path] = None,
    seed: int = 0,
    workers: int = 1,
) -> ExperimentReport:
    sensor = load_sensor_config(campaign.sensor)
    report = ExperimentReport(
        "attack", params={"campaign": asdict(campaign), "seed": seed,
                          "dataset": str(dataset) if dataset else None},
        columns=("scene", "target", "class", "distance_m", "angle_deg", "removed_points",
                 "removal_percentage", "cluster_present", "min_attack_angle_deg"),
    )
    jobs = []
    per_class = {c: 0 for c in campaign.classes}
    if campaign.synthetic is not None:
        source = synthetic_campaign_scenes(campaign, sensor, seed)
    elif dataset is not None and campaign.scenes:
        scene_ids = campaign.scenes
        if not (Path(dataset) / "velodyne").is_dir():
            report.soft_failures.append(f"{dataset}: no velodyne/ directory")
        if scene_ids == "all":
            scene_ids = sorted(p.stem for p in (Path(dataset) / "velodyne").glob("*.bin"))

        def kitti():
            for sid in scene_ids:
                loaded, missing = _kitti_scene(Path(dataset), sid, sensor)
                if loaded is None:
                    report.soft_failures.extend(f"{sid}: missing {m}" for m in missing)
                    continue
                report.inputs.append(str(Path(dataset) / "velodyne" / f"{sid}.bin"))
                yield sid, loaded[0], loaded[1]
        source = kitti()
    else:
        source = iter(())
    for sid, scan, boxes in source:
        for t in _select_targets(sid, scan, boxes, campaign):
            cls = t.box.class_label.value
            if per_class[cls] >= campaign.max_per_class:
                continue
            per_class[cls] += 1
            jobs.append((scan.subset(t.box.contains(scan.xyz) | _near(scan, t.box)), t, campaign))
        if all(v >= campaign.max_per_class for v in per_class.values()):
            break
    min_angles: dict[str, list[float]] = {c: [] for c in campaign.classes}
    for (rows, min_angle), job in zip(_map(_attack_target, jobs, workers), jobs):
        report.rows.extend(rows)
        min_angles[job[1].box.class_label.value].append(min_angle)
    report.summary = {
        cls: {"targets": len(v), "mean_min_attack_angle_deg": _clean(np.mean(v)) if v else None,
              "median_min_attack_angle_deg": _clean(np.median(v)) if v else None}
        for cls, v in min_angles.items()
    }
    return report


def _near(scan: Scan, box: Box3D, margin_deg: float = 60.0) -> np.ndarray:
    """Points within a wide azimuth window of the target, so clustering sees context."""
    center = target_center_azimuth(box)
    d = np.abs(np.mod(scan.azimuth_deg - center + 180.0, 360.0) - 180.0)
    return d <= margin_deg


# ------------------------------------------------------------------ defend

def _synthetic_defense_sets(sensor: SensorConfig, chain_name: str, n_benign: int, n_attack: int,
                            angles: Optional[tuple[float, float]], seed: int):
    rng = np.random.default_rng(seed)
    chain = chain_preset(chain_name)
    benign = [benign_scene(sensor, rng, frame_id=i).scan for i in range(n_benign)]
    attacks = []
    for i in range(n_attack):
        angle = None if angles is None else float(rng.integers(int(angles[0]), int(angles[1]) + 1))
        attacks.append(attack_scene(sensor, rng, chain, angle_deg=angle, frame_id=i).scan)
    return benign, attacks


def _kitti_defense_sets(dataset: Path, sensor: SensorConfig, chain_name: str, n_benign: int,
                        n_attack: int, angles: Optional[tuple[float, float]], seed: int, report):
    rng = np.random.default_rng(seed)
    chain = chain_preset(chain_name)
    ids = sorted(p.stem for p in (dataset / "velodyne").glob("*.bin"))
    if not ids:
        report.soft_failures.append(f"{dataset}: no velodyne/*.bin scans")
    benign, attacks = [], []
    for sid in ids:
        if len(benign) >= n_benign and len(attacks) >= n_attack:
            break
        loaded, missing = _kitti_scene(dataset, sid, sensor)
        if loaded is None:
            report.soft_failures.extend(f"{sid}: missing {m}" for m in missing)
            continue
        scan, boxes = loaded
        report.inputs.append(str(dataset / "velodyne" / f"{sid}.bin"))
        if len(benign) < n_benign:
            benign.append(scan)
        targets = [b for b in boxes if b.class_label is not BoxClass.OTHER and b.contains(scan.xyz).sum() >= 10]
        if targets and len(attacks) < n_attack:
            t = targets[int(rng.integers(len(targets)))]
            angle = min_attack_angle(scan, t, chain=chain) if angles is None else \
                float(rng.integers(int(angles[0]), int(angles[1]) + 1))
            spec = AttackSpec(target_center_azimuth(t), angle, spoof_range_m=chain.spoofing_region_width / 2)
            attacks.append(synthesize(scan, spec, chain)[0])
    return benign, attacks


def run_defend(
    method: str,
    sensor: SensorConfig,
    chain_name: str = "vlp16-apollo",
    n_benign: int = 40,
    n_attack: int = 40,
    angles: Optional[tuple[float, float]] = (1.0, 22.0),
    dataset: Optional[Path] = None,
    seed: int = 0,
    gap_threshold_deg: float = 1.0,
    volume_threshold_m3: float = 15.0,
    roi: Optional[tuple[float, float]] = None,
) -> ExperimentReport:
    if method not in ("azimuth", "fsd"):
        raise ValueError(f"unknown defense method {method!r} (expected 'azimuth' or 'fsd')")
    report = ExperimentReport(
        f"defend-{method}",
        params={"method": method, "sensor": sensor.name, "chain": chain_name, "n_benign": n_benign,
                "n_attack": n_attack, "angles": angles, "seed": seed, "gap_threshold_deg": gap_threshold_deg,
                "volume_threshold_m3": volume_threshold_m3, "roi": roi,
                "dataset": str(dataset) if dataset else None},
        columns=("method", "scene_count", "tpr", "tnr", "mean_runtime_ms", "p50_runtime_ms",
                 "p95_runtime_ms", "association_rate"),
    )
    if dataset is not None:
        benign, attacks = _kitti_defense_sets(Path(dataset), sensor, chain_name, n_benign, n_attack,
                                              angles, seed, report)
    else:
        benign, attacks = _synthetic_defense_sets(sensor, chain_name, n_benign, n_attack, angles, seed)
    detector = azimuth_detector(gap_threshold_deg, roi) if method == "azimuth" else \
        fsd_detector(volume_threshold_m3)
    res = evaluate(detector, benign, attacks)
    assoc = math.nan
    if method == "fsd":
        matched = total = 0
        for s in benign:
            ev = fake_shadow_detect(s, volume_threshold_m3).evidence
            total += len(ev.association)
            matched += sum(v is not None for v in ev.association.values())
        assoc = matched / total if total else math.nan
    report.rows.append((method, res.scene_count, res.tpr, res.tnr, res.mean_runtime_ms,
                        res.p50_runtime_ms, res.p95_runtime_ms, assoc))
    report.summary = {"tpr": _clean(res.tpr), "tnr": _clean(res.tnr),
                      "benign": len(benign), "attacks": len(attacks),
                      "association_rate": _clean(assoc), "errors": res.errors}
    return report


# ---------------------------------------------------------------- simulate

_GRID_FIELDS = {
    "attack_angle_deg": float, "attack_start_distance_m": float, "obstacle_distance_m": float,
    "v_max_mps": float, "accel_mps2": float, "decel_mps2": float, "stop_margin_m": float,
}


def _grid_row(base: ScenarioConfig, row: dict) -> ScenarioConfig:
    row = {k: v for k, v in row.items() if v not in (None, "")}
    cls = BoxClass(row.pop("class", "pedestrian"))
    lateral = float(row.pop("lateral_m", 0.0))
    unknown = set(row) - set(_GRID_FIELDS)
    if unknown:
        raise ValueError(f"unknown fields {sorted(unknown)}")
    kw = {k: _GRID_FIELDS[k](v) for k, v in row.items()}
    return replace(base, obstacle=default_obstacle(lateral, cls), **kw)


def load_scenario_grid(path: str | Path) -> list[ScenarioConfig]:
    """Read a scenario grid.

    ``.csv``: one scenario per line, header naming ``class``, ``lateral_m``
    and any of the numeric scenario fields.  Otherwise JSON: optional
    ``base`` overrides plus either a ``scenarios`` list or an
    ``angles``/``start_distances``/``laterals``/``classes`` product.
    Bad rows raise :class:`FormatError` with the offending line.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".csv":
        lines = text.splitlines()
        if not lines:
            raise pio.FormatError(f"{path}: empty grid", line=1)
        header = [h.strip() for h in lines[0].split(",")]
        out = []
        for n, line in enumerate(lines[1:], start=2):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cells = [c.strip() for c in line.split(",")]
            if len(cells) != len(header):
                raise pio.FormatError(f"{path}: expected {len(header)} columns, got {len(cells)}", line=n)
            try:
                out.append(_grid_row(ScenarioConfig(), dict(zip(header, cells))))
            except (TypeError, ValueError) as exc:
                raise pio.FormatError(f"{path}: {exc}", line=n) from None
        return out
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise pio.FormatError(f"{path}: {exc.msg}", line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise pio.FormatError(f"{path}: grid must be a JSON object", line=1)
    try:
        base = _grid_row(ScenarioConfig(), dict(doc.get("base", {})))
    except (TypeError, ValueError) as exc:
        raise pio.FormatError(f"{path}: bad base scenario ({exc})", line=_json_line(text, "base")) from None
    if "scenarios" in doc:
        out = []
        for k, row in enumerate(doc["scenarios"]):
            try:
                out.append(_grid_row(base, dict(row)))
            except (TypeError, ValueError) as exc:
                raise pio.FormatError(f"{path}: scenario {k}: {exc}",
                                      line=_json_line(text, "scenarios", k)) from None
        return out
    try:
        return scenario_grid(
            angles=doc.get("angles", (5.0, 10.0)),
            start_distances=doc.get("start_distances", (10.0, 20.0, 30.0, 40.0, 50.0)),
            laterals=doc.get("laterals", (-1.5, 0.0, 1.5)),
            classes=tuple(BoxClass(c) for c in doc.get("classes", ("pedestrian", "vehicle"))),
            base=base,
        )
    except (TypeError, ValueError) as exc:
        raise pio.FormatError(f"{path}: {exc}", line=1) from None


def _json_line(text: str, key: str, index: Optional[int] = None) -> Optional[int]:
    """Best-effort line of ``key`` (or its ``index``-th list element) in a JSON text."""
    pos = text.find(f'"{key}"')
    if pos < 0:
        return None
    if index is not None:
        depth, seen = 0, -1
        for i in range(text.index("[", pos) + 1, len(text)):
            ch = text[i]
            if ch in "[{":
                if depth == 0:
                    seen += 1
                    if seen == index:
                        pos = i
                        break
                depth += 1
            elif ch in "]}":
                depth -= 1
                if depth < 0:
                    break
    return text.count("\n", 0, pos) + 1


def run_simulate(scenarios: Sequence[ScenarioConfig], dt_s: float = 0.01,
                 timeline_dir: Optional[Path] = None) -> ExperimentReport:
    report = ExperimentReport(
        "simulate",
        params={"dt_s": dt_s, "scenarios": [_scenario_dict(s) for s in scenarios]},
        columns=("scenario", "class", "lateral_m", "attack_angle_deg", "attack_start_distance_m",
                 "outcome", "impact_speed_mps", "hidden_fraction", "final_position_m",
                 "reappear_distance_m", "reappear_speed_mps"),
    )
    for k, cfg in enumerate(scenarios):
        tl = simulate(cfg, dt_s)
        if timeline_dir is not None:
            Path(timeline_dir).mkdir(parents=True, exist_ok=True)
            (Path(timeline_dir) / f"timeline_{k:03d}.csv").write_text(tl.to_csv())
        r = tl.reappearance
        report.rows.append((k, cfg.obstacle.class_label.value, cfg.obstacle.y, cfg.attack_angle_deg,
                            cfg.attack_start_distance_m, tl.outcome, tl.impact_speed_mps,
                            tl.hidden_fraction(), float(tl.position_m[-1]),
                            r[1] if r else math.nan, r[2] if r else math.nan))
    report.summary = {
        "scenarios": len(scenarios),
        "collisions": sum(r[5] == "collision" for r in report.rows),
    }
    return report


def _scenario_dict(s: ScenarioConfig) -> dict:
    d = asdict(s)
    d["obstacle"]["class_label"] = s.obstacle.class_label.value
    return d


# ------------------------------------------------------------------ safety

def run_safety(params: LaserParams = LaserParams()) -> ExperimentReport:
    rep = safety_report(params)
    report = ExperimentReport("safety", params=asdict(params), columns=("quantity", "value"))
    report.rows = rep.rows()
    report.summary = {
        "pulse_energy_j": rep.pulse_energy_j, "total_energy_j": rep.total_energy_j,
        "mpe_jm2": rep.mpe_jm2, "min_area_m2": rep.min_area_m2, "footnotes": list(rep.footnotes),
    }
    return report
