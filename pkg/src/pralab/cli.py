"""``pralab`` command-line front end.

Every subcommand builds an experiment report and writes ``<name>.csv`` and
``<name>.json`` into ``--out`` (or prints the CSV when ``--out`` is absent).
Exit status is 0 on success, 2 on hard errors; per-scene problems are listed
under ``soft_failures`` in the JSON summary.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import experiments as ex
from . import io as pio
from .attack import CapabilityModel
from .laser_safety import LaserParams
from .sensor import load_sensor_config

DATASET_ENV = "PRALAB_DATASET"

log = logging.getLogger("pralab")


def parse_range(text: str) -> list[float]:
    """``a:b[:step]`` (inclusive) or a comma list."""
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) not in (2, 3):
            raise argparse.ArgumentTypeError(f"bad range {text!r}")
        lo, hi = parts[:2]
        step = parts[2] if len(parts) == 3 else 1.0
        if step <= 0 or hi < lo:
            raise argparse.ArgumentTypeError(f"bad range {text!r}")
        n = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return [lo + k * step for k in range(n)]
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def _pair(text: str) -> tuple[float, float]:
    vals = parse_range(text) if "," in text else [float(p) for p in text.split(":")]
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected two numbers, got {text!r}")
    return vals[0], vals[1]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pralab", description=__doc__.splitlines()[0])
    p.add_argument("--config", default=None, help="sensor preset name or sensor JSON file")
    p.add_argument("--dataset", type=Path, default=None,
                   help=f"KITTI-layout dataset root (default: ${DATASET_ENV})")
    p.add_argument("--out", type=Path, default=None, help="report directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("capability", help="removed points per attack angle")
    c.add_argument("--chain", default="vlp16-apollo")
    c.add_argument("--angles", type=parse_range, default=parse_range("0:45"))
    c.add_argument("--mode", choices=("ideal", "capability_limited"), default="ideal")
    c.add_argument("--spoofer-distance", type=float, default=None)
    c.add_argument("--capability", type=Path, default=None, help="capability model JSON")
    c.add_argument("--spoof-range", type=float, default=None)

    a = sub.add_parser("attack", help="attack campaign over dataset or synthetic targets")
    a.add_argument("campaign", type=Path, nargs="?", default=None, help="campaign JSON")

    d = sub.add_parser("defend", help="evaluate a detector")
    d.add_argument("--method", required=True, choices=("azimuth", "fsd"))
    d.add_argument("--chain", default="vlp16-apollo")
    d.add_argument("--benign", type=int, default=40)
    d.add_argument("--attacks", type=int, default=40)
    d.add_argument("--angles", default="1:22",
                   help="attack angle range a:b, or 'min' for each target's full-removal angle")
    d.add_argument("--gap-threshold", type=float, default=1.0)
    d.add_argument("--volume-threshold", type=float, default=15.0)
    d.add_argument("--roi", type=_pair, default=None, help="azimuth ROI start:end in degrees")

    s = sub.add_parser("simulate", help="scenario grid through the kinematics model")
    s.add_argument("grid", type=Path, nargs="?", default=None, help="grid JSON or CSV")
    s.add_argument("--dt", type=float, default=0.01)
    s.add_argument("--timelines", action="store_true", help="also write per-scenario timelines")

    f = sub.add_parser("safety", help="laser eye-safety numbers")
    f.add_argument("--power", type=float, default=70.0, help="peak power in W")
    f.add_argument("--pulse-width", type=float, default=40e-9, help="seconds")
    f.add_argument("--wavelength", type=float, default=905.0, help="nm")
    f.add_argument("--exposure", type=float, default=0.25, help="seconds")
    f.add_argument("--pulses", type=int, default=1)

    r = sub.add_parser("parse", help="convert point-cloud files to scan traces")
    r.add_argument("inputs", type=Path, nargs="+")
    r.add_argument("--format", dest="fmt", choices=("kitti-bin", "raw", "csv", "pcd"), default=None,
                   help="input format (default: from extension)")
    r.add_argument("--to", choices=("csv", "pcd"), default="csv")
    return p


_EXT_FORMATS = {".bin": "kitti-bin", ".raw": "raw", ".csv": "csv", ".pcd": "pcd"}


def _read_any(path: Path, fmt: str, config):
    data = path.read_bytes()
    if fmt == "kitti-bin":
        return pio.read_pointcloud_bin(data, config)
    if fmt == "raw":
        if len(data) % pio.PACKET_SIZE:
            raise pio.FormatError(f"{path}: size {len(data)} is not a whole number of packets",
                                  offset=len(data) - len(data) % pio.PACKET_SIZE)
        returns = []
        for k in range(0, len(data), pio.PACKET_SIZE):
            try:
                returns += pio.parse_raw_packet(data[k:k + pio.PACKET_SIZE], config.channel_count)
            except pio.FormatError as exc:
                raise pio.FormatError(f"{path}: {exc.message}", offset=k + (exc.offset or 0)) from None
        return pio.raw_returns_to_scan(returns, config)
    return pio.read_scan(data, fmt, config)


def _cmd_parse(args, config) -> ex.ExperimentReport:
    report = ex.ExperimentReport("parse", params={"to": args.to, "format": args.fmt,
                                                  "sensor": config.to_dict()},
                                 columns=("input", "output", "points"))
    for path in args.inputs:
        fmt = args.fmt or _EXT_FORMATS.get(path.suffix.lower())
        if fmt is None:
            report.soft_failures.append(f"{path}: unknown format")
            continue
        if not path.exists():
            report.soft_failures.append(f"{path}: missing")
            continue
        scan = _read_any(path, fmt, config)
        report.inputs.append(str(path))
        target = ""
        if args.out is not None:
            args.out.mkdir(parents=True, exist_ok=True)
            target = str(args.out / f"{path.stem}.{args.to}")
            Path(target).write_bytes(pio.write_scan(scan, args.to))
        report.rows.append((str(path), target, len(scan)))
    return report


def run(args: argparse.Namespace) -> ex.ExperimentReport:
    dataset = args.dataset or (Path(os.environ[DATASET_ENV]) if os.environ.get(DATASET_ENV) else None)
    config = load_sensor_config(args.config or "vlp16")
    if args.command == "capability":
        cap = CapabilityModel.from_file(args.capability) if args.capability else None
        return ex.run_capability(config, args.chain, args.angles, args.mode, args.spoofer_distance,
                                 cap, args.spoof_range)
    if args.command == "attack":
        if args.campaign:
            campaign = ex.Campaign.from_file(args.campaign)
        else:
            campaign = ex.Campaign() if dataset else ex.Campaign(synthetic={})
        if args.config:
            campaign = replace(campaign, sensor=args.config)
        return ex.run_attack(campaign, dataset, args.seed, args.workers)
    if args.command == "defend":
        angles = None if args.angles == "min" else _pair(args.angles)
        return ex.run_defend(args.method, config, args.chain, args.benign, args.attacks, angles,
                             dataset, args.seed, args.gap_threshold, args.volume_threshold, args.roi)
    if args.command == "simulate":
        grid = ex.load_scenario_grid(args.grid) if args.grid else ex.scenario_grid()
        timelines = args.out / "timelines" if args.timelines and args.out else None
        return ex.run_simulate(grid, args.dt, timelines)
    if args.command == "safety":
        return ex.run_safety(LaserParams(args.power, args.pulse_width, args.wavelength,
                                         args.exposure, args.pulses))
    if args.command == "parse":
        return _cmd_parse(args, config)
    raise ValueError(f"unknown command {args.command!r}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        report = run(args)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"pralab {args.command}: error: {msg}", file=sys.stderr)
        return 2
    for note in report.soft_failures:
        log.warning("%s", note)
    if args.out is not None:
        csv_path, json_path = report.write(args.out)
        print(f"wrote {csv_path} and {json_path}")
    else:
        sys.stdout.write(report.to_csv())
    return 0


if __name__ == "__main__":
    sys.exit(main())
