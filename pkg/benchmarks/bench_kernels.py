"""Time the numba kernels against their numpy fallbacks on scan-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The numba column includes no compile time (one warm-up call per kernel).
"""

import argparse
import math
import timeit

import numpy as np

from pralab import _kernels as k
from pralab.defense import above_ground
from pralab.scenes import beam_directions, random_objects, raycast_scene
from pralab.sensor import sensor_preset


def _inputs(rng):
    vlp = sensor_preset("vlp16")
    dirs = beam_directions(vlp).reshape(-1, 3)
    boxes = random_objects(rng, 12)
    centers = np.array([[b.x, b.y, b.z + b.h / 2] for b in boxes])
    dims = np.array([[b.l, b.w, b.h] for b in boxes])
    yaws = np.array([b.yaw for b in boxes])
    # clustering runs on the above-ground returns of a street scene
    scan = raycast_scene(vlp, boxes)
    xyz = above_ground(scan).xyz
    az = np.sort(rng.uniform(0, 360, dirs.shape[0]))
    return {
        f"cluster_labels ({len(xyz)} pts)": ("cluster_labels", (xyz, 0.5)),
        "gap_indices (29k az)": ("gap_indices", (az, 1.0)),
        "raycast_boxes (29k rays, 12 boxes)": ("raycast_boxes", (dirs, centers, dims, yaws)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    cases = _inputs(np.random.default_rng(0))
    print(f"{'kernel':<36}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for label, (name, a) in cases.items():
        fast = getattr(k, f"{name}_numpy")
        t_np = min(timeit.repeat(lambda: fast(*a), number=1, repeat=args.repeat)) * 1e3
        if k.HAVE_NUMBA:
            jit = getattr(k, f"{name}_numba")
            jit(*a)
            t_nb = min(timeit.repeat(lambda: jit(*a), number=1, repeat=args.repeat)) * 1e3
            ratio = f"{t_np / t_nb:.1f}x"
        else:
            t_nb, ratio = math.nan, "n/a"
        print(f"{label:<36}{t_np:>12.2f}{t_nb:>12.2f}{ratio:>10}")


if __name__ == "__main__":
    main()
