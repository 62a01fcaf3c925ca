#!/usr/bin/env python3
"""Per-stage runtime breakdown at a configurable scan density.

Usage: python scripts/run_timing.py [--rays N] [--scans N]
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dynlo.pipeline import run_pipeline, stats_summary
from dynlo.simulate import (SensorModel, SimScene, reference_config,
                            reference_dynamic_scene, simulate)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rays", type=int, default=27000)
    ap.add_argument("--scans", type=int, default=20)
    args = ap.parse_args()

    base = reference_dynamic_scene(n_scans=args.scans, rays_per_scan=args.rays)
    sensor = SensorModel(rays_per_scan=args.rays, max_range=45.0,
                         noise_sigma=0.03)
    scene = SimScene(dt=base.dt, ego_poses=base.ego_poses, sensor=sensor,
                     rects=base.rects, boxes=base.boxes, movers=base.movers)
    res = simulate(scene, 0)
    out = run_pipeline(res.scans, res.detections, reference_config())
    s = stats_summary(out.stats)
    print("scans: %d, raw points/scan: ~%d" % (args.scans, len(res.scans[0])))
    print("mean per-scan wall time [ms]:")
    print("  Preprocessing %8.2f" % s["preprocess_ms"])
    print("  Tracker       %8.2f" % s["tracker_ms"])
    print("  Odometry      %8.2f" % s["odometry_ms"])
    print("  Total         %8.2f" % s["total_ms"])


if __name__ == "__main__":
    main()
