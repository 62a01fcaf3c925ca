#!/usr/bin/env python3
"""Ablation study on the reference dynamic scene.

Runs the four pipeline variants (full, no dynamic removal, no posture
constraint, EKF tracker) over several seeds and prints an APE / RPE /
max-|z-drift| table plus map PR/RR/F1 for the full variant.

Usage: python scripts/run_ablation.py [--seeds N] [--scans N] [--rays N]
"""

import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from dynlo.metrics import Trajectory, ape_rmse, map_pr_rr_f1, max_z_drift, rpe_rmse
from dynlo.pipeline import run_pipeline
from dynlo.simulate import reference_config, reference_dynamic_scene, simulate

VARIANTS = [
    ("full", {}),
    ("no-removal", {"enable_removal": False}),
    ("no-constraint", {"enable_constraint": False}),
    ("ekf", {"tracker_kind": "ekf"}),
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--scans", type=int, default=200)
    ap.add_argument("--rays", type=int, default=2400)
    args = ap.parse_args()

    rows = {name: [] for name, _ in VARIANTS}
    quality = []
    t0 = time.perf_counter()
    for seed in range(args.seeds):
        scene = reference_dynamic_scene(n_scans=args.scans,
                                        rays_per_scan=args.rays)
        res = simulate(scene, seed)
        gt = Trajectory.from_poses(res.gt_poses)
        for name, overrides in VARIANTS:
            cfg = reference_config()
            for key, value in overrides.items():
                setattr(cfg, key, value)
            out = run_pipeline(res.scans, res.detections, cfg)
            rows[name].append((ape_rmse(out.trajectory, gt),
                               rpe_rmse(out.trajectory, gt),
                               max_z_drift(out.trajectory, gt)))
            if name == "full":
                quality.append(map_pr_rr_f1(out.counts))
        print("seed %d done (%.0f s elapsed)" % (seed, time.perf_counter() - t0))

    print("\n%-14s %10s %10s %12s" % ("variant", "APE [m]", "RPE [m]",
                                      "max|z| [m]"))
    for name, _ in VARIANTS:
        vals = np.array(rows[name])
        print("%-14s %10.4f %10.4f %12.4f   (medians over %d seeds)"
              % (name, *np.median(vals, axis=0), args.seeds))
    pr = np.median([q.pr for q in quality])
    rr = np.median([q.rr for q in quality])
    f1 = np.median([q.f1 for q in quality])
    print("\nfull-variant map quality: PR %.2f%%  RR %.2f%%  F1 %.3f" % (pr, rr, f1))


if __name__ == "__main__":
    main()
