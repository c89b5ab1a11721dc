#!/usr/bin/env python3
"""Multi-seed synthetic benchmark: model-based localization vs KNN.

Reproduces the headline comparison on synthetic scenes: AP refinement
improvement over the trilateration baseline, then robot localization
accuracy inside the fingerprinted area and in a held-out wing where KNN
cannot extrapolate.

Usage:
    python scripts/run_benchmark.py [--seeds 20] [--sigma 4.0] [--out report.json]
"""
import argparse
import json
import sys
import time

import numpy as np

from wifiloc.ap_localize import localize_all_aps
from wifiloc.calibrate import calibrate, make_input
from wifiloc.fingerprint import build_index, knn_localize
from wifiloc.geometry import LocalPoint3, euclidean
from wifiloc.propagation import PropagationParams
from wifiloc.robot_localize import (
    LocalizationError,
    _build_walls,
    localize_robot,
    summarize_errors,
)
from wifiloc.simulate import Region, ScenarioSpec, generate, holdout_split, synth_scan
from wifiloc.solver import SolverConfig

TRUE = PropagationParams(rssi0=-28.79, n=2.5, wall_loss=10.77, sigma=0.0)
ROBOT_CFG = SolverConfig(max_iters=20, epsilon=0.01)


def ap_benchmark(seeds: int, sigma: float) -> dict:
    noisy = PropagationParams(TRUE.rssi0, TRUE.n, TRUE.wall_loss, sigma)
    initial, refined = [], []
    for seed in range(seeds):
        spec = ScenarioSpec(
            rooms_x=5, rooms_y=4, floors=2, ap_count=8,
            fingerprint_count=240, params=noisy, seed=seed,
        )
        m, ledger = generate(spec)
        result, _ = localize_all_aps(m, TRUE, iters=10)
        for est in result.estimates:
            truth = LocalPoint3(*ledger.ap_positions[est.ap_id])
            refined.append(euclidean(est.position, truth))
            initial.append(euclidean(est.per_iteration_trace[0][0], truth))
    mean_initial = float(np.mean(initial))
    mean_refined = float(np.mean(refined))
    return {
        "mean_initial_error": mean_initial,
        "mean_refined_error": mean_refined,
        "improvement_pct": 100.0 * (mean_initial - mean_refined) / mean_initial,
    }


def robot_benchmark(seeds: int, sigma: float) -> dict:
    noisy = PropagationParams(TRUE.rssi0, TRUE.n, TRUE.wall_loss, sigma)
    region = Region(x_min=24.0)
    holdout = {"model": [], "knn": []}
    incov = {"model": [], "knn": []}
    for seed in range(seeds):
        spec = ScenarioSpec(
            rooms_x=6, rooms_y=3, floors=1, ap_count=12,
            fingerprint_count=120, params=noisy, seed=seed,
        )
        m, ledger = generate(spec)
        train, test = holdout_split(m, region)
        params, _ = calibrate(make_input(train))
        walls, slabs = _build_walls(train)
        index = build_index(train)
        for pos, _, scan in test:
            try:
                r = localize_robot(
                    scan, train, params, ROBOT_CFG,
                    walls_by_level=walls, slab_zs=slabs,
                )
                holdout["model"].append(euclidean(r.position, pos))
            except LocalizationError:
                pass
            k = knn_localize(index, scan)
            holdout["knn"].append(euclidean(k.position, pos))

        rng = np.random.default_rng(1000 + seed)
        walls_f, slabs_f = _build_walls(m)
        index_f = build_index(m)
        for _ in range(15):
            p = LocalPoint3(
                float(rng.uniform(1, 23)), float(rng.uniform(1, 17)), 0.5
            )
            scan = synth_scan(
                m, ledger.ap_positions, p, noisy,
                rng=rng, walls=walls_f, slab_zs=slabs_f,
            )
            if len(scan) < 3:
                continue
            try:
                r = localize_robot(
                    scan, m, params, ROBOT_CFG,
                    walls_by_level=walls_f, slab_zs=slabs_f,
                )
            except LocalizationError:
                continue
            incov["model"].append(euclidean(r.position, p))
            incov["knn"].append(euclidean(knn_localize(index_f, scan).position, p))
    return {
        "holdout": {k: summarize_errors(v) for k, v in holdout.items()},
        "in_coverage": {k: summarize_errors(v) for k, v in incov.items()},
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--sigma", type=float, default=4.0)
    parser.add_argument("--out", help="write the full report as JSON")
    args = parser.parse_args(argv)

    t0 = time.perf_counter()
    report = {
        "config": {"seeds": args.seeds, "sigma": args.sigma},
        "ap": ap_benchmark(args.seeds, args.sigma),
        "robot": robot_benchmark(args.seeds, args.sigma),
    }
    report["elapsed_s"] = time.perf_counter() - t0

    ap = report["ap"]
    print(f"AP localization  ({args.seeds} seeds, sigma={args.sigma} dB)")
    print(f"  initial (trilateration) mean error : {ap['mean_initial_error']:.2f} m")
    print(f"  refined (wall-compensated)         : {ap['mean_refined_error']:.2f} m")
    print(f"  improvement                        : {ap['improvement_pct']:.1f} %")
    for zone, label in (("in_coverage", "fingerprinted area"),
                        ("holdout", "held-out wing")):
        row = report["robot"][zone]
        print(f"robot localization — {label}")
        for method in ("model", "knn"):
            s = row[method]
            print(
                f"  {method:<6} mean {s['mean']:.2f} m  std {s['std']:.2f}"
                f"  rmse {s['rmse']:.2f}  p95 {s['p95']:.2f}  (n={s['count']})"
            )
    print(f"elapsed: {report['elapsed_s']:.1f} s")

    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
        print(f"report written to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
