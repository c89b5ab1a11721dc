"""Command-line pipeline: simulate -> calibrate -> locate-aps -> localize/eval.

Exit codes: 0 success, 1 usage, 2 data/integrity error, 3 numerical
failure. Errors are emitted as one JSON object on stderr so callers can
parse them.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .ap_localize import ApLocalizationError, localize_all_aps
from .calibrate import CalibrationError, calibrate, make_input
from .evalreport import (
    ReportError,
    ap_error_report,
    metrics_csv,
    render_svg,
    storage_audit,
)
from .fingerprint import FingerprintIndexError, build_index, knn_localize
from .geometry import GeometryError, LocalPoint3
from .osmag import MapError, parse_map, serialize_map
from .propagation import PropagationError, PropagationParams
from .robot_localize import (
    LocalizationError,
    RssiScan,
    SolverConfig,
    average_scan,
    evaluate_localization,
    localize_robot,
    summarize_errors,
)
from .simulate import ScenarioSpec, SimulationError, generate, holdout_split
from .solver import SolverError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DATA_ERRORS = (
    MapError,
    SimulationError,
    LocalizationError,
    FingerprintIndexError,
    ReportError,
    GeometryError,
    PropagationError,
    FileNotFoundError,
    json.JSONDecodeError,
    KeyError,
)
NUMERIC_ERRORS = (SolverError, ApLocalizationError, CalibrationError)


def _fail(code: int, kind: str, msg: str) -> int:
    print(json.dumps({"error": kind, "message": msg}), file=sys.stderr)
    return code


def _read(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _load_map(path: str):
    return parse_map(_read(path))


def _load_params(path: str) -> PropagationParams:
    return PropagationParams.from_json(_read(path))


def _load_scan(path: str, window: float) -> dict[str, float]:
    readings = []
    for line in _read(path).splitlines():
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        readings.append((rec["ap_id"], float(rec["rssi"]), float(rec.get("t", 0.0))))
    return average_scan(RssiScan(readings=readings, window=window))


def _load_testset(path: str):
    points = []
    for line in _read(path).splitlines():
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        truth = LocalPoint3(*rec["truth"])
        points.append((truth, rec["scan"]))
    return points


def cmd_simulate(args) -> int:
    spec = ScenarioSpec.from_dict(json.loads(_read(args.spec)))
    m, ledger = generate(spec)
    _write(args.out, serialize_map(m))
    if args.truth:
        _write(args.truth, ledger.to_json())
    if args.testset and spec.holdout_region is not None:
        train, testset = holdout_split(m, spec.holdout_region)
        _write(args.out, serialize_map(train))
        lines = [
            json.dumps(
                {"truth": [p.x, p.y, p.z], "level": lvl, "scan": scan}
            )
            for p, lvl, scan in testset
        ]
        _write(args.testset, "\n".join(lines) + ("\n" if lines else ""))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    m = _load_map(args.map)
    if args.surveyed_aps:
        wanted = set(args.surveyed_aps)
        for ap in m.aps:
            if ap.ap_id not in wanted and ap.source == "surveyed":
                ap.source = "estimated"
    inp = make_input(m, surveyed_only=True, level=args.train_level)
    params, report = calibrate(inp)
    _write(args.out, params.to_json())
    if args.report:
        _write(args.report, report.to_json())
    print(params.to_json())
    return EXIT_OK


def cmd_locate_aps(args) -> int:
    m = _load_map(args.map)
    params = _load_params(args.params)
    result, m = localize_all_aps(m, params, iters=args.iters, jobs=args.jobs)
    _write(args.out, serialize_map(m))
    if args.report:
        surveyed = [ap for ap in m.aps if ap.source == "surveyed"]
        payload = json.loads(result.to_json())
        try:
            payload["errors_vs_truth"] = ap_error_report(result.estimates, surveyed)
        except ReportError:
            pass
        _write(args.report, json.dumps(payload, indent=2))
    return EXIT_OK


def cmd_localize(args) -> int:
    m = _load_map(args.map)
    params = _load_params(args.params)
    scan = _load_scan(args.scan, args.window)
    cfg = SolverConfig(max_iters=args.max_iters, epsilon=args.epsilon)
    res = localize_robot(scan, m, params, cfg)
    print(res.to_json())
    return EXIT_OK


def cmd_fingerprint_knn(args) -> int:
    m = _load_map(args.map)
    index = build_index(m)
    scan = _load_scan(args.scan, args.window)
    res = knn_localize(index, scan, k=args.k)
    print(res.to_json())
    return EXIT_OK


def cmd_eval(args) -> int:
    m = _load_map(args.map)
    points = _load_testset(args.testset)
    if args.method == "model":
        params = _load_params(args.params)
        metrics = evaluate_localization(points, m, params)
    else:
        index = build_index(m)
        errors = []
        misses = 0
        for truth, scan in points:
            try:
                res = knn_localize(index, scan, k=args.k)
            except FingerprintIndexError:
                misses += 1
                continue
            d = (
                (res.position.x - truth.x) ** 2
                + (res.position.y - truth.y) ** 2
                + (res.position.z - truth.z) ** 2
            ) ** 0.5
            errors.append(d)
        metrics = summarize_errors(errors, misses)
    text = json.dumps(metrics, indent=2)
    if args.out:
        _write(args.out, text)
        if args.csv:
            _write(args.csv, metrics_csv(metrics))
    print(text)
    return EXIT_OK


def cmd_audit(args) -> int:
    variants = {os.path.basename(p): parse_map(_read(p)) for p in args.maps}
    print(json.dumps(storage_audit(variants), indent=2))
    return EXIT_OK


def cmd_render(args) -> int:
    m = _load_map(args.map)
    overlays: dict[str, list[LocalPoint3]] = {
        "fingerprint": [fp.position for fp in m.fingerprints],
        "truth": [ap.position for ap in m.aps if ap.source == "surveyed"],
        "estimate": [ap.position for ap in m.aps if ap.source == "estimated"],
    }
    if args.overlay:
        rep = json.loads(_read(args.overlay))
        extra = [
            LocalPoint3(*e["position"]) for e in rep.get("estimates", [])
        ]
        if extra:
            overlays["estimate"] = extra
    overlays = {k: v for k, v in overlays.items() if v}
    svg = render_svg(m, overlays, level=args.level)
    _write(args.out, svg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wifiloc",
        description="Physics-informed WiFi indoor localization over osmAG maps",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scenario map")
    p.add_argument("--spec", required=True, help="scenario JSON")
    p.add_argument("--out", required=True, help="output osmAG map path")
    p.add_argument("--truth", help="truth ledger JSON path")
    p.add_argument("--testset", help="holdout test set JSONL path")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("calibrate", help="fit propagation parameters")
    p.add_argument("--map", required=True)
    p.add_argument("--surveyed-aps", nargs="*", default=None,
                   help="restrict calibration anchors to these AP ids")
    p.add_argument("--train-level", type=int, default=None)
    p.add_argument("--out", required=True, help="params JSON path")
    p.add_argument("--report", help="calibration report JSON path")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("locate-aps", help="estimate AP positions into the map")
    p.add_argument("--map", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", required=True, help="augmented map path")
    p.add_argument("--report", help="estimate report JSON path")
    p.set_defaults(fn=cmd_locate_aps)

    p = sub.add_parser("localize", help="localize a robot from an RSSI scan")
    p.add_argument("--map", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--scan", required=True, help="JSONL scan ({ap_id, rssi, t}), - for stdin")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--max-iters", type=int, default=10)
    p.add_argument("--window", type=float, default=5.0)
    p.set_defaults(fn=cmd_localize)

    p = sub.add_parser("fingerprint-knn", help="KNN fingerprinting baseline")
    p.add_argument("--map", required=True)
    p.add_argument("--scan", required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--window", type=float, default=5.0)
    p.set_defaults(fn=cmd_fingerprint_knn)

    p = sub.add_parser("eval", help="run a test set and report metrics")
    p.add_argument("--map", required=True)
    p.add_argument("--testset", required=True)
    p.add_argument("--method", choices=["model", "knn"], required=True)
    p.add_argument("--params", help="params JSON (model method)")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", help="metrics JSON path")
    p.add_argument("--csv", help="metrics CSV path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("audit", help="storage size comparison of maps")
    p.add_argument("--maps", nargs="+", required=True)
    p.set_defaults(fn=cmd_audit)

    p = sub.add_parser("render", help="render a map (plus overlays) to SVG")
    p.add_argument("--map", required=True)
    p.add_argument("--overlay", help="estimate report JSON to overlay")
    p.add_argument("--level", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except NUMERIC_ERRORS as exc:
        return _fail(EXIT_NUMERIC, type(exc).__name__, str(exc))
    except DATA_ERRORS as exc:
        return _fail(EXIT_DATA, type(exc).__name__, str(exc))
    except ValueError as exc:
        return _fail(EXIT_USAGE, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
