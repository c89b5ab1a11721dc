"""Benchmark reports: AP error tables, storage audits, SVG map renders.

All emitters are deterministic (byte-identical output for identical
inputs) so reports can be diffed in tests and CI.
"""
from __future__ import annotations

import csv
import io

import numpy as np

from .ap_localize import ApEstimate
from .geometry import LocalPoint3, euclidean
from .osmag import ApRecord, OsmAgMap, serialize_map


class ReportError(ValueError):
    pass


def ap_error_report(
    estimates: list[ApEstimate], truth: list[ApRecord]
) -> dict:
    """Per-AP error vs surveyed truth, plus refined-vs-initial improvement."""
    truth_by_id = {ap.ap_id: ap for ap in truth}
    rows = []
    for est in estimates:
        gt = truth_by_id.get(est.ap_id)
        if gt is None:
            continue
        initial_pos = est.per_iteration_trace[0][0]
        rows.append(
            {
                "ap_id": est.ap_id,
                "error": euclidean(est.position, gt.position),
                "initial_error": euclidean(initial_pos, gt.position),
                "iterations": est.iteration,
            }
        )
    if not rows:
        raise ReportError("no estimate matches a surveyed AP id")
    errors = np.array([r["error"] for r in rows])
    initial = np.array([r["initial_error"] for r in rows])
    mean_initial = float(initial.mean())
    if mean_initial > 0:
        improvement_pct = 100.0 * (mean_initial - float(errors.mean())) / mean_initial
        note = None
    else:
        improvement_pct = 0.0
        note = "zero-error baseline; improvement undefined, reported as 0"
    report = {
        "per_ap": rows,
        "mean_error": float(errors.mean()),
        "std_error": float(errors.std()),
        "mean_initial_error": mean_initial,
        "std_initial_error": float(initial.std()),
        "improvement_pct": improvement_pct,
    }
    if note:
        report["note"] = note
    return report


def error_histogram_csv(errors: list[float], bin_width: float = 1.0) -> str:
    """RFC-4180 CSV histogram of localization errors."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\r\n")
    w.writerow(["bin_low", "bin_high", "count"])
    if errors:
        top = max(errors)
        nbins = max(1, int(np.ceil(top / bin_width)))
        hist, edges = np.histogram(errors, bins=nbins, range=(0.0, nbins * bin_width))
        for lo, hi, c in zip(edges[:-1], edges[1:], hist):
            w.writerow([f"{lo:g}", f"{hi:g}", int(c)])
    return out.getvalue()


def metrics_csv(metrics: dict) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\r\n")
    w.writerow(["mean", "std", "rmse", "p95", "count", "misses"])
    w.writerow(
        [
            metrics.get("mean"),
            metrics.get("std"),
            metrics.get("rmse"),
            metrics.get("p95"),
            metrics.get("count"),
            metrics.get("misses"),
        ]
    )
    return out.getvalue()


def storage_audit(variants: dict[str, OsmAgMap]) -> dict:
    """Serialized byte sizes, per-record sizes, and pairwise ratios."""
    sizes = {
        name: len(serialize_map(m).encode("utf-8")) for name, m in variants.items()
    }
    per_record = {}
    for name, m in variants.items():
        entry = {}
        if m.aps:
            entry["per_ap_bytes"] = _payload(m, "ap") / len(m.aps)
        if m.fingerprints:
            entry["per_fingerprint_bytes"] = _payload(m, "fp") / len(m.fingerprints)
        per_record[name] = entry
    names = sorted(sizes)
    ratios = {
        f"{a}/{b}": sizes[a] / sizes[b]
        for a in names
        for b in names
        if sizes[b] > 0
    }
    return {"bytes": sizes, "per_record": per_record, "ratios": ratios}


def _payload(m: OsmAgMap, kind: str) -> int:
    """Byte cost of the WiFi records: full map minus the map without them."""
    import copy

    bare = copy.deepcopy(m)
    if kind == "ap":
        drop = {
            n.id for n in bare.nodes.values() if n.tags.get("wifi:ap") == "yes"
        }
        bare.aps = []
    else:
        drop = {
            n.id
            for n in bare.nodes.values()
            if n.tags.get("wifi:fingerprint") == "yes"
        }
        bare.fingerprints = []
    for nid in drop:
        del bare.nodes[nid]
    return len(serialize_map(m).encode()) - len(serialize_map(bare).encode())


def wifi_payload_bytes(m: OsmAgMap) -> dict:
    """AP and fingerprint payload sizes for one map."""
    return {"ap_bytes": _payload(m, "ap"), "fingerprint_bytes": _payload(m, "fp")}


MARKER_COLORS = {
    "truth": "#2ca02c",        # green
    "estimate": "#d62728",     # red
    "fingerprint": "#1f77b4",  # blue
    "testpoint": "#ff7f0e",
}


def render_svg(
    m: OsmAgMap,
    overlays: dict[str, list[LocalPoint3]] | None = None,
    level: int | None = None,
    scale: float = 10.0,
) -> str:
    """Deterministic SVG 1.1 rendering: way polygons plus overlay markers."""
    if not m.nodes:
        raise ReportError("cannot render an empty map")
    overlays = overlays or {}
    from .osmag import _node_position, _way_level

    pts = []
    polys = []
    for way_id in sorted(m.ways):
        way = m.ways[way_id]
        if not way.is_area:
            continue
        if level is not None and _way_level(way) != level:
            continue
        ring = []
        for ref in way.node_refs:
            p, _ = _node_position(m.nodes[ref], m.origin, m.floor_height)
            ring.append((p.x, p.y))
            pts.append((p.x, p.y))
        polys.append(ring)
    for marks in overlays.values():
        pts.extend((p.x, p.y) for p in marks)
    if not pts:
        pts = [(0.0, 0.0)]
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    pad = 2.0
    x0, y0 = min(xs) - pad, min(ys) - pad
    w = (max(xs) - min(xs) + 2 * pad) * scale
    h = (max(ys) - min(ys) + 2 * pad) * scale

    def sx(x: float) -> float:
        return (x - x0) * scale

    def sy(y: float) -> float:
        return h - (y - y0) * scale   # y up in map frame, down in SVG

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{w:.1f}" height="{h:.1f}" viewBox="0 0 {w:.1f} {h:.1f}">',
    ]
    for ring in polys:
        d = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in ring)
        lines.append(
            f'<polygon points="{d}" fill="#fff8dc" stroke="#555555" stroke-width="1"/>'
        )
    for name in sorted(overlays):
        color = MARKER_COLORS.get(name, "#999999")
        for p in overlays[name]:
            lines.append(
                f'<circle cx="{sx(p.x):.2f}" cy="{sy(p.y):.2f}" r="3" fill="{color}"/>'
            )
    # legend
    y_leg = 14.0
    for name in sorted(overlays):
        color = MARKER_COLORS.get(name, "#999999")
        lines.append(f'<circle cx="10" cy="{y_leg - 4:.1f}" r="3" fill="{color}"/>')
        lines.append(
            f'<text x="18" y="{y_leg:.1f}" font-size="10" font-family="sans-serif">{name}</text>'
        )
        y_leg += 14.0
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
