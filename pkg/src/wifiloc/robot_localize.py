"""Online robot localization from a live RSSI scan.

Readings are averaged over a short temporal window, converted to ranges
against the AP positions stored in the map, and solved iteratively with
wall compensation, mirroring the offline AP refinement. The floor is
picked by solving one fixed-z hypothesis per candidate level and keeping
the lowest-residual solution.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .calibrate import pair_wall_count
from .geometry import LocalPoint3, WallIndex
from .osmag import OsmAgMap, wall_segments
from .propagation import (
    PropagationParams,
    invert_distance_compensated,
    invert_distance_los,
)
from .solver import (
    RangeConstraint,
    SolverConfig,
    SolverError,
    linear_init,
    solve_ranges,
)

DEFAULT_EPSILON_M = 0.1
DEFAULT_MAX_ITERS = 10
DEFAULT_MIN_SAMPLES = 2
DEFAULT_WINDOW_S = 5.0
WEAK_SIGNAL_FLOOR_DBM = -90.0
ROBOT_Z_OFFSET_M = 0.5   # antenna height above the floor
RELAXATION = 0.6         # fixed-point damping, same rationale as the AP phase
POLISH_RESIDUAL_M = 0.05
POLISH_OFFSETS = [
    (0.6, 0.0), (-0.6, 0.0), (0.0, 0.6), (0.0, -0.6),
    (0.6, 0.6), (-0.6, 0.6), (0.6, -0.6), (-0.6, -0.6),
]


class LocalizationError(ValueError):
    pass


class InsufficientSignalError(LocalizationError):
    pass


class InsufficientAnchorsError(LocalizationError):
    def __init__(self, known: int, unknown_ids: list[str]):
        msg = f"only {known} scan APs resolve to map records"
        if unknown_ids:
            msg += f"; unknown: {', '.join(sorted(unknown_ids))}"
        super().__init__(msg)
        self.unknown_ids = unknown_ids


@dataclass
class RssiScan:
    readings: list[tuple[str, float, float]]   # (ap_id, dBm, timestamp)
    window: float = DEFAULT_WINDOW_S

    def __post_init__(self):
        if self.window <= 0:
            raise LocalizationError("window must be > 0")
        if not self.readings:
            raise LocalizationError("scan has no readings")


@dataclass
class LocalizationResult:
    position: LocalPoint3
    level: int
    iterations: int
    converged: bool
    used_aps: list[tuple[str, float, int]]     # (ap_id, range, wall_count)
    residual_rms: float
    step_norms: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "position": [self.position.x, self.position.y, self.position.z],
                "level": self.level,
                "iterations": self.iterations,
                "converged": self.converged,
                "residual_rms": self.residual_rms,
                "used_aps": [
                    {"ap_id": a, "range": r, "wall_count": w}
                    for a, r, w in self.used_aps
                ],
            },
            indent=2,
        )


def average_scan(
    raw: RssiScan, min_samples: int = DEFAULT_MIN_SAMPLES
) -> dict[str, float]:
    """Per-AP mean RSSI over readings inside the window; sparse APs dropped."""
    latest = max(t for _, _, t in raw.readings)
    cutoff = latest - raw.window
    grouped: dict[str, list[float]] = {}
    for ap_id, rssi, t in raw.readings:
        if t >= cutoff:
            grouped.setdefault(ap_id, []).append(rssi)
    out = {
        ap_id: sum(vals) / len(vals)
        for ap_id, vals in grouped.items()
        if len(vals) >= min_samples
    }
    if not out:
        raise InsufficientSignalError(
            "no AP has enough samples inside the scan window"
        )
    return out


def _build_walls(m: OsmAgMap) -> tuple[dict[int, WallIndex], tuple[float, ...]]:
    levels = m.levels()
    walls = {lv: WallIndex(wall_segments(m, lv)) for lv in levels}
    slab_zs = tuple(lv * m.floor_height for lv in levels if lv > 0)
    return walls, slab_zs


def localize_robot(
    scan: dict[str, float],
    m: OsmAgMap,
    params: PropagationParams,
    cfg: SolverConfig | None = None,
    walls_by_level: dict[int, WallIndex] | None = None,
    slab_zs: tuple[float, ...] | None = None,
    robot_z_offset: float = ROBOT_Z_OFFSET_M,
    weak_floor_dbm: float = WEAK_SIGNAL_FLOOR_DBM,
) -> LocalizationResult:
    """Estimate the robot position from an averaged RSSI map.

    Runs the iterative wall-compensated solve once per candidate floor
    (z fixed at that floor's robot height) and returns the hypothesis
    with the smallest residual RMS.
    """
    cfg = cfg or SolverConfig(max_iters=DEFAULT_MAX_ITERS, epsilon=DEFAULT_EPSILON_M)
    anchors: list[tuple[str, LocalPoint3, float]] = []
    unknown: list[str] = []
    for ap_id, rssi in sorted(scan.items()):
        if rssi < weak_floor_dbm:
            continue
        ap = m.ap_by_id(ap_id)
        if ap is None:
            unknown.append(ap_id)
            continue
        anchors.append((ap_id, ap.position, rssi))
    if len(anchors) < 3:
        raise InsufficientAnchorsError(len(anchors), unknown)

    if walls_by_level is None or slab_zs is None:
        walls_by_level, slab_zs = _build_walls(m)

    best: LocalizationResult | None = None
    for level in m.levels():
        z = level * m.floor_height + robot_z_offset
        res = _solve_floor(anchors, z, level, params, cfg, walls_by_level, slab_zs)
        if best is None or res.residual_rms < best.residual_rms:
            best = res
    assert best is not None
    return best


def _solve_floor(
    anchors, z: float, level: int, params, cfg, walls_by_level, slab_zs
) -> LocalizationResult:
    fcfg = SolverConfig(
        max_iters=cfg.max_iters * 10,
        epsilon=min(cfg.epsilon, 1e-4),
        z_mode="fixed",
        z_fixed=z,
    )

    def solve_with(ranges, init):
        # Same weighting as the AP phase: range error grows with range.
        cons = [
            RangeConstraint(
                anchor=pos,
                range=max(r, 1e-3),
                weight=1.0 / max(r, 1.0) ** 2,
            )
            for (_, pos, _), r in zip(anchors, ranges)
        ]
        if init is None:
            init = linear_init(cons, z_fixed=z)
        return solve_ranges(cons, init, fcfg)

    def self_residual(pos: LocalPoint3, ranges) -> float:
        sq = [
            (
                (
                    (pos.x - a.x) ** 2
                    + (pos.y - a.y) ** 2
                    + (pos.z - a.z) ** 2
                )
                ** 0.5
                - r
            )
            ** 2
            for (_, a, _), r in zip(anchors, ranges)
        ]
        return (sum(sq) / len(sq)) ** 0.5

    def counts_and_ranges(pos: LocalPoint3):
        counts = [
            pair_wall_count(a, pos, walls_by_level, slab_zs)
            for _, a, _ in anchors
        ]
        ranges = [
            invert_distance_compensated(params, rssi, c) if c > 0
            else invert_distance_los(params, rssi)
            for (_, _, rssi), c in zip(anchors, counts)
        ]
        return counts, ranges

    ranges = [invert_distance_los(params, rssi) for _, _, rssi in anchors]
    outcome = solve_with(ranges, None)
    current = outcome.position
    step_norms: list[float] = []
    converged = False
    # Wall counts are piecewise constant, so the fixed-point map can cycle
    # between count configurations near walls. Keep the iterate whose own
    # count-consistent ranges it satisfies best rather than the last one.
    best: tuple[float, LocalPoint3, list[int], list[float]] | None = None
    t = 0
    for t in range(1, cfg.max_iters + 1):
        counts, ranges = counts_and_ranges(current)
        here = self_residual(current, ranges)
        if best is None or here < best[0]:
            best = (here, current, counts, ranges)
        new = solve_with(ranges, current)
        relaxed = LocalPoint3(
            current.x + RELAXATION * (new.position.x - current.x),
            current.y + RELAXATION * (new.position.y - current.y),
            current.z,
        )
        step = (
            (relaxed.x - current.x) ** 2 + (relaxed.y - current.y) ** 2
        ) ** 0.5
        step_norms.append(step)
        current = relaxed
        if step < cfg.epsilon:
            converged = True
            break
    counts, ranges = counts_and_ranges(current)
    here = self_residual(current, ranges)
    if best is None or here < best[0]:
        best = (here, current, counts, ranges)
    # Probe adjacent count cells when the fixed point is inconsistent
    # (typical for positions within a wall's thickness of a room boundary).
    if best[0] > POLISH_RESIDUAL_M:
        seen = {tuple(best[2])}
        for dx, dy in POLISH_OFFSETS:
            q = LocalPoint3(best[1].x + dx, best[1].y + dy, best[1].z)
            q_counts, q_ranges = counts_and_ranges(q)
            if tuple(q_counts) in seen:
                continue
            seen.add(tuple(q_counts))
            try:
                probe = solve_with(q_ranges, q)
            except SolverError:
                continue
            p_counts, p_ranges = counts_and_ranges(probe.position)
            res = self_residual(probe.position, p_ranges)
            if res < best[0]:
                best = (res, probe.position, p_counts, p_ranges)
    residual_rms, position, counts, ranges = best
    return LocalizationResult(
        position=position,
        level=level,
        iterations=t,
        converged=converged,
        used_aps=[
            (ap_id, r, c) for (ap_id, _, _), r, c in zip(anchors, ranges, counts)
        ],
        residual_rms=residual_rms,
        step_norms=step_norms,
    )


def evaluate_localization(
    testpoints: list[tuple[LocalPoint3, dict[str, float]]],
    m: OsmAgMap,
    params: PropagationParams,
    cfg: SolverConfig | None = None,
) -> dict:
    """Mean error, std dev, RMSE, and 95th percentile over a test set."""
    walls_by_level, slab_zs = _build_walls(m)
    errors: list[float] = []
    misses = 0
    for truth, scan in testpoints:
        try:
            res = localize_robot(
                scan, m, params, cfg,
                walls_by_level=walls_by_level, slab_zs=slab_zs,
            )
        except (LocalizationError, SolverError):
            misses += 1
            continue
        dx = res.position.x - truth.x
        dy = res.position.y - truth.y
        dz = res.position.z - truth.z
        errors.append((dx * dx + dy * dy + dz * dz) ** 0.5)
    return summarize_errors(errors, misses)


def summarize_errors(errors: list[float], misses: int = 0) -> dict:
    if not errors:
        return {
            "count": 0, "misses": misses,
            "mean": None, "std": None, "rmse": None, "p95": None,
        }
    e = np.asarray(errors)
    return {
        "count": len(errors),
        "misses": misses,
        "mean": float(e.mean()),
        "std": float(e.std()),
        "rmse": float(np.sqrt((e**2).mean())),
        "p95": float(np.percentile(e, 95)),
    }
