"""Offline iterative AP position estimation.

t = 0: invert every RSSI reading with the LOS model and trilaterate.
Each refinement iteration recomputes wall counts from the current AP
estimate to every robot position, re-inverts the NLOS readings with wall
compensation (LOS readings stay uncompensated), and re-solves. The
estimate settles on a position consistent with both the measurements and
the map geometry.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .calibrate import pair_wall_count
from .geometry import LocalPoint3, WallIndex
from .osmag import ApRecord, OsmAgMap, upsert_ap, wall_segments
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

DEFAULT_ITERS = 10
WEAK_SIGNAL_FLOOR_DBM = -90.0   # weaker readings invert to wildly noisy ranges
AP_Z_MARGIN_BELOW = 1.0
AP_Z_MARGIN_ABOVE = 4.0
# Plain re-solve oscillates on wall-heavy scenes; a relaxed fixed-point step
# keeps the refinement inside the attraction basin of the consistent solution.
RELAXATION = 0.6


class ApLocalizationError(ValueError):
    def __init__(self, ap_id: str, msg: str):
        super().__init__(f"AP {ap_id}: {msg}")
        self.ap_id = ap_id


@dataclass
class ApEstimate:
    ap_id: str
    position: LocalPoint3
    iteration: int
    residual_rms: float
    per_iteration_trace: list[tuple[LocalPoint3, float]] = field(default_factory=list)


@dataclass
class BatchResult:
    estimates: list[ApEstimate]
    failures: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "estimates": [
                    {
                        "ap_id": e.ap_id,
                        "position": [e.position.x, e.position.y, e.position.z],
                        "iterations": e.iteration,
                        "residual_rms": e.residual_rms,
                    }
                    for e in self.estimates
                ],
                "failures": self.failures,
            },
            indent=2,
        )


def _hearings(fingerprints, ap_id: str, floor_dbm: float):
    return [
        (fp.position, fp.rssi[ap_id])
        for fp in fingerprints
        if ap_id in fp.rssi and fp.rssi[ap_id] >= floor_dbm
    ]


def localize_ap(
    ap_id: str,
    fingerprints,
    params: PropagationParams,
    walls_by_level: dict[int, WallIndex],
    iters: int = DEFAULT_ITERS,
    slab_zs: tuple[float, ...] = (),
    z_clamp: tuple[float, float] | None = None,
    weak_floor_dbm: float = WEAK_SIGNAL_FLOOR_DBM,
    early_exit_step: float = 1e-3,
) -> ApEstimate:
    """Iteratively estimate one AP's position from the fingerprints hearing it."""
    if iters < 0:
        raise ApLocalizationError(ap_id, "iters must be >= 0")
    hear = _hearings(fingerprints, ap_id, weak_floor_dbm)
    if len(hear) < 3:
        raise ApLocalizationError(
            ap_id, f"underdetermined: only {len(hear)} fingerprints hear it"
        )
    if z_clamp is None:
        zs = [p.z for p, _ in hear]
        z_clamp = (min(zs) - AP_Z_MARGIN_BELOW, max(zs) + AP_Z_MARGIN_ABOVE)
    cfg = SolverConfig(z_mode="free", z_clamp=z_clamp)

    def solve_with(ranges: list[float], init: LocalPoint3 | None):
        # Log-domain RSSI noise maps to range noise proportional to range,
        # so constraints are weighted by 1/range^2.
        cons = [
            RangeConstraint(
                anchor=pos,
                range=max(r, 1e-3),
                weight=1.0 / max(r, 1.0) ** 2,
            )
            for (pos, _), r in zip(hear, ranges)
        ]
        if init is None:
            init = linear_init(cons)
        return solve_ranges(cons, init, cfg)

    try:
        ranges0 = [invert_distance_los(params, rssi) for _, rssi in hear]
        outcome = solve_with(ranges0, None)
    except SolverError as exc:
        raise ApLocalizationError(ap_id, str(exc)) from exc

    trace: list[tuple[LocalPoint3, float]] = [(outcome.position, 0.0)]
    current = outcome.position
    residual_rms = outcome.residual_rms
    t_done = 0
    for t in range(1, iters + 1):
        counts = [
            pair_wall_count(current, pos, walls_by_level, slab_zs)
            for pos, _ in hear
        ]
        ranges = [
            invert_distance_compensated(params, rssi, c) if c > 0
            else invert_distance_los(params, rssi)
            for (_, rssi), c in zip(hear, counts)
        ]
        try:
            new = solve_with(ranges, current)
        except SolverError as exc:
            raise ApLocalizationError(ap_id, str(exc)) from exc
        relaxed = LocalPoint3(
            current.x + RELAXATION * (new.position.x - current.x),
            current.y + RELAXATION * (new.position.y - current.y),
            current.z + RELAXATION * (new.position.z - current.z),
        )
        step = (
            (relaxed.x - current.x) ** 2
            + (relaxed.y - current.y) ** 2
            + (relaxed.z - current.z) ** 2
        ) ** 0.5
        current = relaxed
        residual_rms = new.residual_rms
        mean_walls = sum(counts) / len(counts)
        trace.append((current, mean_walls))
        t_done = t
        if step < early_exit_step:
            break

    return ApEstimate(
        ap_id=ap_id,
        position=current,
        iteration=t_done,
        residual_rms=residual_rms,
        per_iteration_trace=trace,
    )


def localize_all_aps(
    m: OsmAgMap,
    params: PropagationParams,
    iters: int = DEFAULT_ITERS,
    jobs: int = 1,
) -> tuple[BatchResult, OsmAgMap]:
    """Estimate every heard AP and upsert the results into the map.

    Surveyed AP records are never overwritten. Per-AP failures land in the
    batch report instead of aborting the run.
    """
    heard: list[str] = sorted({ap for fp in m.fingerprints for ap in fp.rssi})
    levels = m.levels()
    walls = {lv: WallIndex(wall_segments(m, lv)) for lv in levels}
    slab_zs = tuple(lv * m.floor_height for lv in levels if lv > 0)

    result = BatchResult(estimates=[])

    def run(ap_id: str):
        return localize_ap(ap_id, m.fingerprints, params, walls, iters, slab_zs)

    if jobs > 1 and len(heard) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(lambda a: _safe(run, a), heard))
    else:
        outcomes = [_safe(run, a) for a in heard]

    for ap_id, (est, err) in zip(heard, outcomes):
        if err is not None:
            result.failures[ap_id] = err
            continue
        result.estimates.append(est)
        existing = m.ap_by_id(ap_id)
        if existing is not None and existing.source == "surveyed":
            continue
        upsert_ap(
            m,
            ApRecord(
                ap_id=ap_id,
                position=est.position,
                level=_nearest_level(est.position.z, levels, m.floor_height),
                source="estimated",
            ),
        )
    return result, m


def _safe(fn, ap_id: str):
    try:
        return fn(ap_id), None
    except (ApLocalizationError, SolverError) as exc:
        return None, str(exc)


def _nearest_level(z: float, levels: list[int], floor_height: float) -> int:
    return min(levels, key=lambda lv: abs(z - lv * floor_height))
