"""Two-stage propagation-parameter learning.

Stage 1 fits (rssi0, n) by ordinary least squares on LOS measurement
pairs; stage 2 fits a single average wall attenuation factor on the NLOS
pairs with the stage-1 parameters held fixed. Both stages are closed-form
linear algebra. The residual RMS over both stages becomes the shadowing
sigma estimate.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import LocalPoint3, WallIndex, count_crossings, euclidean
from .osmag import ApRecord, Fingerprint, OsmAgMap, wall_segments
from .propagation import Measurement, PropagationParams

MIN_FIT_DISTANCE_M = 1.0   # the model's reference distance; closer pairs are excluded
MIN_PAIRS_PER_CLASS = 10


class CalibrationError(ValueError):
    pass


@dataclass
class CalibrationInput:
    aps: list[ApRecord]
    fingerprints: list[Fingerprint]
    walls_by_level: dict[int, WallIndex]
    slab_zs: tuple[float, ...] = ()


@dataclass
class ClassifiedPair:
    measurement: Measurement
    distance: float
    wall_count: int

    @property
    def los(self) -> bool:
        return self.wall_count == 0


@dataclass
class CalibrationReport:
    los_pairs: int
    nlos_pairs: int
    los_residual_rms: float
    nlos_residual_rms: float
    params: PropagationParams

    def to_json(self) -> str:
        return json.dumps(
            {
                "los_pairs": self.los_pairs,
                "nlos_pairs": self.nlos_pairs,
                "los_residual_rms": self.los_residual_rms,
                "nlos_residual_rms": self.nlos_residual_rms,
                "params": json.loads(self.params.to_json()),
            },
            indent=2,
        )


def make_input(
    m: OsmAgMap,
    surveyed_only: bool = True,
    level: int | None = None,
) -> CalibrationInput:
    """Assemble calibration input from a map's surveyed APs and fingerprints."""
    aps = [ap for ap in m.aps if ap.source == "surveyed" or not surveyed_only]
    fps = m.fingerprints
    if level is not None:
        aps = [ap for ap in aps if ap.level == level]
        fps = [fp for fp in fps if fp.level == level]
    levels = m.levels()
    walls = {lv: WallIndex(wall_segments(m, lv)) for lv in levels}
    slab_zs = tuple(lv * m.floor_height for lv in levels if lv > 0)
    return CalibrationInput(
        aps=aps, fingerprints=fps, walls_by_level=walls, slab_zs=slab_zs
    )


def pair_wall_count(
    ap_pos: LocalPoint3,
    fp_pos: LocalPoint3,
    walls_by_level: dict[int, WallIndex],
    slab_zs: tuple[float, ...] = (),
) -> int:
    """Wall crossings between an AP and a robot position, across all levels."""
    total = 0
    for index in walls_by_level.values():
        total += count_crossings(ap_pos, fp_pos, index).count
    zlo, zhi = min(ap_pos.z, fp_pos.z), max(ap_pos.z, fp_pos.z)
    total += sum(1 for sz in slab_zs if zlo + 1e-9 < sz < zhi - 1e-9)
    return total


def classify_pairs(inp: CalibrationInput) -> list[ClassifiedPair]:
    """One ClassifiedPair per (AP, fingerprint) with an RSSI reading."""
    pairs: list[ClassifiedPair] = []
    for ap in inp.aps:
        for fp in inp.fingerprints:
            if ap.ap_id not in fp.rssi:
                continue
            d = euclidean(ap.position, fp.position)
            if d <= 0:
                continue
            walls = pair_wall_count(
                ap.position, fp.position, inp.walls_by_level, inp.slab_zs
            )
            pairs.append(
                ClassifiedPair(
                    measurement=Measurement(
                        ap_id=ap.ap_id,
                        rssi=fp.rssi[ap.ap_id],
                        robot_pos=fp.position,
                        wall_count=walls,
                    ),
                    distance=d,
                    wall_count=walls,
                )
            )
    return pairs


def fit_los(pairs: list[ClassifiedPair]) -> tuple[float, float]:
    """Closed-form OLS for (rssi0, n) on LOS pairs.

    Model: rssi = rssi0 - 10 n log10(d); design columns [1, -10 log10(d)].
    """
    usable = [p for p in pairs if p.los and p.distance >= MIN_FIT_DISTANCE_M]
    if len(usable) < 2:
        raise CalibrationError(f"need >= 2 LOS pairs, got {len(usable)}")
    logd = np.array([math.log10(p.distance) for p in usable])
    if np.ptp(logd) < 1e-12:
        raise CalibrationError("all LOS distances equal; rank-deficient fit")
    y = np.array([p.measurement.rssi for p in usable])
    X = np.column_stack([np.ones_like(logd), -10.0 * logd])
    (rssi0, n), *_ = np.linalg.lstsq(X, y, rcond=None)
    return float(rssi0), float(n)


def fit_wall_loss(
    pairs: list[ClassifiedPair], rssi0: float, n: float
) -> float:
    """Closed-form 1-parameter least squares for the wall attenuation factor.

    Excess loss per pair: delta = (rssi0 - 10 n log10(d)) - rssi;
    loss = sum(N * delta) / sum(N^2), returned as a positive magnitude.
    """
    usable = [
        p
        for p in pairs
        if p.wall_count >= 1 and p.distance >= MIN_FIT_DISTANCE_M
    ]
    if not usable:
        raise CalibrationError("no NLOS pairs with wall_count >= 1")
    N = np.array([p.wall_count for p in usable], dtype=float)
    delta = np.array(
        [
            (rssi0 - 10.0 * n * math.log10(p.distance)) - p.measurement.rssi
            for p in usable
        ]
    )
    return float(N @ delta / (N @ N))


def calibrate(inp: CalibrationInput) -> tuple[PropagationParams, CalibrationReport]:
    """Run classify -> fit_los -> fit_wall_loss; sigma from residual RMS."""
    if not inp.aps:
        raise CalibrationError("need >= 1 surveyed AP")
    pairs = classify_pairs(inp)
    los = [p for p in pairs if p.los and p.distance >= MIN_FIT_DISTANCE_M]
    nlos = [
        p for p in pairs if p.wall_count >= 1 and p.distance >= MIN_FIT_DISTANCE_M
    ]
    if len(los) < MIN_PAIRS_PER_CLASS:
        raise CalibrationError(
            f"insufficient LOS pairs: {len(los)} < {MIN_PAIRS_PER_CLASS}"
        )
    if len(nlos) < MIN_PAIRS_PER_CLASS:
        raise CalibrationError(
            f"insufficient NLOS pairs: {len(nlos)} < {MIN_PAIRS_PER_CLASS}"
        )
    rssi0, n = fit_los(pairs)
    wall_loss = fit_wall_loss(pairs, rssi0, n)
    wall_loss = max(wall_loss, 0.0)

    def residual(p: ClassifiedPair) -> float:
        pred = rssi0 - 10.0 * n * math.log10(p.distance) - p.wall_count * wall_loss
        return p.measurement.rssi - pred

    res_los = np.array([residual(p) for p in los])
    res_nlos = np.array([residual(p) for p in nlos])
    res_all = np.concatenate([res_los, res_nlos])
    sigma = float(np.sqrt(np.mean(res_all**2)))
    params = PropagationParams(rssi0=rssi0, n=n, wall_loss=wall_loss, sigma=sigma)
    report = CalibrationReport(
        los_pairs=len(los),
        nlos_pairs=len(nlos),
        los_residual_rms=float(np.sqrt(np.mean(res_los**2))),
        nlos_residual_rms=float(np.sqrt(np.mean(res_nlos**2))),
        params=params,
    )
    return params, report
