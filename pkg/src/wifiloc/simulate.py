"""Synthetic scenario generator and ground-truth ledger.

Builds a parametric multi-floor grid of rooms as an osmAG map, scatters
APs and fingerprint positions, and synthesizes RSSI readings with the
full propagation model (deterministic part plus zero-mean Gaussian
shadowing). The ledger records true positions, distances, and wall
counts for every pair, making the generator the verification oracle for
the calibration and localization pipelines.

Randomness comes from numpy's PCG64 generator seeded explicitly, so a
fixed seed reproduces byte-identical output across runs and platforms.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .calibrate import pair_wall_count
from .geometry import LocalPoint3, WallIndex, euclidean
from .osmag import (
    ApRecord,
    Fingerprint,
    OsmAgMap,
    OsmNode,
    OsmWay,
    add_fingerprint,
    upsert_ap,
    wall_segments,
)
from .propagation import PropagationParams, predict_rssi

DEFAULT_ORIGIN = (31.178, 121.590)
SENSITIVITY_FLOOR_DBM = -100.0
AP_Z_OFFSET_M = 2.5        # ceiling-mounted
ROBOT_Z_OFFSET_M = 0.5     # robot antenna height


class SimulationError(ValueError):
    pass


@dataclass
class Region:
    """Axis-aligned box predicate in the local frame."""

    x_min: float = -np.inf
    x_max: float = np.inf
    y_min: float = -np.inf
    y_max: float = np.inf
    level: int | None = None

    def contains(self, p: LocalPoint3, level: int) -> bool:
        if self.level is not None and level != self.level:
            return False
        return self.x_min <= p.x <= self.x_max and self.y_min <= p.y <= self.y_max

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        return cls(
            x_min=d.get("x_min", -np.inf),
            x_max=d.get("x_max", np.inf),
            y_min=d.get("y_min", -np.inf),
            y_max=d.get("y_max", np.inf),
            level=d.get("level"),
        )


@dataclass
class ScenarioSpec:
    rooms_x: int = 4
    rooms_y: int = 3
    floors: int = 1
    room_size: float = 6.0
    ap_count: int = 8
    fingerprint_count: int = 60
    params: PropagationParams = field(
        default_factory=lambda: PropagationParams(-28.79, 2.5, 10.77, 0.0)
    )
    seed: int = 0
    holdout_region: Region | None = None
    floor_height: float = 3.2

    def __post_init__(self):
        for name in ("rooms_x", "rooms_y", "floors", "ap_count", "fingerprint_count"):
            if getattr(self, name) < 1:
                raise SimulationError(f"{name} must be >= 1")
        if self.room_size <= 0:
            raise SimulationError("room_size must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        params = d.get("params", {})
        return cls(
            rooms_x=d.get("rooms_x", 4),
            rooms_y=d.get("rooms_y", 3),
            floors=d.get("floors", 1),
            room_size=d.get("room_size", 6.0),
            ap_count=d.get("ap_count", 8),
            fingerprint_count=d.get("fingerprint_count", 60),
            params=PropagationParams(
                rssi0=params.get("rssi0", -28.79),
                n=params.get("n", 2.5),
                wall_loss=params.get("wall_loss", 10.77),
                sigma=params.get("sigma", 0.0),
            ),
            seed=d.get("seed", 0),
            holdout_region=(
                Region.from_dict(d["holdout_region"]) if d.get("holdout_region") else None
            ),
            floor_height=d.get("floor_height", 3.2),
        )


@dataclass
class TruthLedger:
    ap_positions: dict[str, tuple[float, float, float]]
    fingerprint_positions: list[tuple[float, float, float]]
    pairs: list[dict]    # ap_id, fp index, distance, wall_count, rssi

    def to_json(self) -> str:
        return json.dumps(
            {
                "ap_positions": self.ap_positions,
                "fingerprint_positions": self.fingerprint_positions,
                "pairs": self.pairs,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "TruthLedger":
        d = json.loads(text)
        return cls(
            ap_positions={k: tuple(v) for k, v in d["ap_positions"].items()},
            fingerprint_positions=[tuple(v) for v in d["fingerprint_positions"]],
            pairs=d["pairs"],
        )


def _build_grid_map(spec: ScenarioSpec) -> OsmAgMap:
    from .geometry import unproject

    m = OsmAgMap(origin=DEFAULT_ORIGIN, floor_height=spec.floor_height)
    s = spec.room_size
    node_ids: dict[tuple[int, int], int] = {}
    next_id = 1
    for j in range(spec.rooms_y + 1):
        for i in range(spec.rooms_x + 1):
            lat, lon = unproject(m.origin, LocalPoint3(i * s, j * s, 0.0))
            m.nodes[next_id] = OsmNode(id=next_id, lat=round(lat, 9), lon=round(lon, 9))
            node_ids[(i, j)] = next_id
            next_id += 1
    way_id = 1
    for floor in range(spec.floors):
        for j in range(spec.rooms_y):
            for i in range(spec.rooms_x):
                refs = [
                    node_ids[(i, j)],
                    node_ids[(i + 1, j)],
                    node_ids[(i + 1, j + 1)],
                    node_ids[(i, j + 1)],
                    node_ids[(i, j)],
                ]
                m.ways[way_id] = OsmWay(
                    id=way_id,
                    node_refs=refs,
                    tags={
                        "indoor": "room",
                        "level": str(floor),
                        "name": f"room-{floor}-{i}-{j}",
                    },
                )
                way_id += 1
    return m


def generate(spec: ScenarioSpec) -> tuple[OsmAgMap, TruthLedger]:
    """Build the scenario map with surveyed APs and noisy fingerprints."""
    rng = np.random.default_rng(spec.seed)
    m = _build_grid_map(spec)
    width = spec.rooms_x * spec.room_size
    depth = spec.rooms_y * spec.room_size
    margin = 0.4   # keep sampled points off the walls

    ap_positions: dict[str, tuple[float, float, float]] = {}
    for a in range(spec.ap_count):
        floor = int(rng.integers(0, spec.floors))
        x = float(rng.uniform(margin, width - margin))
        y = float(rng.uniform(margin, depth - margin))
        z = floor * spec.floor_height + AP_Z_OFFSET_M
        ap_id = f"aa:bb:cc:dd:{a // 256:02x}:{a % 256:02x}"
        upsert_ap(
            m,
            ApRecord(
                ap_id=ap_id,
                position=LocalPoint3(x, y, z),
                level=floor,
                source="surveyed",
            ),
        )
        ap_positions[ap_id] = (x, y, z)

    walls = {
        lv: WallIndex(wall_segments(m, lv)) for lv in range(spec.floors)
    }
    slab_zs = tuple(
        lv * spec.floor_height for lv in range(1, spec.floors)
    )

    fp_positions: list[tuple[float, float, float]] = []
    pairs: list[dict] = []
    for f in range(spec.fingerprint_count):
        floor = int(rng.integers(0, spec.floors))
        x = float(rng.uniform(margin, width - margin))
        y = float(rng.uniform(margin, depth - margin))
        z = floor * spec.floor_height + ROBOT_Z_OFFSET_M
        pos = LocalPoint3(x, y, z)
        fp_positions.append((pos.x, pos.y, pos.z))
        rssi: dict[str, float] = {}
        for ap_id, (ax, ay, az) in ap_positions.items():
            ap_pos = LocalPoint3(ax, ay, az)
            d = euclidean(ap_pos, pos)
            n_walls = pair_wall_count(ap_pos, pos, walls, slab_zs)
            value = predict_rssi(spec.params, d, n_walls)
            if spec.params.sigma > 0:
                value += float(rng.normal(0.0, spec.params.sigma))
            heard = value >= SENSITIVITY_FLOOR_DBM
            if heard:
                rssi[ap_id] = min(value, 0.0)
            pairs.append(
                {
                    "ap_id": ap_id,
                    "fingerprint": f,
                    "distance": d,
                    "wall_count": n_walls,
                    "rssi": value,       # pre-truncation value
                    "heard": heard,
                }
            )
        if not rssi:
            continue
        add_fingerprint(
            m,
            Fingerprint(node_id=0, position=pos, level=floor, rssi=rssi),
        )

    ledger = TruthLedger(
        ap_positions=ap_positions,
        fingerprint_positions=fp_positions,
        pairs=pairs,
    )
    return m, ledger


def synth_scan(
    m: OsmAgMap,
    truth_aps: dict[str, tuple[float, float, float]],
    pos: LocalPoint3,
    params: PropagationParams,
    rng: np.random.Generator | None = None,
    walls: dict[int, WallIndex] | None = None,
    slab_zs: tuple[float, ...] = (),
) -> dict[str, float]:
    """One averaged RSSI scan at `pos` against the true AP layout."""
    if walls is None:
        walls = {lv: WallIndex(wall_segments(m, lv)) for lv in m.levels()}
        slab_zs = tuple(lv * m.floor_height for lv in m.levels() if lv > 0)
    scan: dict[str, float] = {}
    for ap_id, (ax, ay, az) in truth_aps.items():
        ap_pos = LocalPoint3(ax, ay, az)
        d = euclidean(ap_pos, pos)
        n_walls = pair_wall_count(ap_pos, pos, walls, slab_zs)
        value = predict_rssi(params, d, n_walls)
        if rng is not None and params.sigma > 0:
            value += float(rng.normal(0.0, params.sigma))
        if value < SENSITIVITY_FLOOR_DBM:
            continue
        scan[ap_id] = min(value, 0.0)
    return scan


def holdout_split(
    m: OsmAgMap, region: Region
) -> tuple[OsmAgMap, list[tuple[LocalPoint3, int, dict[str, float]]]]:
    """Remove fingerprints inside `region`; return them as test records."""
    train = copy.deepcopy(m)
    testset: list[tuple[LocalPoint3, int, dict[str, float]]] = []
    kept: list[Fingerprint] = []
    for fp in train.fingerprints:
        if region.contains(fp.position, fp.level):
            testset.append((fp.position, fp.level, dict(fp.rssi)))
            del train.nodes[fp.node_id]
        else:
            kept.append(fp)
    if testset and not kept:
        raise SimulationError("holdout region swallows every fingerprint")
    train.fingerprints = kept
    return train, testset
