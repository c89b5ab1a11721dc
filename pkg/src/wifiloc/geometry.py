"""Local metric frame and wall-crossing queries.

Geographic coordinates are projected onto a local equirectangular tangent
plane anchored at the map origin. Walls are vertical rectangles; the
crossing query counts how many of them a 3D line segment penetrates,
which is what classifies a signal path as LOS or NLOS.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

EARTH_RADIUS_M = 6378137.0
DEFAULT_FLOOR_HEIGHT_M = 3.2

# Intersections closer than this to a wall endpoint are treated as a single
# crossing; segments collinear with a wall count as grazing (zero crossings).
EPS_GEO = 1e-9


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class LocalPoint3:
    """Point in the local map frame: x east, y north, z up, meters."""

    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise GeometryError(f"non-finite coordinate: {self!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def __add__(self, other: "LocalPoint3") -> "LocalPoint3":
        return LocalPoint3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "LocalPoint3") -> "LocalPoint3":
        return LocalPoint3(self.x - other.x, self.y - other.y, self.z - other.z)


@dataclass(frozen=True)
class WallSegment:
    """Vertical wall rectangle: footprint segment a-b, extent [z_min, z_max]."""

    a: LocalPoint3
    b: LocalPoint3
    level: int = 0
    z_min: float = 0.0
    z_max: float = DEFAULT_FLOOR_HEIGHT_M

    def __post_init__(self):
        if (self.a.x, self.a.y) == (self.b.x, self.b.y):
            raise GeometryError("degenerate wall: a == b")
        if not self.z_min < self.z_max:
            raise GeometryError("wall needs z_min < z_max")


@dataclass
class CrossingReport:
    count: int
    crossed: list = field(default_factory=list)

    @property
    def is_los(self) -> bool:
        return self.count == 0


def euclidean(a: LocalPoint3, b: LocalPoint3) -> float:
    """3D Euclidean distance in meters."""
    return math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + (a.z - b.z) ** 2)


def project(
    origin: tuple[float, float],
    p: tuple[float, float, int],
    floor_height: float = DEFAULT_FLOOR_HEIGHT_M,
    height: float | None = None,
) -> LocalPoint3:
    """Project (lat, lon, level) to the local metric frame.

    Equirectangular local tangent: x = R cos(lat0) dlon, y = R dlat.
    z = level * floor_height unless an explicit height override is given.
    """
    lat0, lon0 = origin
    lat, lon, level = p
    if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
        raise GeometryError(f"coordinates out of range: ({lat}, {lon})")
    if abs(lat - lat0) >= 1.0 or abs(lon - lon0) >= 1.0:
        raise GeometryError(
            f"point ({lat}, {lon}) too far from origin {origin} for a local tangent"
        )
    x = EARTH_RADIUS_M * math.cos(math.radians(lat0)) * math.radians(lon - lon0)
    y = EARTH_RADIUS_M * math.radians(lat - lat0)
    z = height if height is not None else level * floor_height
    return LocalPoint3(x, y, z)


def unproject(
    origin: tuple[float, float], p: LocalPoint3
) -> tuple[float, float]:
    """Inverse of project for the horizontal components."""
    lat0, lon0 = origin
    lat = lat0 + math.degrees(p.y / EARTH_RADIUS_M)
    lon = lon0 + math.degrees(p.x / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return lat, lon


class WallIndex:
    """Vectorized wall set for repeated crossing queries.

    Stores endpoint/extent arrays once so a localization loop can test one
    path against thousands of walls per call without Python-level iteration.
    """

    def __init__(self, walls: Sequence[WallSegment]):
        self.walls = list(walls)
        n = len(self.walls)
        self.ax = np.array([w.a.x for w in self.walls]) if n else np.empty(0)
        self.ay = np.array([w.a.y for w in self.walls]) if n else np.empty(0)
        self.bx = np.array([w.b.x for w in self.walls]) if n else np.empty(0)
        self.by = np.array([w.b.y for w in self.walls]) if n else np.empty(0)
        self.zlo = np.array([w.z_min for w in self.walls]) if n else np.empty(0)
        self.zhi = np.array([w.z_max for w in self.walls]) if n else np.empty(0)

    def __len__(self) -> int:
        return len(self.walls)

    def crossing_indices(self, p: LocalPoint3, q: LocalPoint3) -> np.ndarray:
        if len(self.walls) == 0:
            return np.empty(0, dtype=int)
        # 2D segment/segment intersection parameters, vectorized over walls.
        dx, dy, dz = q.x - p.x, q.y - p.y, q.z - p.z
        ex = self.bx - self.ax
        ey = self.by - self.ay
        denom = dx * ey - dy * ex
        parallel = np.abs(denom) < EPS_GEO
        safe = np.where(parallel, 1.0, denom)
        rx = self.ax - p.x
        ry = self.ay - p.y
        t = (rx * ey - ry * ex) / safe          # along the path
        u = (rx * dy - ry * dx) / safe          # along the wall footprint
        hit = (
            ~parallel
            & (t > EPS_GEO)
            & (t < 1.0 - EPS_GEO)
            & (u >= -EPS_GEO)
            & (u <= 1.0 + EPS_GEO)
        )
        if not hit.any():
            return np.empty(0, dtype=int)
        zc = p.z + t * dz
        hit &= (zc >= self.zlo - EPS_GEO) & (zc <= self.zhi + EPS_GEO)
        return np.flatnonzero(hit)


def count_crossings(
    p: LocalPoint3,
    q: LocalPoint3,
    walls: Sequence[WallSegment] | WallIndex,
    slab_zs: Iterable[float] = (),
) -> CrossingReport:
    """Count walls whose vertical rectangle the open segment (p, q) penetrates.

    Grazing (collinear overlap) counts zero; hits within EPS_GEO of a wall
    endpoint count once. `slab_zs` lists horizontal floor-slab heights; each
    slab plane the segment crosses adds one to the count (cross-floor paths).
    """
    if (p.x, p.y, p.z) == (q.x, q.y, q.z):
        raise GeometryError("degenerate path: from == to")
    index = walls if isinstance(walls, WallIndex) else WallIndex(walls)
    idx = index.crossing_indices(p, q)
    crossed = [index.walls[i] for i in idx]
    count = len(crossed)
    zlo, zhi = min(p.z, q.z), max(p.z, q.z)
    for sz in slab_zs:
        if zlo + EPS_GEO < sz < zhi - EPS_GEO:
            count += 1
    return CrossingReport(count=count, crossed=crossed)
