import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wifiloc.geometry import (
    EARTH_RADIUS_M,
    GeometryError,
    LocalPoint3,
    WallIndex,
    WallSegment,
    count_crossings,
    euclidean,
    project,
    unproject,
)

ORIGIN = (31.178, 121.590)


def square_room_walls(size=6.0, z0=0.0, z1=3.2):
    c = [(0, 0), (size, 0), (size, size), (0, size), (0, 0)]
    return [
        WallSegment(
            a=LocalPoint3(c[i][0], c[i][1], z0),
            b=LocalPoint3(c[i + 1][0], c[i + 1][1], z0),
            z_min=z0,
            z_max=z1,
        )
        for i in range(4)
    ]


class TestEuclidean:
    def test_zero(self):
        p = LocalPoint3(1.5, -2.0, 3.0)
        assert euclidean(p, p) == 0.0

    def test_345(self):
        assert euclidean(LocalPoint3(0, 0, 0), LocalPoint3(3, 4, 0)) == 5.0

    def test_sqrt3(self):
        d = euclidean(LocalPoint3(0, 0, 0), LocalPoint3(1, 1, 1))
        assert d == pytest.approx(math.sqrt(3), abs=1e-9)


class TestProject:
    def test_identity_at_origin(self):
        p = project(ORIGIN, (ORIGIN[0], ORIGIN[1], 0))
        assert (p.x, p.y, p.z) == (0.0, 0.0, 0.0)

    def test_lat_step_at_equator(self):
        p = project((0.0, 0.0), (1e-5, 0.0, 0))
        # R * dlat_rad, by hand: 6378137 * 1e-5 * pi/180 = 1.1132 m
        assert p.y == pytest.approx(1.113, abs=1e-3)
        assert p.x == 0.0

    def test_level_height(self):
        p = project(ORIGIN, (ORIGIN[0], ORIGIN[1], 2), floor_height=3.2)
        assert p.z == pytest.approx(6.4)

    def test_height_override(self):
        p = project(ORIGIN, (ORIGIN[0], ORIGIN[1], 2), height=5.7)
        assert p.z == 5.7

    def test_out_of_range(self):
        with pytest.raises(GeometryError):
            project(ORIGIN, (95.0, 0.0, 0))

    def test_far_from_origin(self):
        with pytest.raises(GeometryError):
            project(ORIGIN, (ORIGIN[0] + 2.0, ORIGIN[1], 0))

    def test_unproject_round_trip(self):
        p = LocalPoint3(123.4, -56.7, 0.0)
        lat, lon = unproject(ORIGIN, p)
        q = project(ORIGIN, (lat, lon, 0))
        assert euclidean(p, q) < 1e-9

    def test_locally_distance_preserving(self):
        # two points 10 m apart by haversine stay 10 m apart after projection
        for lat0 in (0.0, 31.178, 55.0):
            origin = (lat0, 121.0)
            dlat = math.degrees(10.0 / EARTH_RADIUS_M)
            a = project(origin, (lat0, 121.0, 0))
            b = project(origin, (lat0 + dlat, 121.0, 0))
            assert abs(euclidean(a, b) - 10.0) < 0.01


class TestCountCrossings:
    def test_inside_same_room_is_los(self):
        walls = square_room_walls()
        rep = count_crossings(
            LocalPoint3(1, 1, 1), LocalPoint3(5, 5, 1), walls
        )
        assert rep.count == 0
        assert rep.is_los

    def test_one_wall_crossed(self):
        walls = square_room_walls()
        rep = count_crossings(
            LocalPoint3(3, 3, 1), LocalPoint3(9, 3, 1), walls
        )
        assert rep.count == 1
        assert not rep.is_los
        assert len(rep.crossed) == 1

    def test_degenerate_path_rejected(self):
        with pytest.raises(GeometryError):
            count_crossings(LocalPoint3(1, 1, 1), LocalPoint3(1, 1, 1), [])

    def test_path_above_wall_does_not_cross(self):
        walls = square_room_walls(z1=3.2)
        rep = count_crossings(
            LocalPoint3(3, 3, 5.0), LocalPoint3(9, 3, 5.0), walls
        )
        assert rep.count == 0

    def test_collinear_graze_counts_zero(self):
        walls = [
            WallSegment(a=LocalPoint3(0, 0, 0), b=LocalPoint3(10, 0, 0))
        ]
        rep = count_crossings(LocalPoint3(-1, 0, 1), LocalPoint3(11, 0, 1), walls)
        assert rep.count == 0

    def test_slab_crossing(self):
        rep = count_crossings(
            LocalPoint3(1, 1, 0.5), LocalPoint3(2, 2, 5.7), [], slab_zs=(3.2,)
        )
        assert rep.count == 1

    def test_wall_index_matches_list(self):
        walls = square_room_walls()
        idx = WallIndex(walls)
        a, b = LocalPoint3(3, 3, 1), LocalPoint3(14, -2, 1)
        assert count_crossings(a, b, idx).count == count_crossings(a, b, walls).count


coords = st.floats(min_value=-20.0, max_value=20.0)


@settings(max_examples=200, deadline=None)
@given(
    ax=coords, ay=coords, az=st.floats(0.1, 3.0),
    bx=coords, by=coords, bz=st.floats(0.1, 3.0),
)
def test_crossings_symmetric(ax, ay, az, bx, by, bz):
    a, b = LocalPoint3(ax, ay, az), LocalPoint3(bx, by, bz)
    if (a.x, a.y, a.z) == (b.x, b.y, b.z):
        return
    walls = square_room_walls()
    assert count_crossings(a, b, walls).count == count_crossings(b, a, walls).count


@settings(max_examples=100, deadline=None)
@given(perm=st.permutations(range(4)), seed=st.integers(0, 1000))
def test_crossings_permutation_invariant(perm, seed):
    rng = np.random.default_rng(seed)
    walls = square_room_walls()
    shuffled = [walls[i] for i in perm]
    a = LocalPoint3(*rng.uniform(-10, 16, 2), 1.0)
    b = LocalPoint3(*rng.uniform(-10, 16, 2), 1.0)
    if (a.x, a.y) == (b.x, b.y):
        return
    assert count_crossings(a, b, walls).count == count_crossings(a, b, shuffled).count


def _membership_oracle(a, b, rooms, samples=10_000):
    """Dense-sampling parity oracle: count room-membership transitions.

    Independent of the segment-intersection code: classifies sample points
    by polygon containment and counts changes of the membership set.
    """
    from shapely.geometry import Point, Polygon

    polys = [Polygon(r) for r in rooms]
    ts = np.linspace(0.0, 1.0, samples)
    xs = a.x + ts * (b.x - a.x)
    ys = a.y + ts * (b.y - a.y)
    prev = None
    transitions = 0
    for x, y in zip(xs, ys):
        pt = Point(x, y)
        member = frozenset(i for i, p in enumerate(polys) if p.covers(pt))
        if prev is not None and member != prev:
            transitions += 1
        prev = member
    return transitions


def _grid_rooms(nx, ny, size):
    rooms = []
    for j in range(ny):
        for i in range(nx):
            rooms.append(
                [
                    (i * size, j * size),
                    ((i + 1) * size, j * size),
                    ((i + 1) * size, (j + 1) * size),
                    (i * size, (j + 1) * size),
                ]
            )
    return rooms


def _grid_walls(nx, ny, size):
    walls = []
    for i in range(nx + 1):
        for j in range(ny):
            walls.append(
                WallSegment(
                    a=LocalPoint3(i * size, j * size, 0),
                    b=LocalPoint3(i * size, (j + 1) * size, 0),
                )
            )
    for j in range(ny + 1):
        for i in range(nx):
            walls.append(
                WallSegment(
                    a=LocalPoint3(i * size, j * size, 0),
                    b=LocalPoint3((i + 1) * size, j * size, 0),
                )
            )
    return walls


def _ambiguous(a, b, nx, ny, size):
    """Reject configurations whose crossings sit too close to wall corners."""
    for i in range(nx + 1):
        for j in range(ny + 1):
            cx, cy = i * size, j * size
            # distance corner -> segment
            vx, vy = b.x - a.x, b.y - a.y
            wx, wy = cx - a.x, cy - a.y
            t = max(0.0, min(1.0, (vx * wx + vy * wy) / (vx * vx + vy * vy)))
            d = math.hypot(a.x + t * vx - cx, a.y + t * vy - cy)
            if d < 0.05:
                return True
    return False


def test_monte_carlo_parity_oracle_sample():
    # smaller companion of the acceptance run: 100 random configurations
    rng = np.random.default_rng(7)
    nx, ny, size = 3, 3, 5.0
    rooms = _grid_rooms(nx, ny, size)
    walls = _grid_walls(nx, ny, size)
    checked = 0
    while checked < 100:
        a = LocalPoint3(*rng.uniform(-3, nx * size + 3, 2), 1.0)
        b = LocalPoint3(*rng.uniform(-3, nx * size + 3, 2), 1.0)
        if euclidean(a, b) < 0.5 or _ambiguous(a, b, nx, ny, size):
            continue
        got = count_crossings(a, b, walls).count
        want = _membership_oracle(a, b, rooms, samples=4000)
        assert got == want, f"{a} -> {b}: got {got}, oracle {want}"
        checked += 1
