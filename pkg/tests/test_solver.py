import math

import numpy as np
import pytest

from wifiloc.geometry import LocalPoint3, euclidean
from wifiloc.solver import (
    DegenerateGeometryError,
    RangeConstraint,
    SolverConfig,
    UnderdeterminedError,
    linear_init,
    solve_ranges,
)


def ranges_from(p_true, anchors, weight=1.0):
    return [
        RangeConstraint(anchor=a, range=euclidean(p_true, a), weight=weight)
        for a in anchors
    ]


SQUARE_ANCHORS = [
    LocalPoint3(10, 0, 0),
    LocalPoint3(0, 10, 0),
    LocalPoint3(-10, 0, 0),
    LocalPoint3(0, -10, 0),
]


class TestSolveRanges:
    def test_symmetric_square(self):
        cons = [RangeConstraint(anchor=a, range=10.0) for a in SQUARE_ANCHORS]
        out = solve_ranges(
            cons, LocalPoint3(1, 1, 0), SolverConfig(z_mode="fixed", z_fixed=0.0)
        )
        assert euclidean(out.position, LocalPoint3(0, 0, 0)) < 1e-6
        assert out.converged

    def test_underdetermined(self):
        cons = [RangeConstraint(anchor=SQUARE_ANCHORS[0], range=5.0)] * 2
        with pytest.raises(UnderdeterminedError):
            solve_ranges(cons, LocalPoint3(0, 0, 0))

    def test_recovers_known_point_2d(self):
        rng = np.random.default_rng(3)
        p_true = LocalPoint3(4.2, -1.7, 0.0)
        anchors = [
            LocalPoint3(*rng.uniform(-10, 10, 2), 0.0) for _ in range(3)
        ]
        cons = ranges_from(p_true, anchors)
        out = solve_ranges(
            cons,
            p_true + LocalPoint3(2, -1, 0),
            SolverConfig(z_mode="fixed", z_fixed=0.0, epsilon=1e-12),
        )
        assert euclidean(out.position, p_true) < 1e-6

    def test_collinear_anchors_rejected(self):
        anchors = [LocalPoint3(x, 2 * x, 0) for x in (0.0, 1.0, 2.0, 3.0)]
        cons = [RangeConstraint(anchor=a, range=1.0) for a in anchors]
        with pytest.raises(DegenerateGeometryError):
            solve_ranges(cons, LocalPoint3(0, 0, 0))

    def test_noise_free_residual_tiny(self):
        rng = np.random.default_rng(11)
        p_true = LocalPoint3(2.0, 3.0, 1.5)
        anchors = [LocalPoint3(*rng.uniform(-12, 12, 3)) for _ in range(6)]
        cons = ranges_from(p_true, anchors)
        out = solve_ranges(
            cons, LocalPoint3(0, 0, 0), SolverConfig(epsilon=1e-12, max_iters=200)
        )
        assert out.residual_rms < 1e-8

    def test_never_nan(self):
        # anchor coincides with the solution: singularity guard must hold
        cons = [
            RangeConstraint(anchor=LocalPoint3(0, 0, 0), range=0.001),
            RangeConstraint(anchor=LocalPoint3(5, 0, 0), range=5.0),
            RangeConstraint(anchor=LocalPoint3(0, 5, 0), range=5.0),
        ]
        out = solve_ranges(
            cons, LocalPoint3(0, 0, 0), SolverConfig(z_mode="fixed", z_fixed=0.0)
        )
        assert math.isfinite(out.position.x)
        assert math.isfinite(out.residual_rms)

    def test_objective_nonincreasing(self):
        rng = np.random.default_rng(5)
        p_true = LocalPoint3(1.0, 2.0, 0.0)
        anchors = [LocalPoint3(*rng.uniform(-10, 10, 2), 0.0) for _ in range(5)]
        cons = [
            RangeConstraint(anchor=a, range=euclidean(p_true, a) + rng.normal(0, 0.5))
            for a in anchors
            if euclidean(p_true, a) > 1.0
        ]
        cfg = SolverConfig(z_mode="fixed", z_fixed=0.0, epsilon=1e-12)

        def cost_at(p):
            return sum((euclidean(p, c.anchor) - c.range) ** 2 for c in cons)

        out = solve_ranges(cons, LocalPoint3(8, -8, 0), cfg)
        # accepted-step rule: final cost no worse than the initial cost
        assert cost_at(out.position) <= cost_at(LocalPoint3(8, -8, 0)) + 1e-12

    def test_translation_equivariance(self):
        rng = np.random.default_rng(9)
        p_true = LocalPoint3(3.0, -2.0, 0.5)
        anchors = [LocalPoint3(*rng.uniform(-10, 10, 3)) for _ in range(5)]
        cons = ranges_from(p_true, anchors)
        cfg = SolverConfig(epsilon=1e-13, max_iters=300)
        init = LocalPoint3(0.0, 0.0, 0.0)
        base = solve_ranges(cons, init, cfg).position
        shift = LocalPoint3(10.5, -3.25, 2.0)
        cons_t = [
            RangeConstraint(anchor=c.anchor + shift, range=c.range) for c in cons
        ]
        moved = solve_ranges(cons_t, init + shift, cfg).position
        assert euclidean(moved, base + shift) < 1e-9


class TestJacobian:
    def test_matches_finite_differences(self):
        # analytic direction vectors vs central differences at 100 points
        rng = np.random.default_rng(42)
        h = 1e-6
        for _ in range(100):
            p = rng.uniform(-20, 20, 3)
            a = rng.uniform(-20, 20, 3)
            if np.linalg.norm(p - a) < 0.1:
                continue
            d = rng.uniform(1, 30)

            def resid(q):
                return np.linalg.norm(q - a) - d

            grad_true = (p - a) / np.linalg.norm(p - a)
            grad_fd = np.array(
                [
                    (resid(p + h * e) - resid(p - h * e)) / (2 * h)
                    for e in np.eye(3)
                ]
            )
            rel = np.linalg.norm(grad_fd - grad_true) / np.linalg.norm(grad_true)
            assert rel < 1e-5


class TestLinearInit:
    def test_exact_recovery(self):
        rng = np.random.default_rng(1)
        p_true = LocalPoint3(5.0, 2.0, 1.0)
        anchors = [LocalPoint3(*rng.uniform(-15, 15, 3)) for _ in range(5)]
        cons = ranges_from(p_true, anchors)
        got = linear_init(cons)
        assert euclidean(got, p_true) < 1e-9

    def test_symmetric_square_center(self):
        cons = [RangeConstraint(anchor=a, range=10.0) for a in SQUARE_ANCHORS]
        got = linear_init(cons, z_fixed=0.0)
        assert euclidean(got, LocalPoint3(0, 0, 0)) < 1e-9

    def test_collinear_raises(self):
        anchors = [LocalPoint3(x, 0, 0) for x in (0.0, 1.0, 2.0, 3.0)]
        cons = [RangeConstraint(anchor=a, range=1.0) for a in anchors]
        with pytest.raises(DegenerateGeometryError):
            linear_init(cons)

    def test_underdetermined(self):
        with pytest.raises(UnderdeterminedError):
            linear_init([RangeConstraint(anchor=SQUARE_ANCHORS[0], range=1.0)])
