"""Nonlinear least-squares range solver.

Minimizes sum_i w_i (||p - a_i|| - d_i)^2 with damped Gauss-Newton
(Levenberg-style lambda adaptation). Shared by the AP and robot
localization loops. Anchors are internally centered on their centroid so
the iteration is translation-equivariant to floating-point noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import LocalPoint3

SINGULARITY_EPS = 1e-6   # below this anchor distance the residual direction is pinned
COLLINEAR_TOL = 1e-9     # relative singular-value threshold for degeneracy


class SolverError(ValueError):
    pass


class UnderdeterminedError(SolverError):
    pass


class DegenerateGeometryError(SolverError):
    def __init__(self, msg: str, best_effort: LocalPoint3 | None = None):
        super().__init__(msg)
        self.best_effort = best_effort


@dataclass(frozen=True)
class RangeConstraint:
    anchor: LocalPoint3
    range: float
    weight: float = 1.0

    def __post_init__(self):
        if self.range <= 0:
            raise SolverError(f"range must be > 0, got {self.range}")
        if self.weight < 0:
            raise SolverError("weight must be >= 0")


@dataclass
class SolverConfig:
    max_iters: int = 100
    epsilon: float = 1e-4          # step-norm termination, meters
    damping_init: float = 1e-3
    z_mode: str = "free"           # "free" or "fixed"
    z_fixed: float = 0.0
    z_clamp: tuple[float, float] | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise SolverError("max_iters must be >= 1")
        if self.epsilon <= 0:
            raise SolverError("epsilon must be > 0")
        if self.z_mode not in ("free", "fixed"):
            raise SolverError(f"unknown z_mode {self.z_mode!r}")


@dataclass
class SolveOutcome:
    position: LocalPoint3
    residual_rms: float
    iterations: int
    converged: bool
    step_norms: list[float] = field(default_factory=list)


def _anchor_matrix(constraints: Sequence[RangeConstraint]) -> np.ndarray:
    return np.array([c.anchor.as_array() for c in constraints])


def _check_geometry(anchors: np.ndarray) -> None:
    """Raise if anchors are collinear (no 2D-determined solution)."""
    centered = anchors - anchors.mean(axis=0)
    sv = np.linalg.svd(centered[:, :2], compute_uv=False)
    if sv[0] < COLLINEAR_TOL or sv[1] / sv[0] < 1e-8:
        raise DegenerateGeometryError("anchors are collinear")


def _residual_jacobian(
    p: np.ndarray, anchors: np.ndarray, ranges: np.ndarray, sqw: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    diff = p[None, :] - anchors
    dist = np.linalg.norm(diff, axis=1)
    dirs = np.empty_like(diff)
    small = dist < SINGULARITY_EPS
    safe = np.where(small, 1.0, dist)
    dirs = diff / safe[:, None]
    dirs[small] = np.array([1.0, 0.0, 0.0])  # pinned direction at the singularity
    r = (dist - ranges) * sqw
    J = dirs * sqw[:, None]
    return r, J


def solve_ranges(
    constraints: Sequence[RangeConstraint],
    init: LocalPoint3,
    cfg: SolverConfig | None = None,
) -> SolveOutcome:
    """Damped Gauss-Newton descent from `init`.

    converged is true iff the accepted step norm fell below cfg.epsilon
    before max_iters. Never returns NaN.
    """
    cfg = cfg or SolverConfig()
    if len(constraints) < 3:
        raise UnderdeterminedError(
            f"need >= 3 range constraints, got {len(constraints)}"
        )
    anchors = _anchor_matrix(constraints)
    _check_geometry(anchors)
    ranges = np.array([c.range for c in constraints])
    sqw = np.sqrt(np.array([c.weight for c in constraints]))

    center = anchors.mean(axis=0)
    anchors_c = anchors - center
    fixed_z = cfg.z_mode == "fixed"
    p = init.as_array() - center
    if fixed_z:
        p[2] = cfg.z_fixed - center[2]
    dims = (0, 1) if fixed_z else (0, 1, 2)

    lam = cfg.damping_init
    r, J = _residual_jacobian(p, anchors_c, ranges, sqw)
    cost = float(r @ r)
    step_norms: list[float] = []
    converged = False
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        A = J[:, dims]
        H = A.T @ A
        g = A.T @ r
        accepted = False
        for _ in range(25):
            try:
                step = np.linalg.solve(H + lam * np.eye(len(dims)), -g)
            except np.linalg.LinAlgError:
                lam *= 3.0
                continue
            p_new = p.copy()
            for k, d in enumerate(dims):
                p_new[d] += step[k]
            if not fixed_z and cfg.z_clamp is not None:
                lo, hi = cfg.z_clamp
                p_new[2] = np.clip(p_new[2], lo - center[2], hi - center[2])
            r_new, J_new = _residual_jacobian(p_new, anchors_c, ranges, sqw)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                lam = max(lam * 0.3, 1e-12)
                break
            lam *= 3.0
        if not accepted:
            break
        step_norm = float(np.linalg.norm(p_new - p))
        step_norms.append(step_norm)
        p, r, J, cost = p_new, r_new, J_new, cost_new
        if step_norm < cfg.epsilon:
            converged = True
            break

    pos = p + center
    if fixed_z:
        pos[2] = cfg.z_fixed
    rms = float(np.sqrt(cost / len(constraints)))
    return SolveOutcome(
        position=LocalPoint3(*pos),
        residual_rms=rms,
        iterations=iters,
        converged=converged,
        step_norms=step_norms,
    )


def linear_init(
    constraints: Sequence[RangeConstraint],
    z_fixed: float | None = None,
) -> LocalPoint3:
    """Closed-form linearized multilateration.

    Subtracts the first squared-range equation from the rest and solves the
    resulting linear system in least squares. With z_fixed the system is
    solved in the plane z = z_fixed.
    """
    if len(constraints) < 3:
        raise UnderdeterminedError(
            f"need >= 3 range constraints, got {len(constraints)}"
        )
    anchors = _anchor_matrix(constraints)
    _check_geometry(anchors)
    ranges = np.array([c.range for c in constraints])

    center = anchors.mean(axis=0)
    a = anchors - center
    if z_fixed is not None:
        # Fold the known z into the ranges: solve in 2D at height z_fixed.
        dz = z_fixed - anchors[:, 2]
        r2 = ranges**2 - dz**2
        r2 = np.maximum(r2, 0.0)
        a = a[:, :2].copy()
        a[:, 0] = anchors[:, 0] - center[0]
        a[:, 1] = anchors[:, 1] - center[1]
    else:
        r2 = ranges**2

    A = 2.0 * (a[1:] - a[0])
    b = (r2[0] - r2[1:]) + np.sum(a[1:] ** 2, axis=1) - np.sum(a[0] ** 2)
    sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    needed = 2 if z_fixed is not None else min(3, A.shape[1])
    if rank < 2:
        raise DegenerateGeometryError("rank-deficient linear system")
    if z_fixed is not None:
        return LocalPoint3(sol[0] + center[0], sol[1] + center[1], z_fixed)
    if rank < 3:
        # Coplanar anchors: z is unobservable in the linearized system;
        # lstsq already returned the minimum-norm (anchor-plane) solution.
        pass
    p = sol + center
    return LocalPoint3(*p)
