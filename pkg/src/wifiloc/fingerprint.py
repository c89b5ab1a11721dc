"""KNN fingerprinting baseline.

Signal-space nearest neighbours over stored (position, RSSI vector)
fingerprints. Missing readings are imputed at the sensitivity floor so
scans and entries compare over the same AP universe. The estimate is the
unweighted centroid of the k nearest entries, which by construction can
never leave the convex hull of the training positions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import LocalPoint3
from .osmag import OsmAgMap
from .robot_localize import LocalizationResult

DEFAULT_K = 4
IMPUTE_DBM = -100.0


class FingerprintIndexError(ValueError):
    pass


@dataclass
class FingerprintIndex:
    positions: np.ndarray            # (n, 3)
    levels: np.ndarray               # (n,)
    matrix: np.ndarray               # (n, m) RSSI, imputed
    ap_universe: list[str]

    def __len__(self) -> int:
        return len(self.positions)


def build_index(m: OsmAgMap) -> FingerprintIndex:
    """Index every fingerprint in the map; AP universe is sorted."""
    if not m.fingerprints:
        raise FingerprintIndexError("map has no fingerprints to index")
    universe = sorted({ap for fp in m.fingerprints for ap in fp.rssi})
    col = {ap: i for i, ap in enumerate(universe)}
    n = len(m.fingerprints)
    matrix = np.full((n, len(universe)), IMPUTE_DBM)
    positions = np.empty((n, 3))
    levels = np.empty(n, dtype=int)
    for i, fp in enumerate(m.fingerprints):
        positions[i] = fp.position.as_array()
        levels[i] = fp.level
        for ap, v in fp.rssi.items():
            matrix[i, col[ap]] = v
    return FingerprintIndex(
        positions=positions, levels=levels, matrix=matrix, ap_universe=universe
    )


def knn_localize(
    index: FingerprintIndex, scan: dict[str, float], k: int = DEFAULT_K
) -> LocalizationResult:
    """Estimate = centroid of the k signal-space-nearest fingerprints."""
    if k < 1:
        raise FingerprintIndexError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        raise FingerprintIndexError("empty index")
    k = min(k, len(index))
    # Compare over the union of AP ids; unseen scan APs get an imputed column.
    universe = list(index.ap_universe)
    extra = sorted(set(scan) - set(universe))
    col = {ap: i for i, ap in enumerate(universe + extra)}
    q = np.full(len(col), IMPUTE_DBM)
    for ap, v in scan.items():
        q[col[ap]] = v
    mat = index.matrix
    if extra:
        pad = np.full((len(index), len(extra)), IMPUTE_DBM)
        mat = np.hstack([mat, pad])
    dist = np.linalg.norm(mat - q[None, :], axis=1)
    order = np.argsort(dist, kind="stable")[:k]
    centroid = index.positions[order].mean(axis=0)
    lvls, counts = np.unique(index.levels[order], return_counts=True)
    top = counts.max()
    tied = lvls[counts == top]
    if len(tied) == 1:
        level = int(tied[0])
    else:
        level = int(index.levels[order[0]])   # tie: nearest entry wins
    return LocalizationResult(
        position=LocalPoint3(*centroid),
        level=level,
        iterations=0,
        converged=True,
        used_aps=[(ap, 0.0, 0) for ap in sorted(scan)],
        residual_rms=float(dist[order].mean()),
    )
