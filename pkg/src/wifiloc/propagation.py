"""Log-distance path-loss signal model with wall attenuation.

Forward: RSSI(d, N) = rssi0 - 10 n log10(d) - N * wall_loss.
Inverse: distance from RSSI, optionally adding wall losses back before
inverting (the NLOS compensation step).

Sign convention: wall_loss is stored as a positive dB magnitude and
subtracted in the forward model. Sources that report the attenuation
factor as a negative number (loss written with its sign) map onto this
convention by taking the magnitude.

The zero-mean shadowing term is not part of the deterministic model; the
simulator adds it and calibration absorbs it into the residual sigma.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

from .geometry import LocalPoint3


class PropagationError(ValueError):
    pass


@dataclass(frozen=True)
class PropagationParams:
    rssi0: float            # dBm at 1 m
    n: float                # path-loss exponent
    wall_loss: float = 0.0  # dB per wall, positive magnitude
    sigma: float = 0.0      # dB shadowing std-dev

    def __post_init__(self):
        if self.n <= 0:
            raise PropagationError(f"path-loss exponent must be > 0, got {self.n}")
        if self.wall_loss < 0:
            raise PropagationError("wall_loss is a positive magnitude")
        if self.sigma < 0:
            raise PropagationError("sigma must be >= 0")
        if not (-60.0 <= self.rssi0 <= 0.0):
            raise PropagationError(f"rssi0 {self.rssi0} outside [-60, 0] dBm")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PropagationParams":
        d = json.loads(text)
        return cls(
            rssi0=d["rssi0"],
            n=d["n"],
            wall_loss=d.get("wall_loss", 0.0),
            sigma=d.get("sigma", 0.0),
        )

    def to_tags(self) -> dict[str, str]:
        return {
            "wifi:model:rssi0": repr(self.rssi0),
            "wifi:model:n": repr(self.n),
            "wifi:model:wall_loss": repr(self.wall_loss),
            "wifi:model:sigma": repr(self.sigma),
        }

    @classmethod
    def from_tags(cls, tags: dict[str, str]) -> "PropagationParams":
        return cls(
            rssi0=float(tags["wifi:model:rssi0"]),
            n=float(tags["wifi:model:n"]),
            wall_loss=float(tags.get("wifi:model:wall_loss", "0")),
            sigma=float(tags.get("wifi:model:sigma", "0")),
        )


@dataclass
class Measurement:
    ap_id: str
    rssi: float
    robot_pos: LocalPoint3
    wall_count: int | None = None


def predict_rssi(params: PropagationParams, d: float, walls: int = 0) -> float:
    """Deterministic RSSI at distance d through `walls` walls."""
    if d <= 0:
        raise PropagationError(f"distance must be > 0, got {d}")
    return params.rssi0 - 10.0 * params.n * math.log10(d) - walls * params.wall_loss


def invert_distance_los(params: PropagationParams, rssi: float) -> float:
    """Distance assuming a clear path (no wall compensation)."""
    return 10.0 ** ((params.rssi0 - rssi) / (10.0 * params.n))


def invert_distance_compensated(
    params: PropagationParams, rssi: float, walls: int
) -> float:
    """Distance with wall losses added back before inversion."""
    if walls < 0:
        raise PropagationError("wall count must be >= 0")
    return invert_distance_los(params, rssi + walls * params.wall_loss)
