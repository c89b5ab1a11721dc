"""Physics-informed WiFi indoor localization over osmAG maps."""

__version__ = "0.1.0"

from .geometry import LocalPoint3, WallSegment, CrossingReport  # noqa: F401
from .osmag import OsmAgMap, ApRecord, Fingerprint, parse_map, serialize_map  # noqa: F401
from .propagation import PropagationParams  # noqa: F401
