"""osmAG map parsing, validation, querying, and serialization.

An osmAG file is standard OSM XML (nodes, ways, tags) with a WiFi extension
carried entirely in node tags:

  fingerprint node:  wifi:fingerprint=yes, wifi:rssi:<bssid>=<dBm>,
                     level=<int>, optional timestamp, optional height
  AP node:           wifi:ap=yes, wifi:bssid=<id>, wifi:ap:source=
                     estimated|surveyed, level=<int>, optional height

The exact WiFi tag key strings are defined by this toolkit (the upstream
format leaves them open); everything else, including unknown tags, round
trips verbatim. `height` is an absolute z in meters in the map frame and
overrides the level-derived z.
"""
from __future__ import annotations

import io
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace

from .geometry import (
    DEFAULT_FLOOR_HEIGHT_M,
    LocalPoint3,
    WallSegment,
    project,
    unproject,
)

LATLON_DECIMALS = 9          # ~0.1 mm; kills round-trip drift
EPS_MERGE = 0.05             # endpoint coincidence tolerance for wall dedup
RSSI_MIN, RSSI_MAX = -100.0, 0.0


class MapError(ValueError):
    """Base class for map-level failures."""


class MapParseError(MapError):
    pass


class MapIntegrityError(MapError):
    pass


class MapSchemaError(MapError):
    pass


@dataclass
class OsmNode:
    id: int
    lat: float
    lon: float
    tags: dict[str, str] = field(default_factory=dict)


@dataclass
class OsmWay:
    id: int
    node_refs: list[int] = field(default_factory=list)
    tags: dict[str, str] = field(default_factory=dict)

    @property
    def is_area(self) -> bool:
        return (
            len(self.node_refs) >= 4 and self.node_refs[0] == self.node_refs[-1]
        )


@dataclass
class Fingerprint:
    node_id: int
    position: LocalPoint3
    level: int
    rssi: dict[str, float]
    timestamp: float | None = None


@dataclass
class ApRecord:
    ap_id: str
    position: LocalPoint3
    level: int
    source: str = "estimated"        # estimated | surveyed
    tags: dict[str, str] = field(default_factory=dict)


@dataclass
class OsmAgMap:
    nodes: dict[int, OsmNode] = field(default_factory=dict)
    ways: dict[int, OsmWay] = field(default_factory=dict)
    fingerprints: list[Fingerprint] = field(default_factory=list)
    aps: list[ApRecord] = field(default_factory=list)
    origin: tuple[float, float] = (0.0, 0.0)
    floor_height: float = DEFAULT_FLOOR_HEIGHT_M

    def next_node_id(self) -> int:
        return max(self.nodes, default=0) + 1

    def ap_by_id(self, ap_id: str) -> ApRecord | None:
        for ap in self.aps:
            if ap.ap_id == ap_id:
                return ap
        return None

    def levels(self) -> list[int]:
        seen = {fp.level for fp in self.fingerprints}
        seen.update(ap.level for ap in self.aps)
        for way in self.ways.values():
            if way.is_area:
                seen.add(_way_level(way))
        return sorted(seen) if seen else [0]


def _way_level(way: OsmWay) -> int:
    try:
        return int(float(way.tags.get("level", "0")))
    except ValueError:
        return 0


def _node_position(
    node: OsmNode, origin: tuple[float, float], floor_height: float
) -> tuple[LocalPoint3, int]:
    level = int(float(node.tags.get("level", "0")))
    height = None
    if "height" in node.tags:
        height = float(node.tags["height"])
    pos = project(origin, (node.lat, node.lon, level), floor_height, height)
    return pos, level


def _classify_wifi_nodes(m: OsmAgMap) -> None:
    m.fingerprints.clear()
    m.aps.clear()
    for node in m.nodes.values():
        if node.tags.get("wifi:ap") == "yes":
            bssid = node.tags.get("wifi:bssid")
            if not bssid:
                raise MapSchemaError(
                    f"node {node.id}: wifi:ap=yes but no wifi:bssid tag"
                )
            pos, level = _node_position(node, m.origin, m.floor_height)
            extra = {
                k: v
                for k, v in node.tags.items()
                if k not in ("wifi:ap", "wifi:bssid", "wifi:ap:source", "level", "height")
            }
            m.aps.append(
                ApRecord(
                    ap_id=bssid,
                    position=pos,
                    level=level,
                    source=node.tags.get("wifi:ap:source", "estimated"),
                    tags=extra,
                )
            )
        elif node.tags.get("wifi:fingerprint") == "yes":
            rssi: dict[str, float] = {}
            for k, v in node.tags.items():
                if k.startswith("wifi:rssi:"):
                    try:
                        val = float(v)
                    except ValueError:
                        raise MapSchemaError(
                            f"node {node.id}: malformed RSSI value {v!r} for {k}"
                        ) from None
                    if not (RSSI_MIN <= val <= RSSI_MAX):
                        raise MapSchemaError(
                            f"node {node.id}: RSSI {val} outside [{RSSI_MIN}, {RSSI_MAX}]"
                        )
                    rssi[k[len("wifi:rssi:"):]] = val
            if not rssi:
                raise MapSchemaError(
                    f"node {node.id}: wifi:fingerprint=yes but no wifi:rssi:* tags"
                )
            pos, level = _node_position(node, m.origin, m.floor_height)
            ts = None
            if "timestamp" in node.tags:
                ts = float(node.tags["timestamp"])
            m.fingerprints.append(
                Fingerprint(node_id=node.id, position=pos, level=level, rssi=rssi, timestamp=ts)
            )
    seen: set[str] = set()
    for ap in m.aps:
        if ap.ap_id in seen:
            raise MapIntegrityError(f"duplicate AP id {ap.ap_id}")
        seen.add(ap.ap_id)


def validate(m: OsmAgMap) -> None:
    """Referential and range integrity; raises on violation."""
    for node in m.nodes.values():
        if not (-90.0 <= node.lat <= 90.0 and -180.0 <= node.lon <= 180.0):
            raise MapIntegrityError(f"node {node.id}: lat/lon out of range")
    for way in m.ways.values():
        for ref in way.node_refs:
            if ref not in m.nodes:
                raise MapIntegrityError(f"way {way.id}: dangling node ref {ref}")
    for fp in m.fingerprints:
        if fp.node_id not in m.nodes:
            raise MapIntegrityError(f"fingerprint node {fp.node_id} missing")


def parse_map(
    xml_text: str, floor_height: float = DEFAULT_FLOOR_HEIGHT_M
) -> OsmAgMap:
    """Parse osmAG XML into a validated map."""
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise MapParseError(f"malformed XML at line {line}, column {col}: {exc}") from exc
    if root.tag != "osm":
        raise MapParseError(f"expected <osm> root, got <{root.tag}>")

    m = OsmAgMap(floor_height=floor_height)
    bounds = root.find("bounds")
    for el in root:
        if el.tag == "node":
            node = OsmNode(
                id=int(el.attrib["id"]),
                lat=float(el.attrib["lat"]),
                lon=float(el.attrib["lon"]),
                tags={t.attrib["k"]: t.attrib["v"] for t in el.findall("tag")},
            )
            if node.id in m.nodes:
                raise MapIntegrityError(f"duplicate node id {node.id}")
            m.nodes[node.id] = node
        elif el.tag == "way":
            way = OsmWay(
                id=int(el.attrib["id"]),
                node_refs=[int(nd.attrib["ref"]) for nd in el.findall("nd")],
                tags={t.attrib["k"]: t.attrib["v"] for t in el.findall("tag")},
            )
            m.ways[way.id] = way
    if bounds is not None:
        m.origin = (float(bounds.attrib["minlat"]), float(bounds.attrib["minlon"]))
    elif m.nodes:
        m.origin = (
            min(n.lat for n in m.nodes.values()),
            min(n.lon for n in m.nodes.values()),
        )
    validate(m)
    _classify_wifi_nodes(m)
    return m


def serialize_map(m: OsmAgMap) -> str:
    """Serialize to osmAG XML; parse(serialize(m)) reproduces m."""
    validate(m)
    root = ET.Element("osm", {"version": "0.6", "generator": "wifiloc"})
    fmt = f"{{:.{LATLON_DECIMALS}f}}"
    ET.SubElement(
        root,
        "bounds",
        {"minlat": fmt.format(m.origin[0]), "minlon": fmt.format(m.origin[1])},
    )
    for node in sorted(m.nodes.values(), key=lambda n: n.id):
        el = ET.SubElement(
            root,
            "node",
            {
                "id": str(node.id),
                "lat": fmt.format(node.lat),
                "lon": fmt.format(node.lon),
            },
        )
        for k, v in node.tags.items():
            ET.SubElement(el, "tag", {"k": k, "v": v})
    for way in sorted(m.ways.values(), key=lambda w: w.id):
        el = ET.SubElement(root, "way", {"id": str(way.id)})
        for ref in way.node_refs:
            ET.SubElement(el, "nd", {"ref": str(ref)})
        for k, v in way.tags.items():
            ET.SubElement(el, "tag", {"k": k, "v": v})
    ET.indent(root)
    buf = io.BytesIO()
    ET.ElementTree(root).write(buf, encoding="utf-8", xml_declaration=True)
    return buf.getvalue().decode("utf-8") + "\n"


def _round_latlon(v: float) -> float:
    return round(v, LATLON_DECIMALS)


def upsert_ap(m: OsmAgMap, ap: ApRecord) -> OsmAgMap:
    """Insert or replace the record (and backing node) for ap.ap_id."""
    for c in (ap.position.x, ap.position.y, ap.position.z):
        if not math.isfinite(c):
            raise MapIntegrityError(f"AP {ap.ap_id}: non-finite position")
    existing = m.ap_by_id(ap.ap_id)
    if existing is not None:
        node_id = _ap_node_id(m, ap.ap_id)
        m.aps.remove(existing)
    else:
        node_id = m.next_node_id()
    lat, lon = unproject(m.origin, ap.position)
    tags = dict(ap.tags)
    tags.update(
        {
            "wifi:ap": "yes",
            "wifi:bssid": ap.ap_id,
            "wifi:ap:source": ap.source,
            "level": str(ap.level),
            "height": repr(ap.position.z),
        }
    )
    m.nodes[node_id] = OsmNode(
        id=node_id, lat=_round_latlon(lat), lon=_round_latlon(lon), tags=tags
    )
    m.aps.append(replace(ap, tags=dict(ap.tags)))
    return m


def _ap_node_id(m: OsmAgMap, ap_id: str) -> int:
    for node in m.nodes.values():
        if node.tags.get("wifi:bssid") == ap_id and node.tags.get("wifi:ap") == "yes":
            return node.id
    return m.next_node_id()


def add_fingerprint(m: OsmAgMap, fp: Fingerprint) -> OsmAgMap:
    """Insert a fingerprint and its backing node (used by the simulator)."""
    node_id = fp.node_id if fp.node_id and fp.node_id not in m.nodes else m.next_node_id()
    lat, lon = unproject(m.origin, fp.position)
    tags = {
        "wifi:fingerprint": "yes",
        "level": str(fp.level),
        "height": repr(fp.position.z),
    }
    if fp.timestamp is not None:
        tags["timestamp"] = repr(fp.timestamp)
    for ap_id, val in sorted(fp.rssi.items()):
        tags[f"wifi:rssi:{ap_id}"] = repr(round(val, 6))
    m.nodes[node_id] = OsmNode(
        id=node_id, lat=_round_latlon(lat), lon=_round_latlon(lon), tags=tags
    )
    m.fingerprints.append(replace(fp, node_id=node_id))
    return m


def _passage_edges(m: OsmAgMap) -> set[frozenset[int]]:
    edges: set[frozenset[int]] = set()
    for way in m.ways.values():
        if way.tags.get("passage") == "yes" or way.tags.get("indoor") == "door":
            for a, b in zip(way.node_refs, way.node_refs[1:]):
                edges.add(frozenset((a, b)))
    return edges


def wall_segments(m: OsmAgMap, level: int) -> list[WallSegment]:
    """Deduplicated wall segments for one level.

    Edges of area polygons on the level; shared (coincident within
    EPS_MERGE) edges counted once; passage-tagged edges excluded.
    Deterministic and independent of way ordering.
    """
    passages = _passage_edges(m)
    z0 = level * m.floor_height
    z1 = z0 + m.floor_height
    raw: list[tuple[LocalPoint3, LocalPoint3]] = []
    for way_id in sorted(m.ways):
        way = m.ways[way_id]
        if not way.is_area or _way_level(way) != level:
            continue
        if way.tags.get("passage") == "yes":
            continue
        for a_id, b_id in zip(way.node_refs, way.node_refs[1:]):
            if frozenset((a_id, b_id)) in passages:
                continue
            na, nb = m.nodes[a_id], m.nodes[b_id]
            pa, _ = _node_position(na, m.origin, m.floor_height)
            pb, _ = _node_position(nb, m.origin, m.floor_height)
            pa = LocalPoint3(pa.x, pa.y, z0)
            pb = LocalPoint3(pb.x, pb.y, z0)
            raw.append((pa, pb))

    def close(p: LocalPoint3, q: LocalPoint3) -> bool:
        return abs(p.x - q.x) <= EPS_MERGE and abs(p.y - q.y) <= EPS_MERGE

    kept: list[tuple[LocalPoint3, LocalPoint3]] = []
    # Canonical endpoint order makes dedup independent of traversal direction.
    for pa, pb in raw:
        if (pb.x, pb.y) < (pa.x, pa.y):
            pa, pb = pb, pa
        if any(close(pa, qa) and close(pb, qb) for qa, qb in kept):
            continue
        kept.append((pa, pb))
    kept.sort(key=lambda e: (e[0].x, e[0].y, e[1].x, e[1].y))
    return [
        WallSegment(a=pa, b=pb, level=level, z_min=z0, z_max=z1) for pa, pb in kept
    ]


def maps_equal(a: OsmAgMap, b: OsmAgMap) -> bool:
    """Structural equality over nodes, ways, tags, fingerprints, and APs."""
    if set(a.nodes) != set(b.nodes) or set(a.ways) != set(b.ways):
        return False
    for nid, na in a.nodes.items():
        nb = b.nodes[nid]
        if (
            _round_latlon(na.lat) != _round_latlon(nb.lat)
            or _round_latlon(na.lon) != _round_latlon(nb.lon)
            or na.tags != nb.tags
        ):
            return False
    for wid, wa in a.ways.items():
        wb = b.ways[wid]
        if wa.node_refs != wb.node_refs or wa.tags != wb.tags:
            return False
    if len(a.fingerprints) != len(b.fingerprints) or len(a.aps) != len(b.aps):
        return False
    return True
