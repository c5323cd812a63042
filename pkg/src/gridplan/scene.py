"""Semantic grids, the ego-centric crop, and desk-scale synthetic maps.

Grid convention: cell ``(i, j)`` of a :class:`SemanticGrid` is centered at
``(j / D, i / D)`` in the grid frame, whose pose in the map frame is
``origin``; rows grow along +y.  Crops are heading-up: crop cell ``(r, c)``
samples the ego-frame point ``((L/2 - r) / D, (L/2 - c) / D)``, so the
vehicle sits at cell ``(L/2, L/2)`` looking toward row 0.
"""
import enum
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CodecError, DomainError
from .geo import GeoPoint, Pose2D, from_ego_frame, local_to_wgs84, to_ego_frame
from .osm import Element, OsmNode, OsmWay, build_road_graph


class Cls(enum.IntEnum):
    UNKNOWN = 0
    ROAD = 1
    LANE_MARKING = 2
    CROSSWALK = 3
    SIDEWALK = 4
    VEGETATION = 5


PALETTE = np.array([
    (0.0, 0.0, 0.0),   # Unknown
    (0.5, 0.5, 0.5),   # Road
    (1.0, 1.0, 0.0),   # LaneMarking
    (1.0, 0.0, 1.0),   # Crosswalk
    (0.0, 1.0, 0.0),   # Sidewalk
    (0.0, 0.5, 0.0),   # Vegetation
], dtype=np.float32)

SIDEWALK_WIDTH = 2.0
LANE_MARKING_WIDTH = 0.15
NODE_SPACING = 5.0
CROSSWALK_DISTANCE = 10.0   # from intersection center, along each arm
CROSSWALK_DEPTH = 3.0
STOP_DISTANCE = 15.0


@dataclass(frozen=True)
class GridSpec:
    resolution: float = 2.0    # D, pixels per meter
    horizon: float = 100.0     # L_max, meters

    @property
    def side(self):
        return int(round(2 * self.resolution * self.horizon))


def encode_classes(classes):
    """Class codes (L x L) to the fixed 3-channel palette (L x L x 3)."""
    classes = np.asarray(classes)
    if classes.size and (classes.min() < 0 or classes.max() >= len(PALETTE)):
        raise DomainError("unknown class code")
    return PALETTE[classes.astype(np.intp)]


def decode_classes(tensor):
    """Inverse palette lookup; every pixel must be a palette color."""
    tensor = np.asarray(tensor, dtype=np.float32)
    diff = np.abs(tensor[..., None, :] - PALETTE).sum(-1)
    codes = diff.argmin(-1)
    if not np.all(diff.min(-1) == 0.0):
        raise DomainError("tensor contains non-palette colors")
    return codes.astype(np.uint8)


@dataclass
class SemanticGrid:
    classes: np.ndarray          # (rows, cols) uint8
    resolution: float            # pixels per meter
    origin: Pose2D = Pose2D(0.0, 0.0, 0.0)

    def cell_indices(self, pts):
        """Nearest cell (i, j) for map-frame points; may fall outside the grid."""
        g = to_ego_frame(self.origin, pts)
        j = np.floor(g[:, 0] * self.resolution + 0.5).astype(np.int64)
        i = np.floor(g[:, 1] * self.resolution + 0.5).astype(np.int64)
        return i, j

    def classes_at(self, pts):
        """Class under each map-frame point; off-grid points read as Unknown."""
        i, j = self.cell_indices(np.asarray(pts, dtype=float).reshape(-1, 2))
        h, w = self.classes.shape
        inside = (i >= 0) & (i < h) & (j >= 0) & (j < w)
        out = np.full(len(i), Cls.UNKNOWN, dtype=np.uint8)
        out[inside] = self.classes[i[inside], j[inside]]
        return out

    def to_bytes(self):
        h, w = self.classes.shape
        head = b"SGRD" + struct.pack("<HIIf3d", 1, w, h, self.resolution, *self.origin)
        return head + np.ascontiguousarray(self.classes, dtype=np.uint8).tobytes()

    @classmethod
    def from_bytes(cls, data):
        fmt = "<HIIf3d"
        n = 4 + struct.calcsize(fmt)
        if len(data) < n or data[:4] != b"SGRD":
            raise CodecError("not a semantic grid file")
        version, w, h, res, x, y, th = struct.unpack(fmt, data[4:n])
        if version != 1:
            raise CodecError(f"unsupported grid version {version}")
        body = data[n:]
        if len(body) != w * h:
            raise CodecError("grid payload size mismatch")
        classes = np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()
        return cls(classes, float(res), Pose2D(x, y, th))

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass
class SceneCrop:
    tensor: np.ndarray           # (L, L, 3) float32 in [0, 1]
    spec: GridSpec = field(default_factory=GridSpec)

    def classes_at(self, pts):
        """Class under ego-frame points (nearest crop cell, Unknown outside)."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        L, D = self.spec.side, self.spec.resolution
        r = np.floor(L / 2 - pts[:, 0] * D + 0.5).astype(np.int64)
        c = np.floor(L / 2 - pts[:, 1] * D + 0.5).astype(np.int64)
        inside = (r >= 0) & (r < L) & (c >= 0) & (c < L)
        out = np.full(len(r), Cls.UNKNOWN, dtype=np.uint8)
        if inside.any():
            out[inside] = decode_classes(self.tensor[r[inside], c[inside]])
        return out


def crop_offsets(spec):
    """Ego-frame sample point of every crop cell, shape (L*L, 2), row-major."""
    L, D = spec.side, spec.resolution
    idx = np.arange(L, dtype=float)
    x = (L / 2 - idx) / D
    y = (L / 2 - idx) / D
    return np.stack(np.broadcast_arrays(x[:, None], y[None, :]), axis=-1).reshape(-1, 2)


def crop_classes(grid, ego, spec):
    L = spec.side
    pts = from_ego_frame(ego, crop_offsets(spec))
    return grid.classes_at(pts).reshape(L, L)


def crop_ego(grid, ego, spec=GridSpec()):
    """Heading-up L x L x 3 crop of ``grid`` around pose ``ego`` (nearest neighbor)."""
    return SceneCrop(encode_classes(crop_classes(grid, ego, spec)), spec)


# --------------------------------------------------------------------------
# synthetic scenarios

@dataclass
class RoadSpec:
    centerline: list
    width: float = 7.0
    oneway: bool = False
    road_class: str = "residential"


@dataclass
class IntersectionSpec:
    center: tuple
    control: str = "stop"        # "stop" | "signal" | "none"
    crosswalks: bool = True


@dataclass
class ElementSpec:
    at: tuple
    kind: str                     # "stop" | "signal" | "crossing"
    on_way: bool = True


@dataclass
class ScenarioSpec:
    """Desk-scale world description (see README for the JSON schema)."""

    name: str = "scenario"
    roads: list = field(default_factory=list)
    intersections: list = field(default_factory=list)
    elements: list = field(default_factory=list)
    routes: list = None           # optional [[start_xy, goal_xy], ...]
    ego_arc_range: tuple = None   # optional (lo, hi) meters along the route
    origin: tuple = (32.8801, -117.2340)
    resolution: float = 2.0
    margin: float = 20.0
    node_spacing: float = NODE_SPACING

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["roads"] = [RoadSpec(**r) for r in d.get("roads", [])]
        d["intersections"] = [IntersectionSpec(**i) for i in d.get("intersections", [])]
        d["elements"] = [ElementSpec(**e) for e in d.get("elements", [])]
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_dict(self):
        return {
            "name": self.name,
            "roads": [vars(r) for r in self.roads],
            "intersections": [vars(i) for i in self.intersections],
            "elements": [vars(e) for e in self.elements],
            "routes": self.routes,
            "ego_arc_range": self.ego_arc_range,
            "origin": list(self.origin),
            "resolution": self.resolution,
            "margin": self.margin,
            "node_spacing": self.node_spacing,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


_KIND = {"stop": Element.STOP_SIGN, "signal": Element.TRAFFIC_SIGNAL,
         "crossing": Element.CROSSING}


def _segment_distance(px, py, a, b):
    """Distance from points to segment ab, plus the clamped projection parameter."""
    ab = b - a
    L2 = float(ab @ ab)
    t = ((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / L2
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * ab[0]), py - (a[1] + t * ab[1]))


def _polyline_distance(px, py, poly):
    d = np.full(px.shape, np.inf)
    for a, b in zip(poly[:-1], poly[1:]):
        if np.allclose(a, b):
            continue
        d = np.minimum(d, _segment_distance(px, py, a, b))
    return d


def _resample(poly, spacing):
    from .geo import arc_lengths, sample_polyline
    total = arc_lengths(poly)[-1]
    n = int(math.floor(total / spacing + 1e-9))
    s = list(spacing * np.arange(n + 1))
    if total - s[-1] > 1e-6:
        s.append(total)
    return sample_polyline(poly, np.array(s))


def _node_key(p):
    return (round(float(p[0]), 4), round(float(p[1]), 4))


@dataclass
class SyntheticWorld:
    grid: SemanticGrid
    graph: object
    spec: ScenarioSpec


def build_scenario_graph(spec):
    """Road graph with nodes every ``node_spacing`` meters along centerlines."""
    origin = GeoPoint(*spec.origin)
    ids, xy, elements = {}, [], {}
    ways = []

    def node_id(p):
        key = _node_key(p)
        if key not in ids:
            ids[key] = len(ids) + 1
            xy.append(np.asarray(p, dtype=float))
        return ids[key]

    for w, road in enumerate(spec.roads):
        poly = np.asarray(road.centerline, dtype=float)
        refs = []
        for p in _resample(poly, spec.node_spacing):
            nid = node_id(p)
            if not refs or refs[-1] != nid:
                refs.append(nid)
        ways.append(OsmWay(w + 1, tuple(refs), road.oneway, road.road_class))

    pos = np.array(xy)
    adjacency = {}
    for w in ways:
        for a, b in zip(w.node_ids[:-1], w.node_ids[1:]):
            adjacency.setdefault(a, set()).add(b)
            adjacency.setdefault(b, set()).add(a)

    def nearest(p):
        d = np.hypot(pos[:, 0] - p[0], pos[:, 1] - p[1])
        return int(np.argmin(d)) + 1

    def walk_arm(center, first, distance):
        # follow a chain of nodes away from the center until ``distance`` along it
        prev, cur = center, first
        travelled = float(np.hypot(*(pos[cur - 1] - pos[center - 1])))
        while travelled + 1e-6 < distance:
            nxt = [n for n in sorted(adjacency[cur]) if n != prev]
            if len(nxt) != 1:
                return None
            prev, cur = cur, nxt[0]
            travelled += float(np.hypot(*(pos[cur - 1] - pos[prev - 1])))
        return cur if abs(travelled - distance) < spec.node_spacing / 2 else None

    for inter in spec.intersections:
        c = nearest(inter.center)
        for arm in sorted(adjacency.get(c, ())):
            if inter.crosswalks:
                n = walk_arm(c, arm, CROSSWALK_DISTANCE)
                if n is not None:
                    elements[n] = Element.CROSSING
            if inter.control in ("stop", "signal"):
                n = walk_arm(c, arm, STOP_DISTANCE)
                if n is not None:
                    elements[n] = _KIND[inter.control]

    free = []
    for e in spec.elements:
        if e.on_way:
            elements[nearest(e.at)] = _KIND[e.kind]
        else:
            free.append(e)

    nodes = [OsmNode(i + 1, local_to_wgs84(origin, pos[i]), elements.get(i + 1, Element.NONE))
             for i in range(len(pos))]
    for k, e in enumerate(free):
        nodes.append(OsmNode(len(pos) + k + 1, local_to_wgs84(origin, e.at), _KIND[e.kind]))
    return build_road_graph(nodes, ways, origin=origin)


def _arms(graph, center_id):
    c = np.asarray(graph.position(center_id))
    out = []
    for n, _ in graph.neighbors(center_id):
        d = np.asarray(graph.position(n)) - c
        out.append(d / np.hypot(*d))
    return out


def synthesize_map(spec, seed=0):
    """Rasterize ``spec`` and build its paired road graph.

    Layers are painted in a fixed order (vegetation, sidewalks, road,
    intersection areas, lane markings, crosswalks); within a layer later
    roads overwrite earlier ones.  The raster is a pure function of the ScenarioSpec;
    ``seed`` is accepted so every generator in the pipeline shares one
    signature.
    """
    del seed
    graph = build_scenario_graph(spec)
    polys = [np.asarray(r.centerline, dtype=float) for r in spec.roads]
    pad = max([r.width / 2 for r in spec.roads] + [0.0]) + SIDEWALK_WIDTH + spec.margin
    allpts = np.concatenate(polys) if polys else np.zeros((1, 2))
    lo = allpts.min(0) - pad
    hi = allpts.max(0) + pad
    D = spec.resolution
    w = int(math.ceil((hi[0] - lo[0]) * D)) + 1
    h = int(math.ceil((hi[1] - lo[1]) * D)) + 1
    px = lo[0] + np.arange(w)[None, :] / D + np.zeros((h, 1))
    py = lo[1] + np.arange(h)[:, None] / D + np.zeros((1, w))

    classes = np.full((h, w), Cls.VEGETATION, dtype=np.uint8)
    dists = [_polyline_distance(px, py, p) for p in polys]
    for road, d in zip(spec.roads, dists):
        classes[d <= road.width / 2 + SIDEWALK_WIDTH] = Cls.SIDEWALK
    for road, d in zip(spec.roads, dists):
        classes[d <= road.width / 2] = Cls.ROAD

    junction = np.zeros((h, w), dtype=bool)
    for inter in spec.intersections:
        width = max(r.width for r in spec.roads)
        cx, cy = inter.center
        junction |= np.hypot(px - cx, py - cy) <= width / 2 + SIDEWALK_WIDTH
    classes[junction] = Cls.ROAD

    half_line = max(LANE_MARKING_WIDTH / 2, 0.5 / D)   # at least one cell wide
    for road, d in zip(spec.roads, dists):
        classes[(d <= half_line) & ~junction] = Cls.LANE_MARKING

    for inter in spec.intersections:
        if not inter.crosswalks:
            continue
        width = max(r.width for r in spec.roads)
        c = np.asarray(inter.center, dtype=float)
        key = min(graph.nodes, key=lambda i: np.hypot(*(np.asarray(graph.position(i)) - c)))
        for u in _arms(graph, key):
            along = (px - c[0]) * u[0] + (py - c[1]) * u[1]
            lateral = -(px - c[0]) * u[1] + (py - c[1]) * u[0]
            band = (np.abs(along - CROSSWALK_DISTANCE) <= CROSSWALK_DEPTH / 2) & (np.abs(lateral) <= width / 2)
            classes[band] = Cls.CROSSWALK

    grid = SemanticGrid(classes, D, Pose2D(float(lo[0]), float(lo[1]), 0.0))
    return grid, graph


def world_from_spec(spec, seed=0):
    grid, graph = synthesize_map(spec, seed)
    return SyntheticWorld(grid, graph, spec)


# --------------------------------------------------------------------------
# stock scenarios

def straight_scenario(length=200.0, width=7.0, name="straight"):
    return ScenarioSpec(name=name, roads=[RoadSpec([[0.0, 0.0], [length, 0.0]], width)])


def four_way_scenario(arm=100.0, width=7.0, control="stop", crosswalks=True, name="four_way",
                      routes=None, ego_arc_range=None):
    roads = [RoadSpec([[0.0, 0.0], [dx * arm, dy * arm]], width)
             for dx, dy in ((1, 0), (0, 1), (-1, 0), (0, -1))]
    return ScenarioSpec(name=name, roads=roads,
                        intersections=[IntersectionSpec((0.0, 0.0), control, crosswalks)],
                        routes=routes, ego_arc_range=ego_arc_range)


def three_way_scenario(arm=100.0, width=7.0, control="signal", crosswalks=True,
                       name="three_way", routes=None, ego_arc_range=None):
    roads = [RoadSpec([[0.0, 0.0], [dx * arm, dy * arm]], width)
             for dx, dy in ((1, 0), (-1, 0), (0, -1))]
    return ScenarioSpec(name=name, roads=roads,
                        intersections=[IntersectionSpec((0.0, 0.0), control, crosswalks)],
                        routes=routes, ego_arc_range=ego_arc_range)


def hairpin_scenario(leg=80.0, radius=10.0, width=7.0, name="hairpin", routes=None,
                     ego_arc_range=None):
    """Two parallel legs joined by a half circle: routes along it are u-turns."""
    theta = np.linspace(-math.pi / 2, math.pi / 2, 19)
    arc = np.stack([leg + radius * np.cos(theta), radius + radius * np.sin(theta)], axis=1)
    line = np.concatenate([[[0.0, 0.0]], arc, [[0.0, 2 * radius]]])
    return ScenarioSpec(name=name, roads=[RoadSpec(line.tolist(), width)], routes=routes,
                        ego_arc_range=ego_arc_range)
