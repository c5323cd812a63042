"""Shortest routes over the road graph and the ego-frame plan-graph matrix."""
import enum
import heapq
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRouteError, DomainError, NoRouteError, OffRouteError
from .geo import to_ego_frame
from .osm import Element

PAD, PAST, FUTURE, STOP_OR_SIGNAL, CROSSING = 0.0, 1.0, 2.0, 3.0, 4.0

# off-way element nodes further than this from every route node are ignored
ELEMENT_ASSOCIATION_RADIUS = 5.0


class Variant(str, enum.Enum):
    PF = "PF"
    STPF = "STPF"
    STCPF = "STCPF"


@dataclass(frozen=True)
class Route:
    node_ids: tuple
    cumulative_cost: float

    def __len__(self):
        return len(self.node_ids)


@dataclass
class PlanGraph:
    rows: np.ndarray  # (P+F, 3): p_x, p_y, f
    variant: Variant

    def to_json(self):
        rows = [[float(f"{v:.9g}") for v in r] for r in self.rows.tolist()]
        return json.dumps({"variant": Variant(self.variant).value, "rows": rows})

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        return cls(np.asarray(doc["rows"], dtype=float), Variant(doc["variant"]))


def shortest_route(g, src, dst):
    """Dijkstra over ``g``.

    Equal-cost alternatives are resolved by keeping the smaller predecessor
    id, and the frontier pops smaller node ids first, so results are stable.
    """
    if src not in g.nodes or dst not in g.nodes:
        raise DomainError(f"unknown node id {src if src not in g.nodes else dst}")
    dist = {src: 0.0}
    prev = {}
    done = set()
    heap = [(0.0, src)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == dst:
            break
        for v, w in g.neighbors(u):
            if v in done:
                continue
            nd = d + w
            if v not in dist or nd < dist[v] or (nd == dist[v] and u < prev[v]):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if dst not in done:
        raise NoRouteError(f"no route from {src} to {dst}")
    path = [dst]
    while path[-1] != src:
        path.append(prev[path[-1]])
    path.reverse()
    # re-accumulate along the path so the cost equals the edge-weight sum exactly
    cost = 0.0
    for a, b in zip(path[:-1], path[1:]):
        cost += min(w for v, w in g.neighbors(a) if v == b)
    return Route(tuple(path), cost)


def route_positions(route, g):
    return np.array([g.position(i) for i in route.node_ids], dtype=float).reshape(-1, 2)


def match_waypoint(route, g, gps, max_dist=30.0):
    """Index of the route node closest to ``gps``; ties go to the smaller index."""
    if len(route) == 0:
        raise DomainError("empty route")
    pos = route_positions(route, g)
    d = np.hypot(pos[:, 0] - gps[0], pos[:, 1] - gps[1])
    k = int(np.argmin(d))
    if d[k] > max_dist:
        raise OffRouteError(d[k], max_dist)
    return k


def estimate_heading(route, g, idx):
    """Direction of the route at node ``idx``, from OSM geometry only."""
    if len(route) < 2:
        raise DegenerateRouteError("heading needs a route with at least two nodes")
    pos = route_positions(route, g)
    if idx < len(route) - 1:
        a, b = pos[idx], pos[idx + 1]
    else:
        a, b = pos[idx - 1], pos[idx]
    return math.atan2(b[1] - a[1], b[0] - a[0])


def route_elements(route, g):
    """Element attached to each route node.

    Way nodes carry their own tag; element nodes that belong to no way are
    attached to the nearest route node within ELEMENT_ASSOCIATION_RADIUS.
    """
    elems = [g.nodes[i].element for i in route.node_ids]
    on_route = set(route.node_ids)
    pos = route_positions(route, g)
    for nid in sorted(g.nodes):
        node = g.nodes[nid]
        if node.element == Element.NONE or nid in on_route or nid in g.way_nodes:
            continue
        p = g.position(nid)
        d = np.hypot(pos[:, 0] - p[0], pos[:, 1] - p[1])
        k = int(np.argmin(d))
        if d[k] <= ELEMENT_ASSOCIATION_RADIUS and elems[k] == Element.NONE:
            elems[k] = node.element
    return elems


def feature_code(element, base, variant):
    variant = Variant(variant)
    if variant is Variant.PF:
        return base
    if element in (Element.STOP_SIGN, Element.TRAFFIC_SIGNAL):
        return STOP_OR_SIGNAL
    if element == Element.CROSSING and variant is Variant.STCPF:
        return CROSSING
    return base


def plan_rows(positions, elements, idx, heading, variant, P=20, F=20):
    """(P+F) x 3 matrix from route geometry; shared by the graph and array paths."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(positions)
    anchor = (positions[idx, 0], positions[idx, 1], heading)
    rows = np.zeros((P + F, 3))
    for r in range(P + F):
        k = idx - P + r
        if k < 0 or k >= n:
            continue
        base = PAST if r < P else FUTURE
        xy = to_ego_frame(anchor, positions[k])[0]
        rows[r] = (xy[0], xy[1], feature_code(elements[k], base, variant))
    return rows


def build_plan_graph(route, g, idx, heading, variant=Variant.STPF, P=20, F=20):
    """Past nodes idx-P..idx-1 and future nodes idx..idx+F-1 in the waypoint frame."""
    rows = plan_rows(route_positions(route, g), route_elements(route, g), idx, heading,
                     variant, P, F)
    return PlanGraph(rows, Variant(variant))


def plan_for_position(route, g, gps, variant=Variant.STPF, P=20, F=20, max_dist=30.0):
    """Convenience chain: match the GPS fix, take the route heading, build the plan."""
    idx = match_waypoint(route, g, gps, max_dist)
    heading = estimate_heading(route, g, idx)
    return build_plan_graph(route, g, idx, heading, variant, P, F), idx, heading
