import itertools
import math

import numpy as np
import pytest

from gridplan.geo import GeoPoint, local_to_wgs84
from gridplan.osm import Element, OsmNode, OsmWay, RoadGraph, build_road_graph

ORIGIN = GeoPoint(32.88, -117.23)


def graph_from_edges(n_nodes, edges, positions=None):
    """RoadGraph with explicit (a, b, w) edges, undirected."""
    positions = positions or {i: (float(i), 0.0) for i in range(1, n_nodes + 1)}
    nodes = {i: OsmNode(i, local_to_wgs84(ORIGIN, positions[i])) for i in range(1, n_nodes + 1)}
    adj = {i: [] for i in range(1, n_nodes + 1)}
    for a, b, w in edges:
        adj[a].append((b, w))
        adj[b].append((a, w))
    return RoadGraph(nodes, adj, origin=ORIGIN, way_nodes=frozenset(adj))


def local_graph(points, elements=None, free=None, origin=ORIGIN):
    """Path graph through local ``points``; ``free`` adds off-way element nodes."""
    elements = elements or {}
    nodes = [OsmNode(i + 1, local_to_wgs84(origin, p), elements.get(i, Element.NONE))
             for i, p in enumerate(points)]
    for k, (p, e) in enumerate(free or []):
        nodes.append(OsmNode(len(points) + k + 1, local_to_wgs84(origin, p), e))
    way = OsmWay(1, tuple(range(1, len(points) + 1)))
    return build_road_graph(nodes, [way], origin=origin)


def brute_force_cost(n_nodes, edges, src, dst):
    """Minimum over all simple paths, summing edges in path order."""
    w = {}
    for a, b, c in edges:
        for u, v in ((a, b), (b, a)):
            w[(u, v)] = min(w.get((u, v), math.inf), c)
    if src == dst:
        return 0.0
    others = [i for i in range(1, n_nodes + 1) if i not in (src, dst)]
    best = math.inf
    for r in range(len(others) + 1):
        for mid in itertools.permutations(others, r):
            path = (src,) + mid + (dst,)
            cost = 0.0
            for a, b in zip(path[:-1], path[1:]):
                if (a, b) not in w:
                    cost = math.inf
                    break
                cost += w[(a, b)]
            best = min(best, cost)
    return best


def random_graph(rng, max_nodes=9):
    n = int(rng.integers(2, max_nodes + 1))
    edges = []
    for a in range(1, n + 1):
        for b in range(a + 1, n + 1):
            if rng.random() < 0.35:
                edges.append((a, b, float(rng.integers(1, 11))))
    return n, edges


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting: tests marked ``criterion(n)`` get one summary line each

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.skipped and not rep.failed):
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "SKIP" if rep.skipped else "FAIL" if rep.failed else "PASS"
    if rep.skipped and isinstance(rep.longrepr, tuple):
        detail = detail or rep.longrepr[2]
    _CRITERIA[mark.args[0]] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {detail}")
