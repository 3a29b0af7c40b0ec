"""Directed road graphs built from node/edge CSV files.

Nodes are intersections with WGS84 coordinates. Edges are directed road
segments; a two-way street appears as two edges, one per direction. Each
edge carries a heading (initial great-circle bearing from its source to
its target, clockwise from north) which later drives direction labeling
in `codec`.

Construction is staged: `load_network` -> `compute_headings` ->
`codec.assign_intervals` -> `codec.resolve_conflicts`. After the last
stage the network should be treated as immutable and may be shared
freely across threads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .errors import DataError

HEADING_UNSET = float("nan")
LABEL_UNSET = -1


@dataclass
class NodeRecord:
    id: int
    lat: float
    lon: float


@dataclass
class EdgeRecord:
    id: int
    source: int
    target: int
    heading: float = HEADING_UNSET
    interval: int = LABEL_UNSET
    direction: int = LABEL_UNSET


def initial_bearing(lat1, lon1, lat2, lon2):
    """Initial great-circle bearing from point 1 to point 2.

    Returns degrees clockwise from north in [0, 360).
    """
    p1 = math.radians(lat1)
    p2 = math.radians(lat2)
    dl = math.radians(lon2 - lon1)
    x = math.sin(dl) * math.cos(p2)
    y = math.cos(p1) * math.sin(p2) - math.sin(p1) * math.cos(p2) * math.cos(dl)
    deg = math.degrees(math.atan2(x, y)) % 360.0
    return 0.0 if deg >= 360.0 else deg


class RoadNetwork:
    """Directed graph of intersection nodes and road segments.

    Node ids are arbitrary unique integers; edge ids must be dense
    integers 0..|E|-1 so they can index parameter tables and metric
    symbols directly.
    """

    def __init__(self, nodes, edges):
        self.nodes = list(nodes)
        self.edges = list(edges)
        self.num_directions = None  # set by codec.assign_intervals

        self.node_by_id = {}
        for n in self.nodes:
            if n.id in self.node_by_id:
                raise DataError(f"duplicate node id {n.id}")
            if not (-90.0 <= n.lat <= 90.0) or not (-180.0 <= n.lon <= 180.0):
                raise DataError(f"node {n.id}: coordinates out of range")
            self.node_by_id[n.id] = n

        seen = set()
        for e in self.edges:
            if e.id in seen:
                raise DataError(f"duplicate edge id {e.id}")
            seen.add(e.id)
            if e.source not in self.node_by_id:
                raise DataError(f"edge {e.id}: source node {e.source} does not exist")
            if e.target not in self.node_by_id:
                raise DataError(f"edge {e.id}: target node {e.target} does not exist")
        if self.edges and (min(seen) != 0 or max(seen) != len(self.edges) - 1):
            raise DataError(
                f"edge ids must be dense 0..{len(self.edges) - 1}, "
                f"got range [{min(seen)}, {max(seen)}]"
            )
        self.edges.sort(key=lambda e: e.id)

        self.out_adjacency = {n.id: [] for n in self.nodes}
        self.in_adjacency = {n.id: [] for n in self.nodes}
        for e in self.edges:
            self.out_adjacency[e.source].append(e.id)
            self.in_adjacency[e.target].append(e.id)
        # edge ids were appended in ascending order, so lists stay sorted

        self._dir_index = None

    def edge(self, edge_id):
        return self.edges[edge_id]

    def out_edges(self, node_id):
        """Edges leaving `node_id`, in ascending edge-id order."""
        if node_id not in self.out_adjacency:
            raise DataError(f"unknown node id {node_id}")
        return [self.edges[i] for i in self.out_adjacency[node_id]]

    def in_edges(self, node_id):
        if node_id not in self.in_adjacency:
            raise DataError(f"unknown node id {node_id}")
        return [self.edges[i] for i in self.in_adjacency[node_id]]

    def neighbors(self, node_id):
        """Target nodes of out-edges, deduplicated, in ascending edge-id order."""
        seen = set()
        out = []
        for e in self.out_edges(node_id):
            if e.target not in seen:
                seen.add(e.target)
                out.append(e.target)
        return out

    def rebuild_direction_index(self):
        """Index (source, direction) -> edge id; validates injectivity."""
        index = {}
        for e in self.edges:
            if e.direction == LABEL_UNSET:
                raise DataError(f"edge {e.id}: direction label not assigned")
            key = (e.source, e.direction)
            if key in index:
                raise DataError(
                    f"edges {index[key]} and {e.id} share (source={e.source}, "
                    f"direction={e.direction})"
                )
            index[key] = e.id
        self._dir_index = index
        return index

    def edge_at(self, node_id, direction):
        """Edge id leaving `node_id` with the given direction label, or None."""
        if self._dir_index is None:
            raise DataError("direction index not built; run resolve_conflicts first")
        return self._dir_index.get((node_id, direction))

    def available_directions(self, node_id):
        """Sorted direction labels that have an outgoing edge at `node_id`."""
        return sorted(e.direction for e in self.out_edges(node_id))


def _parse_int(text, what, path, line_no):
    try:
        return int(text)
    except ValueError:
        raise DataError(f"{path}:{line_no}: malformed {what} {text!r}") from None


def _parse_float(text, what, path, line_no):
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{path}:{line_no}: malformed {what} {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"{path}:{line_no}: non-finite {what} {text!r}")
    return value


def load_network(nodes_file, edges_file):
    """Build a RoadNetwork from two CSV files.

    nodes CSV header: id,lat,lon
    edges CSV header: id,source,target

    Headings and direction labels start unset. Errors (duplicate ids,
    dangling endpoints, malformed rows) report the offending line number.
    """
    nodes = []
    node_ids = set()
    with open(nodes_file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "lat", "lon"]:
            raise DataError(f"{nodes_file}:1: expected header id,lat,lon, got {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{nodes_file}:{line_no}: expected 3 fields, got {len(row)}")
            nid = _parse_int(row[0], "node id", nodes_file, line_no)
            lat = _parse_float(row[1], "latitude", nodes_file, line_no)
            lon = _parse_float(row[2], "longitude", nodes_file, line_no)
            if nid in node_ids:
                raise DataError(f"{nodes_file}:{line_no}: duplicate node id {nid}")
            if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
                raise DataError(f"{nodes_file}:{line_no}: coordinates out of range")
            node_ids.add(nid)
            nodes.append(NodeRecord(nid, lat, lon))

    edges = []
    edge_ids = set()
    with open(edges_file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "source", "target"]:
            raise DataError(f"{edges_file}:1: expected header id,source,target, got {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{edges_file}:{line_no}: expected 3 fields, got {len(row)}")
            eid = _parse_int(row[0], "edge id", edges_file, line_no)
            src = _parse_int(row[1], "source id", edges_file, line_no)
            dst = _parse_int(row[2], "target id", edges_file, line_no)
            if eid in edge_ids:
                raise DataError(f"{edges_file}:{line_no}: duplicate edge id {eid}")
            if src not in node_ids:
                raise DataError(f"{edges_file}:{line_no}: source node {src} does not exist")
            if dst not in node_ids:
                raise DataError(f"{edges_file}:{line_no}: target node {dst} does not exist")
            edge_ids.add(eid)
            edges.append(EdgeRecord(eid, src, dst))

    return RoadNetwork(nodes, edges)


def compute_headings(net):
    """Set every edge's heading from its endpoint coordinates.

    Intermediate segment geometry is ignored: the heading is the initial
    bearing from the source node to the target node. Zero-length edges
    (identical endpoint coordinates) are rejected because their heading
    is undefined.
    """
    for e in net.edges:
        a = net.node_by_id[e.source]
        b = net.node_by_id[e.target]
        if a.lat == b.lat and a.lon == b.lon:
            raise DataError(
                f"edge {e.id}: zero length (nodes {e.source} and {e.target} coincide)"
            )
        e.heading = initial_bearing(a.lat, a.lon, b.lat, b.lon)
    return net


def save_network_csv(net, nodes_file, edges_file):
    """Write the node and edge CSVs consumed by load_network."""
    with open(nodes_file, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("id,lat,lon\n")
        for n in net.nodes:
            fh.write(f"{n.id},{n.lat!r},{n.lon!r}\n")
    with open(edges_file, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("id,source,target\n")
        for e in net.edges:
            fh.write(f"{e.id},{e.source},{e.target}\n")


def save_labeled_edges_csv(net, path):
    """Write edges with heading/interval/direction columns (diagnostic output)."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("id,source,target,heading,interval,direction\n")
        for e in net.edges:
            fh.write(
                f"{e.id},{e.source},{e.target},{e.heading:.6f},{e.interval},{e.direction}\n"
            )
