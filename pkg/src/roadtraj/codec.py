"""Direction-based trajectory representation.

The heading range [0, 360) is partitioned into K equal intervals of
width 360/K. Every edge first gets the interval its heading falls in;
conflict resolution then revises labels so that within one source node
each outgoing edge carries a distinct direction label. That makes
(source, direction) a unique key for every edge, so an edge sequence can
be replaced losslessly by a start node plus a direction-label sequence,
shrinking the prediction space from |E| classes to K.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DataError, InvalidDirectionError
from .network import LABEL_UNSET


def circular_distance(a, b, period=360.0):
    """Shortest distance between two angles on a circle of the given period."""
    d = abs(a - b) % period
    return min(d, period - d)


def _clockwise_of(x, ref, period=360.0):
    """True if angle x lies on the clockwise side of ref (exclusive half-circle)."""
    return 0.0 < (x - ref) % period < period / 2.0


@dataclass
class ContextFeatures:
    """Categorical context attached to a trajectory."""

    time_slot: int = 0   # hour-of-week, [0, 168)
    weather: int = 0     # [0, 5)
    driver_id: int = 0   # [0, driver vocabulary)

    TIME_SLOTS = 168
    WEATHER_KINDS = 5

    def validate(self):
        if not 0 <= self.time_slot < self.TIME_SLOTS:
            raise DataError(f"time_slot {self.time_slot} outside [0, {self.TIME_SLOTS})")
        if not 0 <= self.weather < self.WEATHER_KINDS:
            raise DataError(f"weather {self.weather} outside [0, {self.WEATHER_KINDS})")
        if self.driver_id < 0:
            raise DataError(f"driver_id {self.driver_id} is negative")
        return self


@dataclass
class EncodedTrajectory:
    """A trajectory as node sequence plus direction-label sequence.

    `nodes` has one more entry than `directions`: directions[i] labels
    the edge from nodes[i] to nodes[i+1], i.e. the movement taken to
    arrive at nodes[i+1].
    """

    nodes: list
    directions: list
    context: ContextFeatures = field(default_factory=ContextFeatures)
    traj_id: int = 0

    def __len__(self):
        return len(self.directions)


@dataclass
class EdgeRevision:
    edge_id: int
    old_label: int
    new_label: int


@dataclass
class RevisionReport:
    """Outcome of conflict resolution over one network."""

    revisions: list
    total_edges: int

    @property
    def revision_rate(self):
        if self.total_edges == 0:
            return 0.0
        return len(self.revisions) / self.total_edges


def assign_intervals(net, K):
    """Discretize headings into K equal intervals.

    Every edge gets interval = floor(heading / (360/K)) and its direction
    label initialized to that interval.
    """
    if K < 2:
        raise DataError(f"need at least 2 direction intervals, got {K}")
    width = 360.0 / K
    for e in net.edges:
        if e.heading != e.heading:  # NaN sentinel
            raise DataError(f"edge {e.id}: heading not computed")
        interval = int(e.heading // width)
        if interval >= K:  # heading == 360 - epsilon rounding guard
            interval = K - 1
        e.interval = interval
        e.direction = interval
    net.num_directions = K
    net._dir_index = None
    return net


def _pick_keeper(group, center):
    """Edge that keeps a contested interval: closest heading to the interval
    center; ties prefer the clockwise side, then the lower edge id."""
    def rank(e):
        d = circular_distance(e.heading, center)
        clockwise = _clockwise_of(e.heading, center)
        return (d, 0 if clockwise else 1, e.id)

    return min(group, key=rank)


def _nearest_available(heading, available, K):
    """Available interval whose center is circularly closest to `heading`.

    Ties prefer the interval center on the clockwise side of the heading.
    """
    width = 360.0 / K
    best = None
    best_rank = None
    for interval in sorted(available):
        center = (interval + 0.5) * width
        d = circular_distance(heading, center)
        rank = (d, 0 if _clockwise_of(center, heading) else 1, interval)
        if best_rank is None or rank < best_rank:
            best_rank = rank
            best = interval
    return best


def resolve_conflicts(net):
    """Make direction labels distinct within each source node.

    Within a contested interval the edge whose heading is closest to the
    interval center keeps it; the remaining edges are processed in
    increasing angular distance from that center and each takes the
    nearest interval still available at that moment. Returns the network
    and a RevisionReport listing every revised edge.
    """
    K = net.num_directions
    if K is None:
        raise DataError("intervals not assigned; run assign_intervals first")
    width = 360.0 / K
    revisions = []

    for node in sorted(net.out_adjacency):
        edges = net.out_edges(node)
        if len(edges) > K:
            raise DataError(
                f"node {node} has out-degree {len(edges)} > K={K}; cannot label"
            )
        groups = {}
        for e in edges:
            groups.setdefault(e.interval, []).append(e)

        available = set(range(K)) - set(groups.keys())
        pending = []
        for interval in sorted(groups):
            group = groups[interval]
            keeper = group[0]
            if len(group) > 1:
                center = (interval + 0.5) * width
                keeper = _pick_keeper(group, center)
                for e in group:
                    if e is keeper:
                        continue
                    d = circular_distance(e.heading, center)
                    clockwise = _clockwise_of(e.heading, center)
                    pending.append((interval, d, 0 if clockwise else 1, e.id, e))
            keeper.direction = interval

        # groups in ascending interval order, then rejects by distance from
        # their group center (ties clockwise first, then edge id)
        pending.sort(key=lambda item: item[:4])
        for _, _, _, _, e in pending:
            new_label = _nearest_available(e.heading, available, K)
            available.discard(new_label)
            e.direction = new_label
            revisions.append(EdgeRevision(e.id, e.interval, new_label))

    net.rebuild_direction_index()
    return net, RevisionReport(revisions, len(net.edges))


def encode(net, edge_seq):
    """Turn a connected edge-id sequence into an EncodedTrajectory."""
    edge_seq = list(edge_seq)
    nodes = []
    directions = []
    prev = None
    for pos, eid in enumerate(edge_seq, start=1):
        e = net.edge(eid)
        if e.direction == LABEL_UNSET:
            raise DataError(f"edge {eid}: direction label not assigned")
        if prev is not None and prev.target != e.source:
            raise DataError(
                f"edges {prev.id} and {e.id} are not connected "
                f"(break at position {pos})"
            )
        if prev is None:
            nodes.append(e.source)
        nodes.append(e.target)
        directions.append(e.direction)
        prev = e
    if not edge_seq:
        raise DataError("cannot encode an empty edge sequence")
    return EncodedTrajectory(nodes=nodes, directions=directions)


def decode(net, start_node, directions):
    """Resolve (node, direction) pairs back to the unique edge sequence.

    Walks from `start_node`, at each step looking up the single edge with
    the given direction label. Raises InvalidDirectionError carrying the
    partial result when no edge matches.
    """
    if start_node not in net.node_by_id:
        raise DataError(f"unknown node id {start_node}")
    edges = []
    node = start_node
    for step, r in enumerate(directions, start=1):
        eid = net.edge_at(node, r)
        if eid is None:
            raise InvalidDirectionError(
                f"invalid direction {r} at step {step} (node {node})",
                step=step,
                partial=edges,
            )
        edges.append(eid)
        node = net.edge(eid).target
    return edges


def trajectory_edges(net, traj):
    """Edge-id sequence for an EncodedTrajectory (inverse of encode)."""
    return decode(net, traj.nodes[0], traj.directions)


def parse_trajectory_line(line, path="<string>", line_no=0):
    """Parse `traj_id,time_slot,weather,driver_id,e1 e2 ...` into parts."""
    fields = line.rstrip("\n").split(",")
    if len(fields) != 5:
        raise DataError(f"{path}:{line_no}: expected 5 comma-separated fields")
    try:
        traj_id = int(fields[0])
        ctx = ContextFeatures(int(fields[1]), int(fields[2]), int(fields[3]))
        edge_ids = [int(tok) for tok in fields[4].split()]
    except ValueError:
        raise DataError(f"{path}:{line_no}: malformed integer field") from None
    if not edge_ids:
        raise DataError(f"{path}:{line_no}: empty edge sequence")
    return traj_id, ctx.validate(), edge_ids


def read_edge_sequences(path):
    """Read a trajectory file without needing a network: (id, ctx, edges) rows."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rows.append(parse_trajectory_line(line, path, line_no))
    return rows


def load_trajectory_file(path, net):
    """Read a trajectory file and encode every line against the network."""
    out = []
    for traj_id, ctx, edge_ids in read_edge_sequences(path):
        traj = encode(net, edge_ids)
        traj.context = ctx
        traj.traj_id = traj_id
        out.append(traj)
    return out


def save_trajectory_file(path, trajectories, net):
    """Write trajectories in the `traj_id,time,weather,driver,edges` format."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        for traj in trajectories:
            edges = trajectory_edges(net, traj)
            ctx = traj.context
            edge_field = " ".join(str(e) for e in edges)
            fh.write(
                f"{traj.traj_id},{ctx.time_slot},{ctx.weather},{ctx.driver_id},{edge_field}\n"
            )
