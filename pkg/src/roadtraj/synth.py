"""Synthetic road networks and trajectory corpora.

Two topologies:

* grid(width, height): a rectangular lattice with both directions of
  every adjacency, headings on the four compass points. With K=8 no two
  out-edges of a node share an interval, so the revision rate is 0.
* irregular(n_nodes, avg_degree, heading_jitter): lattice points jittered
  in proportion to heading_jitter and wired to their nearest neighbors,
  which produces narrow-angle junctions and a positive revision rate;
  directed edges are then dropped at random until the mean out-degree
  reaches avg_degree (never dropping both directions of a pair, never
  emptying a node's in/out edges, retrying with a fresh sub-seed if the
  result is not strongly connected).

Routing rules for corpus generation:

* uniform-random: next edge uniform over the current node's out-edges.
* straight-biased(p): with probability p take the out-edge closest in
  heading to the current edge, otherwise uniform.
* second-order(rule_seed): the next direction label is a fixed random
  function of the previous two direction labels, realized as the nearest
  available label when the nominal choice has no edge. One-step
  transition counts cannot identify this rule, which is the point: it
  separates sequence models from first-order baselines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import ContextFeatures, circular_distance, encode
from .errors import ConfigError, DataError
from .network import EdgeRecord, NodeRecord, RoadNetwork, compute_headings

GRID_SPACING_DEG = 0.01
GRID_ORIGIN = (0.01, 0.0)  # keep rows north of the equator

TOPOLOGIES = ("grid", "irregular")
ROUTING_RULES = ("uniform-random", "straight-biased", "second-order")


@dataclass
class SynthSpec:
    topology: str = "grid"
    width: int = 5
    height: int = 5
    n_nodes: int = 100            # irregular only
    avg_degree: float = 3.0       # irregular only
    heading_jitter: float = 20.0  # degrees, irregular only
    routing_rule: str = "uniform-random"
    straight_bias: float = 0.8    # straight-biased only
    rule_seed: int = 7            # second-order only
    n_trajectories: int = 100
    traj_length: int = 20
    length_jitter: int = 0
    n_drivers: int = 4
    per_driver_rules: bool = False  # second-order: one rule table per driver
    seed: int = 0

    def validate(self):
        if self.topology not in TOPOLOGIES:
            raise ConfigError(f"unknown topology {self.topology!r}")
        if self.routing_rule not in ROUTING_RULES:
            raise ConfigError(f"unknown routing rule {self.routing_rule!r}")
        for name in ("width", "height", "n_nodes", "n_trajectories",
                     "traj_length", "n_drivers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.length_jitter < 0:
            raise ConfigError("length_jitter must be >= 0")
        if not 0.0 <= self.straight_bias <= 1.0:
            raise ConfigError("straight_bias must be in [0, 1]")
        if self.avg_degree < 1.0:
            raise ConfigError("avg_degree must be >= 1")
        if self.heading_jitter < 0.0 or self.heading_jitter >= 45.0:
            raise ConfigError("heading_jitter must be in [0, 45) degrees")
        return self


def _lattice(width, height):
    lat0, lon0 = GRID_ORIGIN
    nodes = [
        NodeRecord(row * width + col, lat0 + row * GRID_SPACING_DEG,
                   lon0 + col * GRID_SPACING_DEG)
        for row in range(height)
        for col in range(width)
    ]
    pairs = []
    for row in range(height):
        for col in range(width):
            nid = row * width + col
            if col + 1 < width:
                pairs.append((nid, nid + 1))
            if row + 1 < height:
                pairs.append((nid, nid + width))
    return nodes, pairs


def _edges_from_pairs(pairs):
    edges = []
    for a, b in pairs:
        edges.append(EdgeRecord(len(edges), a, b))
        edges.append(EdgeRecord(len(edges), b, a))
    return edges


def gen_grid_network(width, height):
    nodes, pairs = _lattice(width, height)
    net = RoadNetwork(nodes, _edges_from_pairs(pairs))
    return compute_headings(net)


def _strongly_connected(n_nodes, out_adj, in_adj):
    def reach(adj):
        seen = {0}
        stack = [0]
        while stack:
            cur = stack.pop()
            for nxt in adj[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen) == n_nodes

    return reach(out_adj) and reach(in_adj)


def gen_irregular_network(n_nodes, avg_degree, heading_jitter, seed, max_retries=20):
    """Jittered lattice points wired to their nearest neighbors.

    Position jitter grows with heading_jitter (none at 0, most of a cell
    toward 45 degrees), and each node connects to its k nearest points,
    so narrow-angle junctions appear naturally and some direction labels
    need revision, as in organically grown street networks.
    """
    width = int(np.ceil(np.sqrt(n_nodes)))
    height = int(np.ceil(n_nodes / width))
    for attempt in range(max_retries):
        rng = np.random.default_rng([seed, attempt, 0x1A77])
        nodes, _ = _lattice(width, height)
        nodes = nodes[:n_nodes]

        halfwidth = GRID_SPACING_DEG * (heading_jitter / 45.0) * 0.75
        for node in nodes:
            node.lat += rng.uniform(-halfwidth, halfwidth)
            node.lon += rng.uniform(-halfwidth, halfwidth)

        pts = np.array([(n.lat, n.lon) for n in nodes])
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
        np.fill_diagonal(d2, np.inf)
        k = max(2, int(round(avg_degree)))
        pairs = set()
        for i in range(len(nodes)):
            for j in np.argsort(d2[i])[:k]:
                pairs.add((min(i, int(j)), max(i, int(j))))
        pairs = sorted(pairs)
        id_of = [n.id for n in nodes]
        directed = [(id_of[a], id_of[b]) for a, b in pairs] + [
            (id_of[b], id_of[a]) for a, b in pairs
        ]
        out_deg = {n.id: 0 for n in nodes}
        in_deg = {n.id: 0 for n in nodes}
        for a, b in directed:
            out_deg[a] += 1
            in_deg[b] += 1

        target_edges = int(round(avg_degree * len(nodes)))
        removable = list(range(len(directed)))
        rng.shuffle(removable)
        removed = set()
        present = set(directed)
        for idx in removable:
            if len(directed) - len(removed) <= target_edges:
                break
            a, b = directed[idx]
            if idx in removed:
                continue
            if (b, a) not in present:
                continue  # never drop both directions of a pair
            if out_deg[a] <= 1 or in_deg[b] <= 1:
                continue
            removed.add(idx)
            present.discard((a, b))
            out_deg[a] -= 1
            in_deg[b] -= 1

        kept = [pair for i, pair in enumerate(directed) if i not in removed]
        out_adj = {n.id: [] for n in nodes}
        in_adj = {n.id: [] for n in nodes}
        for a, b in kept:
            out_adj[a].append(b)
            in_adj[b].append(a)
        if not _strongly_connected(len(nodes), out_adj, in_adj):
            continue

        edges = [EdgeRecord(i, a, b) for i, (a, b) in enumerate(kept)]
        net = RoadNetwork(nodes, edges)
        return compute_headings(net)
    raise DataError(
        f"could not generate a strongly connected irregular network after "
        f"{max_retries} attempts (n={n_nodes}, avg_degree={avg_degree})"
    )


def gen_network(spec):
    spec.validate()
    if spec.topology == "grid":
        return gen_grid_network(spec.width, spec.height)
    return gen_irregular_network(
        spec.n_nodes, spec.avg_degree, spec.heading_jitter, spec.seed
    )


class _Router:
    """Picks the next edge of a walk according to the routing rule."""

    def __init__(self, net, spec, rng):
        self.net = net
        self.spec = spec
        self.rng = rng
        K = net.num_directions
        if K is None:
            raise DataError("network must be labeled before generating a corpus")
        self.K = K
        self.tables = None
        if spec.routing_rule == "second-order":
            n_tables = spec.n_drivers if spec.per_driver_rules else 1
            self.tables = [
                np.random.default_rng([spec.rule_seed, t]).integers(0, K, size=(K, K))
                for t in range(n_tables)
            ]

    def rule_table(self, driver):
        if self.tables is None:
            return None
        return self.tables[driver % len(self.tables)] if self.spec.per_driver_rules \
            else self.tables[0]

    def next_edge(self, history, driver):
        """history: edges walked so far (at least one)."""
        cur = self.net.edge(history[-1])
        options = self.net.out_edges(cur.target)
        if not options:
            return None
        rule = self.spec.routing_rule
        if rule == "straight-biased" and self.rng.random() < self.spec.straight_bias:
            best = min(
                options,
                key=lambda e: (circular_distance(e.heading, cur.heading), e.id),
            )
            return best.id
        if rule == "second-order" and len(history) >= 2:
            prev = self.net.edge(history[-2])
            nominal = int(self.rule_table(driver)[prev.direction, cur.direction])
            return self._realize_label(cur.target, nominal)
        pick = self.rng.integers(0, len(options))
        return options[pick].id

    def _realize_label(self, node, nominal):
        """Edge whose label is circularly nearest to the nominal label.

        Ties prefer the clockwise candidate, so the realized rule is a
        deterministic function of (node, nominal label).
        """
        avail = {e.direction: e.id for e in self.net.out_edges(node)}
        if nominal in avail:
            return avail[nominal]
        best = None
        best_rank = None
        for label, eid in sorted(avail.items()):
            d = circular_distance(label, nominal, period=self.K)
            clockwise = 0 < (label - nominal) % self.K <= self.K / 2
            rank = (d, 0 if clockwise else 1, label)
            if best_rank is None or rank < best_rank:
                best_rank = rank
                best = eid
        return best


def gen_corpus(net, spec):
    """Random-walk trajectories honoring the routing rule.

    Context features: time slot uniform, weather fixed to 0, driver ids
    assigned round-robin over n_drivers.
    """
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0xC0])
    router = _Router(net, spec, rng)
    node_ids = [n.id for n in net.nodes]
    corpus = []
    for t_idx in range(spec.n_trajectories):
        length = spec.traj_length
        if spec.length_jitter:
            length += int(rng.integers(0, spec.length_jitter + 1))
        driver = t_idx % spec.n_drivers
        walk = None
        for _ in range(50):  # restart on dead ends
            walk = _walk(net, router, rng, node_ids, length, driver)
            if walk is not None:
                break
        if walk is None:
            raise DataError("random walk kept hitting dead ends; check the network")
        traj = encode(net, walk)
        traj.traj_id = t_idx
        traj.context = ContextFeatures(
            time_slot=int(rng.integers(0, ContextFeatures.TIME_SLOTS)),
            weather=0,
            driver_id=driver,
        )
        corpus.append(traj)
    return corpus


def _walk(net, router, rng, node_ids, length, driver):
    start = node_ids[rng.integers(0, len(node_ids))]
    options = net.out_edges(start)
    if not options:
        return None
    history = [options[rng.integers(0, len(options))].id]
    while len(history) < length:
        nxt = router.next_edge(history, driver)
        if nxt is None:
            return None
        history.append(nxt)
    return history
