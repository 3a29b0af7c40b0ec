"""First-order Markov chain baseline over road segments.

Transition counts are collected between consecutive edges of the
training corpus. Prediction rolls the chain forward greedily: at each
step take the most frequent successor of the current edge (ties broken
by ascending edge id). When the current edge was never seen or has no
counted successor, fall back to the straight-ahead heuristic: take the
outgoing edge of the current node whose heading deviates least from the
current edge's heading. A node without outgoing edges truncates the
prediction with a dead-end flag.
"""

from __future__ import annotations

from .codec import circular_distance
from .errors import DataError


class MarkovChainPredictor:
    def __init__(self, net):
        self.net = net
        self.counts = {}

    def fit(self, edge_seqs):
        for seq in edge_seqs:
            for cur, nxt in zip(seq, seq[1:]):
                bucket = self.counts.setdefault(cur, {})
                bucket[nxt] = bucket.get(nxt, 0) + 1
        return self

    def _counted_successor(self, edge_id):
        bucket = self.counts.get(edge_id)
        if not bucket:
            return None
        best = None
        best_count = -1
        for nxt in sorted(bucket):
            if bucket[nxt] > best_count:
                best = nxt
                best_count = bucket[nxt]
        return best

    def _straight_ahead(self, edge_id):
        cur = self.net.edge(edge_id)
        options = self.net.out_edges(cur.target)
        if not options:
            return None
        best = None
        best_dev = None
        for e in options:
            dev = circular_distance(e.heading, cur.heading)
            if best_dev is None or dev < best_dev:
                best = e.id
                best_dev = dev
        return best

    def predict(self, input_edges, l_out):
        """Greedy l_out-step continuation of the last input edge.

        Returns (edge ids, dead_end flag); the list is shorter than
        l_out only when a dead end truncated it.
        """
        if not input_edges:
            raise DataError("markov prediction needs at least one input edge")
        cur = input_edges[-1]
        out = []
        dead_end = False
        for _ in range(l_out):
            nxt = self._counted_successor(cur)
            if nxt is None:
                nxt = self._straight_ahead(cur)
            if nxt is None:
                dead_end = True
                break
            out.append(nxt)
            cur = nxt
        return out, dead_end
