"""Evaluation metrics over edge sequences.

All three metrics compare predicted and true edge-id sequences per test
window: normalized average edit distance (DE), positionwise average
match ratio (AMR) and the at-least-k match ratios MR(k). Predictions may
be shorter than the truth (truncated decodes); missing positions count
as mismatches and show up as insertions in the edit distance.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DataError


def edit_distance(a, b):
    """Levenshtein distance (unit-cost insert/delete/substitute)."""
    a = list(a)
    b = list(b)
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    cur = [0] * (len(b) + 1)
    for i, sym_a in enumerate(a, start=1):
        cur[0] = i
        for j, sym_b in enumerate(b, start=1):
            cost = 0 if sym_a == sym_b else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev, cur = cur, prev
    return prev[len(b)]


def match_count(pred, truth):
    """Positionwise matches; positions missing from pred count as misses."""
    return sum(1 for p, t in zip(pred, truth) if p == t)


@dataclass
class MetricsReport:
    de: float            # percent
    amr: float           # percent
    mr: list             # percents for k = 1..l_out
    count: int           # number of trajectories
    l_out: int

    def table(self):
        lines = [
            f"trajectories: {self.count}",
            f"DE:  {self.de:.4f}",
            f"AMR: {self.amr:.4f}",
        ]
        for k, v in enumerate(self.mr, start=1):
            lines.append(f"MR({k}): {v:.4f}")
        return "\n".join(lines)

    def csv_header(self):
        mr_cols = ",".join(f"MR{k}" for k in range(1, self.l_out + 1))
        return f"count,DE,AMR,{mr_cols}"

    def csv_row(self):
        mr_vals = ",".join(f"{v:.6f}" for v in self.mr)
        return f"{self.count},{self.de:.6f},{self.amr:.6f},{mr_vals}"


def compute_metrics(pred_seqs, truth_seqs):
    """MetricsReport over aligned lists of predicted/true edge sequences."""
    if len(pred_seqs) != len(truth_seqs):
        raise DataError(
            f"prediction count {len(pred_seqs)} != truth count {len(truth_seqs)}"
        )
    if not truth_seqs:
        raise DataError("cannot compute metrics over an empty corpus")
    lengths = {len(t) for t in truth_seqs}
    if len(lengths) != 1:
        raise DataError(f"truth sequences have mixed lengths: {sorted(lengths)}")
    l_out = lengths.pop()
    if l_out == 0:
        raise DataError("truth sequences are empty")

    count = len(truth_seqs)
    edit_total = 0
    match_total = 0
    at_least = [0] * (l_out + 1)
    for pred, truth in zip(pred_seqs, truth_seqs):
        edit_total += edit_distance(pred, truth)
        m = match_count(pred, truth)
        match_total += m
        for k in range(1, m + 1):
            at_least[k] += 1

    de = 100.0 * edit_total / (count * l_out)
    amr = 100.0 * match_total / (count * l_out)
    mr = [100.0 * at_least[k] / count for k in range(1, l_out + 1)]
    return MetricsReport(de=de, amr=amr, mr=mr, count=count, l_out=l_out)


def per_trajectory_detail(ids, pred_seqs, truth_seqs):
    """Rows of (id, edit distance, match count) for a detail file."""
    rows = []
    for tid, pred, truth in zip(ids, pred_seqs, truth_seqs):
        rows.append((tid, edit_distance(pred, truth), match_count(pred, truth)))
    return rows
