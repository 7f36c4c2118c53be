"""Continuous-time samplers for Kingman and Bolthausen-Sznitman coalescents.

With b blocks, a k-merger (2 <= k <= b) occurs at aggregate rate
C(b, k) * lambda_{b,k}; the waiting time to the next event is exponential
with the total rate, the merger size is chosen proportionally to the
aggregate rates, and the merging k-set is uniform among k-subsets.  Rates
come from analytics.lambda_bk, exact rationals for b <= 64.

For the uniform measure (Bolthausen-Sznitman) the total rate from b blocks
is b - 1; for Kingman it is C(b, 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .analytics import lambda_bk
from .genealogy import Partition

__all__ = [
    "CoalescentPath",
    "merge_rates",
    "sample_path",
    "finite_dim_marginal",
    "restrict_path",
]

KINDS = ("kingman", "bolthausen_sznitman")


@dataclass
class CoalescentPath:
    """One realization: events are (time, tuple of merged block labels).

    Block labels are the smallest element of each block at the time of the
    event (0-based); after a merger the surviving block keeps the smallest
    label among the merged ones.
    """

    n: int
    events: list = field(default_factory=list)

    def partition_at(self, s: float) -> Partition:
        """State after replaying all events with time <= s."""
        block_of = list(range(self.n))
        for t, labels in self.events:
            if t > s:
                break
            target = min(labels)
            lab_set = set(labels)
            for i in range(self.n):
                if block_of[i] in lab_set:
                    block_of[i] = target
        return Partition.from_labels(block_of)

    def block_count_at(self, s: float) -> int:
        b = self.n
        for t, labels in self.events:
            if t > s:
                break
            b -= len(labels) - 1
        return b

    def to_csv(self) -> str:
        lines = ["time,k,block_ids"]
        for t, labels in self.events:
            ids = ";".join(str(x) for x in labels)
            lines.append(f"{t:.17g},{len(labels)},{ids}")
        return "\n".join(lines) + "\n"


@lru_cache(maxsize=None)
def merge_rates(b: int, kind: str) -> np.ndarray:
    """Aggregate rates C(b,k) lambda_{b,k} for k = 2..b (index 0 is k=2)."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    measure = "uniform" if kind == "bolthausen_sznitman" else "point-mass-at-0"
    out = np.empty(b - 1)
    from math import comb

    for k in range(2, b + 1):
        out[k - 2] = float(comb(b, k) * lambda_bk(b, k, measure))
    return out


def sample_path(n: int, horizon: float, kind: str, gen: np.random.Generator) -> CoalescentPath:
    """Gillespie simulation until the horizon or a single block remains."""
    if n < 1:
        raise ValueError("n must be at least 1")
    path = CoalescentPath(n=n)
    labels = list(range(n))  # active block labels
    t = 0.0
    while len(labels) > 1:
        b = len(labels)
        rates = merge_rates(b, kind)
        total = float(rates.sum())
        t += gen.exponential(1.0 / total)
        if t > horizon:
            break
        k = 2 + int(gen.choice(rates.size, p=rates / total))
        # uniform k-subset by partial Fisher-Yates on the label list
        for i in range(k):
            j = int(gen.integers(i, b))
            labels[i], labels[j] = labels[j], labels[i]
        merged = sorted(labels[:k])
        path.events.append((t, tuple(merged)))
        labels = [min(merged)] + labels[k:]
    return path


def finite_dim_marginal(
    n: int, times, kind: str, replicates: int, gen: np.random.Generator
):
    """Monte Carlo marginals of the block-count process.

    Returns a dict with 'times', 'block_counts' (replicates x times) and
    'pair_coalesced', the indicator that labels 0 and 1 share a block.
    """
    times = np.asarray(sorted(times), dtype=float)
    horizon = float(times[-1]) if times.size else 0.0
    counts = np.zeros((replicates, times.size), dtype=np.int64)
    pair = np.zeros((replicates, times.size), dtype=bool)
    for r in range(replicates):
        path = sample_path(n, horizon, kind, gen)
        for m, s in enumerate(times):
            counts[r, m] = path.block_count_at(s)
            if n >= 2:
                p = path.partition_at(s)
                pair[r, m] = p.block_of[0] == p.block_of[1]
    return {"times": times, "block_counts": counts, "pair_coalesced": pair}


def restrict_path(path: CoalescentPath, m: int) -> CoalescentPath:
    """Restriction of a path on {0..n-1} to the labels {0..m-1}.

    Events whose merged blocks contain fewer than two of the restricted
    blocks disappear; the law of the result is the same coalescent on m
    labels (sampling consistency).
    """
    if not 1 <= m <= path.n:
        raise ValueError("m out of range")
    out = CoalescentPath(n=m)
    # block_of[i] tracks the label of i's block in the FULL path
    block_of = list(range(m))
    for t, labels in path.events:
        lab_set = set(labels)
        groups = {}
        for i in range(m):
            if block_of[i] in lab_set:
                groups.setdefault(block_of[i], []).append(i)
        if len(groups) >= 2:
            out.events.append((t, tuple(sorted(min(g) for g in groups.values()))))
        if groups:
            new_label = min(labels)
            for g in groups.values():
                for i in g:
                    block_of[i] = new_label
    return out
