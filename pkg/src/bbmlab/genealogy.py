"""Ancestral partitions, particle weights, and discrete bridges.

A GenealogyLog stores, for each checkpoint time t_k, the particle
positions, the index of each particle's ancestor at t_{k-1}, a per-particle
uniform label, and a stable id.  Particles at a checkpoint are ordered
lexicographically: by the lexicographic rank of their ancestor, then by
their own uniform.  Because this order is hereditary, the descendants (at
any later checkpoint) of a lexicographic prefix of ancestors form a
lexicographic prefix themselves; all bridge values below are prefix sums
read off shared cumulative-weight arrays, which is what makes the cocycle
identities hold bit-exactly in floating point.

Weights: at a non-terminal checkpoint a particle at x carries weight
e^{mu x} sin(pi x / L) 1{x <= L} normalized by their sum (the Z statistic);
at the terminal checkpoint all particles weigh 1/M.

Equality comparisons of cumulative coordinates use a tie tolerance of
2^-40, far below any legitimate gap between distinct breakpoints at the
population sizes this code handles, but wide enough to absorb the few-ulp
noise of renormalized weight sums.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TIE_EPS",
    "GenealogyLog",
    "Partition",
    "Bridge",
    "ancestral_partition",
    "assign_weights",
    "quantile_index",
    "discrete_bridge",
    "bridge_inverse",
    "partition_from_bridge",
    "compose_bridges",
]

TIE_EPS = 2.0 ** -40


# ---------------------------------------------------------------------------
# partitions


@dataclass(frozen=True)
class Partition:
    """Exchangeable partition of {0..n-1} in canonical block order.

    block_of[i] is the id of i's block; ids are contiguous from 0 and
    ordered by each block's smallest element.
    """

    block_of: tuple

    @property
    def n(self) -> int:
        return len(self.block_of)

    @property
    def n_blocks(self) -> int:
        return max(self.block_of) + 1 if self.block_of else 0

    @staticmethod
    def from_labels(labels) -> "Partition":
        """Canonicalize arbitrary hashable labels into a Partition."""
        seen = {}
        out = []
        for lab in labels:
            if lab not in seen:
                seen[lab] = len(seen)
            out.append(seen[lab])
        return Partition(block_of=tuple(out))

    @staticmethod
    def singletons(n: int) -> "Partition":
        return Partition(block_of=tuple(range(n)))

    def blocks(self):
        out = [[] for _ in range(self.n_blocks)]
        for i, b in enumerate(self.block_of):
            out[b].append(i)
        return out

    def refines(self, other: "Partition") -> bool:
        """True if every block of self lies inside a block of other."""
        if self.n != other.n:
            raise ValueError("partition sizes differ")
        rep = {}
        for i, b in enumerate(self.block_of):
            ob = other.block_of[i]
            if rep.setdefault(b, ob) != ob:
                return False
        return True

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "blocks": self.blocks()})

    @staticmethod
    def from_json(s: str) -> "Partition":
        d = json.loads(s)
        block_of = [0] * d["n"]
        for b, members in enumerate(d["blocks"]):
            for i in members:
                block_of[i] = b
        return Partition(block_of=tuple(block_of))


# ---------------------------------------------------------------------------
# genealogy log


@dataclass
class GenealogyLog:
    """Checkpointed ancestry of one run."""

    times: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    parents: list = field(default_factory=list)  # row index at previous checkpoint
    uniforms: list = field(default_factory=list)
    ids: list = field(default_factory=list)
    _lex_rank: list = field(default_factory=list, repr=False)

    @property
    def n_checkpoints(self) -> int:
        return len(self.times)

    def add_checkpoint(self, time, positions, parents, uniforms, ids):
        self.times.append(float(time))
        self.positions.append(np.asarray(positions, dtype=float))
        self.parents.append(np.asarray(parents, dtype=np.int64))
        self.uniforms.append(np.asarray(uniforms, dtype=float))
        self.ids.append(np.asarray(ids, dtype=np.uint64))
        self._lex_rank.append(None)

    def size(self, k: int) -> int:
        return self.positions[k].size

    def checkpoint_index(self, t: float) -> int:
        for k, tk in enumerate(self.times):
            if abs(tk - t) <= 1e-9 * max(1.0, abs(tk)):
                return k
        raise ValueError(f"{t} is not a checkpoint time of this log")

    def lex_rank(self, k: int) -> np.ndarray:
        """Rank of each row at checkpoint k in the lexicographic label order.

        Level 0 orders by the label uniform alone; level k orders by the
        ancestor's rank at k-1, then the own uniform.
        """
        if self._lex_rank[k] is None:
            v = self.uniforms[k]
            if k == 0:
                order = np.argsort(v, kind="stable")
            else:
                parent_rank = self.lex_rank(k - 1)[self.parents[k]]
                order = np.lexsort((v, parent_rank))
            rank = np.empty(v.size, dtype=np.int64)
            rank[order] = np.arange(v.size)
            self._lex_rank[k] = rank
        return self._lex_rank[k]

    def lex_order(self, k: int) -> np.ndarray:
        """Row indices at checkpoint k sorted lexicographically."""
        rank = self.lex_rank(k)
        order = np.empty(rank.size, dtype=np.int64)
        order[rank] = np.arange(rank.size)
        return order

    def ancestor_rows(self, k: int, j: int, rows=None) -> np.ndarray:
        """Rows at checkpoint j of the ancestors of `rows` at checkpoint k."""
        if not 0 <= j <= k < self.n_checkpoints:
            raise ValueError("need 0 <= j <= k < number of checkpoints")
        cur = (
            np.arange(self.size(k), dtype=np.int64)
            if rows is None
            else np.asarray(rows, dtype=np.int64)
        )
        if (cur < 0).any() or (cur >= self.size(k)).any():
            raise ValueError("unknown particle rows")
        for lvl in range(k, j, -1):
            cur = self.parents[lvl][cur]
        return cur

    def to_json(self) -> str:
        payload = {
            "times": self.times,
            "checkpoints": [
                {
                    "ids": [int(i) for i in self.ids[k]],
                    "parents": self.parents[k].tolist(),
                    "positions": self.positions[k].tolist(),
                    "uniforms": self.uniforms[k].tolist(),
                }
                for k in range(self.n_checkpoints)
            ],
        }
        return json.dumps(payload)

    @staticmethod
    def from_json(s: str) -> "GenealogyLog":
        d = json.loads(s)
        log = GenealogyLog()
        for t, cp in zip(d["times"], d["checkpoints"]):
            log.add_checkpoint(
                time=t,
                positions=cp["positions"],
                parents=cp["parents"],
                uniforms=cp["uniforms"],
                ids=np.array(cp["ids"], dtype=np.uint64),
            )
        return log


def ancestral_partition(log: GenealogyLog, sample_rows, t: float, s_back: float) -> Partition:
    """Partition of the sample by shared ancestor at time t - s_back.

    Both t and t - s_back must be checkpoint times; sample_rows are row
    indices into the checkpoint at time t.
    """
    k = log.checkpoint_index(t)
    j = log.checkpoint_index(t - s_back)
    anc = log.ancestor_rows(k, j, sample_rows)
    return Partition.from_labels(anc.tolist())


# ---------------------------------------------------------------------------
# weights and bridges


def assign_weights(log: GenealogyLog, j: int, params, is_terminal=None) -> np.ndarray:
    """Particle weights at checkpoint j, in lexicographic order.

    Non-terminal: w(i) = e^{mu x} sin(pi x/L) 1{x <= L} / Z; terminal: 1/M.
    Raises if the non-terminal normalization Z vanishes.
    """
    if is_terminal is None:
        is_terminal = j == log.n_checkpoints - 1
    m = log.size(j)
    if m == 0:
        raise ValueError("empty generation")
    order = log.lex_order(j)
    if is_terminal:
        return np.full(m, 1.0 / m)
    x = log.positions[j][order]
    w = np.where(x <= params.L, np.exp(params.mu * x) * np.sin(np.pi * x / params.L), 0.0)
    total = float(np.sum(w))
    if total <= 0.0:
        raise ValueError("degenerate population: Z = 0 at a non-terminal checkpoint")
    return w / total


def quantile_index(y: float, weights) -> int:
    """Largest I with w_1 + ... + w_I <= y; 0 when even w_1 exceeds y."""
    cum = np.cumsum(np.asarray(weights, dtype=float))
    return int(np.searchsorted(cum, y + TIE_EPS, side="left"))


@dataclass(frozen=True)
class Bridge:
    """Right-continuous nondecreasing step function [0,1] -> [0,1].

    B(y) = vs[i] for the largest i with xs[i] <= y, and 0 before xs[0].
    The flag `identity` marks the exceptional continuous bridge B(y) = y
    (used for zero-length flow intervals).
    """

    xs: np.ndarray
    vs: np.ndarray
    identity: bool = False

    def __post_init__(self):
        if self.identity:
            return
        xs, vs = self.xs, self.vs
        if xs.size != vs.size or xs.size == 0:
            raise ValueError("breakpoints and values must align and be nonempty")
        if (np.diff(xs) < 0).any() or (np.diff(vs) < -TIE_EPS).any():
            raise ValueError("bridge must be nondecreasing")
        if not (abs(vs[-1] - 1.0) <= 1e-9):
            raise ValueError("bridge must reach 1 at its last breakpoint")

    @staticmethod
    def identity_bridge() -> "Bridge":
        return Bridge(xs=np.array([1.0]), vs=np.array([1.0]), identity=True)

    def value(self, y):
        if self.identity:
            out = np.clip(np.asarray(y, dtype=float), 0.0, 1.0)
            return float(out) if out.ndim == 0 else out
        y = np.asarray(y, dtype=float)
        idx = np.searchsorted(self.xs, y + TIE_EPS, side="left")
        padded = np.concatenate([[0.0], self.vs])
        out = padded[idx]
        return float(out) if out.ndim == 0 else out

    def inverse(self, u):
        """B^{-1}(u) = inf{s : B(s) >= u}, evaluated on the breakpoints."""
        if self.identity:
            out = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
            return float(out) if out.ndim == 0 else out
        u = np.asarray(u, dtype=float)
        idx = np.searchsorted(self.vs, u - TIE_EPS, side="left")
        padded_x = np.concatenate([self.xs, [1.0]])
        out = np.where(u <= TIE_EPS, 0.0, padded_x[idx])
        return float(out) if out.ndim == 0 else out

    def gaps(self) -> np.ndarray:
        """Jump sizes of the bridge, in breakpoint order."""
        if self.identity:
            return np.zeros(0)
        return np.diff(np.concatenate([[0.0], self.vs]))

    def to_csv(self) -> str:
        lines = ["x,value"]
        if self.identity:
            lines += ["0,0", "1,1"]
        else:
            lines += [f"{x:.17g},{v:.17g}" for x, v in zip(self.xs, self.vs)]
        return "\n".join(lines) + "\n"


def compose_bridges(outer: Bridge, inner: Bridge) -> Bridge:
    """The bridge y -> outer(inner(y))."""
    if inner.identity:
        return outer
    if outer.identity:
        return inner
    return Bridge(xs=inner.xs, vs=outer.value(inner.vs))


def bridge_inverse(bridge: Bridge, u):
    return bridge.inverse(u)


def discrete_bridge(log: GenealogyLog, j: int, k: int, params) -> Bridge:
    """The discrete bridge from checkpoint j to checkpoint k.

    B(y) is the total weight at k of the descendants of the first L_j(y)
    particles at j (in lexicographic order).  Both coordinates are prefix
    sums of the respective weight vectors, so composing bridges over
    nested intervals reproduces the direct bridge exactly.
    """
    if not 0 <= j < k < log.n_checkpoints:
        raise ValueError("need checkpoint indices 0 <= j < k < n_checkpoints")
    wj = assign_weights(log, j, params)
    wk = assign_weights(log, k, params)
    xs = np.cumsum(wj)
    cumk = np.cumsum(wk)
    anc = log.ancestor_rows(k, j)  # per row at k
    anc_lex = log.lex_rank(j)[anc][log.lex_order(k)]  # in lex order of k
    # descendants of a lex prefix at j are a lex prefix at k
    hi = np.searchsorted(anc_lex, np.arange(wj.size), side="right")
    vs = np.where(hi > 0, cumk[np.maximum(hi - 1, 0)], 0.0)
    return Bridge(xs=xs, vs=vs)


def partition_from_bridge(bridge: Bridge, uniforms) -> Partition:
    """Group i ~ j iff B^{-1}(U_i) = B^{-1}(U_j) (exact breakpoint equality)."""
    vals = bridge.inverse(np.asarray(uniforms, dtype=float))
    return Partition.from_labels(np.atleast_1d(vals).tolist())
