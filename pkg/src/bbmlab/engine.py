"""Event-driven simulation of branching Brownian motion with absorption.

Model: particles diffuse with drift -mu, branch binarily at exact
exponential(1) clocks, and are absorbed at the origin.  Optionally a right
barrier at L_A either kills particles (the truncated process whose kill
count per observation interval is the R statistic) or merely records
crossings.

Discretization contract.  Branch times are drawn exactly, and between
events a particle receives a single Gaussian increment; barrier crossings
inside the step are resolved by the Brownian-bridge crossing probability
exp(-2 d0 d1 / dt), which is exact for one barrier at any step size (the
drift cancels for the bridge).  With both barriers active the step is
capped at level^2/16 and only the nearer barrier's correction is applied;
the neglected double-crossing correction is bounded by e^{-8}.

Every particle owns a counter-based random stream (see rng.py) keyed from
the run seed and its birth lineage, so runs are reproducible bit-for-bit
and results do not depend on how the population is partitioned into
processing batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import rng
from .analytics import ModelParams
from .genealogy import GenealogyLog

__all__ = [
    "BarrierMode",
    "Barrier",
    "InitialCondition",
    "SimConfig",
    "HitLog",
    "RunResult",
    "BatchResult",
    "run",
    "run_batch",
    "statistics",
    "sample_stable_profile",
    "stable_profile_cdf",
    "stable_profile_ppf",
]


class BarrierMode(Enum):
    NONE = "none"
    KILL = "kill"
    RECORD = "record"


@dataclass(frozen=True)
class Barrier:
    mode: BarrierMode = BarrierMode.NONE
    level: float | None = None  # defaults to params.L_A when active

    @staticmethod
    def none() -> "Barrier":
        return Barrier(BarrierMode.NONE, None)

    @staticmethod
    def kill_at(level: float | None = None) -> "Barrier":
        return Barrier(BarrierMode.KILL, level)

    @staticmethod
    def record_hits(level: float | None = None) -> "Barrier":
        return Barrier(BarrierMode.RECORD, level)


@dataclass(frozen=True)
class InitialCondition:
    """One of stable_profile(n), point_mass(x, count), explicit(positions)."""

    kind: str
    n: int = 0
    x: float = 0.0
    positions: tuple = ()

    @staticmethod
    def stable_profile(n: int) -> "InitialCondition":
        if n < 1:
            raise ValueError("need at least one particle")
        return InitialCondition("stable_profile", n=n)

    @staticmethod
    def point_mass(x: float, count: int = 1) -> "InitialCondition":
        if x <= 0:
            raise ValueError("initial positions must be positive")
        if count < 1:
            raise ValueError("need at least one particle")
        return InitialCondition("point_mass", n=count, x=x)

    @staticmethod
    def explicit(positions: Sequence[float]) -> "InitialCondition":
        pos = tuple(float(p) for p in positions)
        if len(pos) == 0 or min(pos) <= 0:
            raise ValueError("initial positions must be positive")
        return InitialCondition("explicit", n=len(pos), positions=pos)


@dataclass(frozen=True)
class SimConfig:
    params: ModelParams
    horizon: float
    checkpoint_times: tuple
    init: InitialCondition
    seed: int
    dt_max: float = math.inf
    right_barrier: Barrier = field(default_factory=Barrier.none)
    max_particles: int = 2_000_000

    def __post_init__(self):
        if not self.dt_max > 0:
            raise ValueError("dt_max must be positive")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        cps = tuple(float(t) for t in self.checkpoint_times)
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise ValueError("checkpoint_times must be strictly increasing")
        if cps and (cps[0] < 0 or cps[-1] > self.horizon):
            raise ValueError("checkpoint_times must lie in [0, horizon]")
        if self.max_particles < self.init.n:
            raise ValueError("max_particles below initial count")
        if self.right_barrier.mode is not BarrierMode.NONE:
            if self.barrier_level() <= 0:
                raise ValueError("right barrier level must be positive")

    def barrier_level(self) -> float:
        lvl = self.right_barrier.level
        return float(lvl if lvl is not None else self.params.L_A)

    def grid(self) -> np.ndarray:
        """Checkpoint grid normalized to start at 0 and end at the horizon."""
        cps = [float(t) for t in self.checkpoint_times]
        if not cps or cps[0] > 0.0:
            cps = [0.0] + cps
        if cps[-1] < self.horizon:
            cps = cps + [float(self.horizon)]
        return np.asarray(cps)


@dataclass
class HitLog:
    """Crossing times at the right barrier, binned by checkpoint interval."""

    hit_times: np.ndarray  # sorted
    counts: np.ndarray  # counts[k] = hits in (t_k, t_{k+1}], len = len(grid)-1

    def r_k(self, k: int) -> int:
        """R_k, the count for the k-th interval (1-based, paper indexing)."""
        return int(self.counts[k - 1])


@dataclass
class RunResult:
    grid: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    M: np.ndarray
    R: np.ndarray  # per row: right-barrier events in the interval ending there
    genealogy: GenealogyLog
    hits: HitLog
    extinction_time: float | None
    aborted: bool  # population cap exceeded; trailing rows are unfilled
    n_branch: int
    n_absorbed0: int
    n_killed_right: int


@dataclass
class BatchResult:
    grid: np.ndarray
    Z: np.ndarray  # (reps, len(grid))
    Y: np.ndarray
    M: np.ndarray
    R: np.ndarray  # right-barrier events per interval, R[:, 0] = 0
    A0: np.ndarray  # absorptions at the origin per interval, A0[:, 0] = 0
    flagged: np.ndarray  # reps whose population exceeded the per-rep cap
    n_branch: np.ndarray


# ---------------------------------------------------------------------------
# the stable initial profile


def _profile_antideriv(y, mu, L):
    # integral of e^{-mu s} sin(pi s / L), closed form
    a, b = -mu, math.pi / L
    return np.exp(a * y) * (a * np.sin(b * y) - b * np.cos(b * y)) / (a * a + b * b)


def stable_profile_cdf(y, params: ModelParams):
    """CDF of the density proportional to e^{-mu y} sin(pi y / L) on (0, L)."""
    mu, L = params.mu, params.L
    y = np.clip(np.asarray(y, dtype=float), 0.0, L)
    f0 = _profile_antideriv(0.0, mu, L)
    f1 = _profile_antideriv(L, mu, L)
    out = (_profile_antideriv(y, mu, L) - f0) / (f1 - f0)
    return float(out) if out.ndim == 0 else out


def stable_profile_ppf(u, params: ModelParams):
    """Inverse CDF of the stable profile, exact to ~1e-13 via Newton polish."""
    mu, L = params.mu, params.L
    u = np.asarray(u, dtype=float)
    grid = np.linspace(0.0, L, 4097)
    cdf = stable_profile_cdf(grid, params)
    y = np.interp(u, cdf, grid)
    f0 = _profile_antideriv(0.0, mu, L)
    norm = _profile_antideriv(L, mu, L) - f0
    for _ in range(3):
        pdf = np.exp(-mu * y) * np.sin(np.pi * y / L) / norm
        step = (stable_profile_cdf(y, params) - u) / np.maximum(pdf, 1e-300)
        y = np.clip(y - step, 0.0, L)
    return float(y) if y.ndim == 0 else y


def sample_stable_profile(n: int, params: ModelParams, gen: np.random.Generator):
    """n i.i.d. draws from the stable configuration on (0, L)."""
    return stable_profile_ppf(gen.uniform(size=n), params)


# ---------------------------------------------------------------------------
# statistics


def statistics(positions, params: ModelParams, rep=None, n_reps=1):
    """(Z, Y, M) of a configuration; per replicate when `rep` is given.

    Z = sum e^{mu x} sin(pi x / L) over particles with x <= L,
    Y = sum e^{mu x},  M = particle count.  Accumulation runs in ascending
    particle index within each replicate, so values are bit-reproducible
    and unaffected by how other replicates are interleaved.
    """
    pos = np.asarray(positions, dtype=float)
    mu, L = params.mu, params.L
    emu = np.exp(mu * pos)
    zterm = np.where(pos <= L, emu * np.sin(np.pi * pos / L), 0.0)
    if rep is None:
        rep = np.zeros(pos.shape, dtype=np.int64)
    z = np.bincount(rep, weights=zterm, minlength=n_reps)
    y = np.bincount(rep, weights=emu, minlength=n_reps)
    m = np.bincount(rep, minlength=n_reps).astype(np.int64)
    if n_reps == 1:
        return float(z[0]), float(y[0]), int(m[0])
    return z, y, m


# ---------------------------------------------------------------------------
# population state


class _Pop:
    """Structure-of-arrays particle state.

    anc indexes rows of the previous checkpoint snapshot, not live rows,
    so it survives compaction untouched.
    """

    __slots__ = ("pos", "t", "nb", "base", "ctr", "nbr", "rep", "anc")

    def __init__(self, pos, t, nb, base, ctr, nbr, rep, anc):
        self.pos, self.t, self.nb = pos, t, nb
        self.base, self.ctr, self.nbr = base, ctr, nbr
        self.rep, self.anc = rep, anc

    @property
    def n(self):
        return self.pos.size

    def keep(self, mask):
        for name in self.__slots__:
            setattr(self, name, getattr(self, name)[mask])

    def append(self, other: "_Pop"):
        for name in self.__slots__:
            setattr(
                self, name, np.concatenate([getattr(self, name), getattr(other, name)])
            )


def _init_pop(cfg: SimConfig, n_reps: int, rep_offset: int = 0) -> _Pop:
    """Initial population; stream bases are keyed by the global replicate id."""
    ic = cfg.init
    n0 = ic.n
    rep = np.repeat(np.arange(n_reps, dtype=np.int64), n0)
    idx = np.tile(np.arange(n0, dtype=np.int64), n_reps)
    base = rng.root_bases(cfg.seed, rep + rep_offset, idx)
    # root counter layout: slot 0 position uniform, slot 1 first branch time
    u_pos = rng.uniform(base, np.zeros(base.size, dtype=np.uint64))
    if ic.kind == "stable_profile":
        pos = stable_profile_ppf(u_pos, cfg.params)
    elif ic.kind == "point_mass":
        pos = np.full(base.size, float(ic.x))
    elif ic.kind == "explicit":
        pos = np.tile(np.asarray(ic.positions, dtype=float), n_reps)
    else:
        raise ValueError(f"unknown initial condition {ic.kind!r}")
    if cfg.right_barrier.mode is BarrierMode.KILL:
        if (np.asarray(pos) >= cfg.barrier_level()).any():
            raise ValueError("initial positions must lie below the killing level")
    nb = rng.exponential(base, np.ones(base.size, dtype=np.uint64))
    return _Pop(
        pos=np.asarray(pos, dtype=float),
        t=np.zeros(base.size),
        nb=nb,
        base=base,
        ctr=np.full(base.size, 2, dtype=np.uint64),
        nbr=np.zeros(base.size, dtype=np.uint64),
        rep=rep,
        anc=np.arange(base.size, dtype=np.int64),
    )


class _IntervalTallies:
    def __init__(self, n_reps):
        self.hits_t = []
        self.hits_rep = []
        self.a0 = np.zeros(n_reps, dtype=np.int64)
        self.killR = np.zeros(n_reps, dtype=np.int64)
        self.branch = np.zeros(n_reps, dtype=np.int64)


def _advance_interval(pop: _Pop, tb: float, cfg: SimConfig, n_reps: int):
    """Advance every particle from its current time to tb.

    Particles move asynchronously, each to its own next event; this is
    valid because they do not interact between checkpoints.  Returns the
    interval tallies and an aborted flag.
    """
    mu = cfg.params.mu
    mode = cfg.right_barrier.mode
    b = cfg.barrier_level() if mode is not BarrierMode.NONE else math.inf
    cap = cfg.dt_max
    if mode is not BarrierMode.NONE:
        cap = min(cap, b * b / 16.0)
    tal = _IntervalTallies(n_reps)
    one = np.uint64(1)

    while True:
        act = np.flatnonzero(pop.t < tb)
        if act.size == 0:
            break
        t0 = pop.t[act]
        nb = pop.nb[act]
        te = np.minimum(nb, tb)
        if np.isfinite(cap):
            te = np.minimum(te, t0 + cap)
        dt = te - t0
        base = pop.base[act]
        ctr = pop.ctr[act]
        x0 = pop.pos[act]

        z = rng.normal(base, ctr)
        u_left = rng.uniform(base, ctr + one)
        if mode is not BarrierMode.NONE:
            u_right = rng.uniform(base, ctr + np.uint64(2))
            pop.ctr[act] = ctr + np.uint64(3)
        else:
            u_right = None
            pop.ctr[act] = ctr + np.uint64(2)

        x1 = x0 - mu * dt + np.sqrt(dt) * z
        with np.errstate(over="ignore", divide="ignore"):
            dead = x1 <= 0.0
            if mode is BarrierMode.NONE:
                p_l = np.exp(-2.0 * x0 * np.maximum(x1, 0.0) / dt)
                dead |= ~dead & (u_left < p_l)
                hit = np.zeros(act.size, dtype=bool)
            else:
                above = x1 >= b
                mid = ~dead & ~above
                near_left = (x0 + x1) <= (2.0 * b - (x0 + x1))
                p_l = np.exp(-2.0 * x0 * np.maximum(x1, 0.0) / dt)
                p_r = np.exp(
                    -2.0 * np.maximum(b - x0, 0.0) * np.maximum(b - x1, 0.0) / dt
                )
                dead |= mid & near_left & (u_left < p_l)
                hit = above | (mid & ~near_left & (u_right < p_r))
                if mode is BarrierMode.RECORD:
                    hit &= x0 < b  # record upcrossings from below only
                else:
                    hit &= ~dead

        pop.pos[act] = x1
        pop.t[act] = te

        if hit.any():
            tal.hits_t.append(te[hit])
            tal.hits_rep.append(pop.rep[act[hit]])
            if mode is BarrierMode.KILL:
                np.add.at(tal.killR, pop.rep[act[hit]], 1)
        if dead.any():
            np.add.at(tal.a0, pop.rep[act[dead]], 1)

        removed = dead.copy()
        if mode is BarrierMode.KILL:
            removed |= hit
        do_branch = ~removed & (nb == te) & (te < tb)

        children = None
        if do_branch.any():
            rows = act[do_branch]
            pop.nbr[rows] += one
            c = pop.ctr[rows]
            pop.nb[rows] = pop.t[rows] + rng.exponential(pop.base[rows], c)
            pop.ctr[rows] = c + one
            cbase = rng.child_base(pop.base[rows], pop.nbr[rows])
            cnb = pop.t[rows] + rng.exponential(cbase, np.zeros(rows.size, np.uint64))
            children = _Pop(
                pos=pop.pos[rows],
                t=pop.t[rows],
                nb=cnb,
                base=cbase,
                ctr=np.ones(rows.size, dtype=np.uint64),
                nbr=np.zeros(rows.size, dtype=np.uint64),
                rep=pop.rep[rows],
                anc=pop.anc[rows],
            )
            np.add.at(tal.branch, pop.rep[rows], 1)

        if removed.any():
            full = np.ones(pop.n, dtype=bool)
            full[act[removed]] = False
            pop.keep(full)
        if children is not None:
            pop.append(children)
        if pop.n > cfg.max_particles:
            return tal, True
    return tal, False


# ---------------------------------------------------------------------------
# drivers


def run(cfg: SimConfig) -> RunResult:
    """Simulate one run, recording genealogy at every checkpoint.

    Deterministic given (seed, config): particles are processed in index
    order, offspring appended, and every random draw comes from the owning
    particle's counter stream.
    """
    grid = cfg.grid()
    pop = _init_pop(cfg, 1)
    K = len(grid)
    Z, Y = np.zeros(K), np.zeros(K)
    M = np.zeros(K, dtype=np.int64)
    R = np.zeros(K, dtype=np.int64)
    glog = GenealogyLog()
    ht_buf = []
    nbranch = nabs = nkill = 0
    extinction = None
    aborted = False

    for k in range(K):
        if k > 0:
            tal, aborted = _advance_interval(pop, grid[k], cfg, 1)
            ht_buf += tal.hits_t
            nbranch += int(tal.branch[0])
            nabs += int(tal.a0[0])
            nkill += int(tal.killR[0])
            if cfg.right_barrier.mode is BarrierMode.KILL:
                R[k] = int(tal.killR[0])
            else:
                R[k] = sum(int(x.size) for x in tal.hits_t)
            if aborted:
                break
        z, y, m = statistics(pop.pos, cfg.params)
        Z[k], Y[k], M[k] = z, y, m
        v = rng.uniform(pop.base, pop.ctr)
        pop.ctr = pop.ctr + np.uint64(1)
        glog.add_checkpoint(
            time=float(grid[k]),
            positions=pop.pos.copy(),
            parents=pop.anc.copy() if k > 0 else np.full(pop.n, -1, dtype=np.int64),
            uniforms=v,
            ids=pop.base.copy(),
        )
        pop.anc = np.arange(pop.n, dtype=np.int64)
        if pop.n == 0 and extinction is None:
            extinction = float(grid[k])

    ht = np.sort(np.concatenate(ht_buf)) if ht_buf else np.zeros(0)
    counts = np.histogram(ht, bins=grid)[0].astype(np.int64)
    hits = HitLog(hit_times=ht, counts=counts)
    return RunResult(
        grid=grid,
        Z=Z,
        Y=Y,
        M=M,
        R=R,
        genealogy=glog,
        hits=hits,
        extinction_time=extinction,
        aborted=aborted,
        n_branch=nbranch,
        n_absorbed0=nabs,
        n_killed_right=nkill,
    )


def run_batch(
    cfg: SimConfig, n_reps: int, rep_cap: int | None = None, chunk: int | None = None
) -> BatchResult:
    """Independent replicates of the configured run, vectorized together.

    Per-replicate outputs are identical under any `chunk` splitting, since
    each particle's randomness is a function of (seed, replicate, lineage)
    only.  Genealogy is not recorded here; use `run` for that.
    """
    if chunk is None or chunk >= n_reps:
        return _run_batch_chunk(cfg, 0, n_reps, rep_cap)
    parts = []
    for lo in range(0, n_reps, chunk):
        parts.append(_run_batch_chunk(cfg, lo, min(chunk, n_reps - lo), rep_cap))
    return BatchResult(
        grid=parts[0].grid,
        Z=np.vstack([p.Z for p in parts]),
        Y=np.vstack([p.Y for p in parts]),
        M=np.vstack([p.M for p in parts]),
        R=np.vstack([p.R for p in parts]),
        A0=np.vstack([p.A0 for p in parts]),
        flagged=np.concatenate([p.flagged for p in parts]),
        n_branch=np.concatenate([p.n_branch for p in parts]),
    )


def _run_batch_chunk(cfg, rep_lo, n_reps, rep_cap):
    grid = cfg.grid()
    K = len(grid)
    pop = _init_pop(cfg, n_reps, rep_offset=rep_lo)
    Z, Y = np.zeros((n_reps, K)), np.zeros((n_reps, K))
    M = np.zeros((n_reps, K), dtype=np.int64)
    R = np.zeros((n_reps, K), dtype=np.int64)
    A0 = np.zeros((n_reps, K), dtype=np.int64)
    flagged = np.zeros(n_reps, dtype=bool)
    nbranch = np.zeros(n_reps, dtype=np.int64)

    for k in range(K):
        if k > 0:
            tal, aborted = _advance_interval(pop, grid[k], cfg, n_reps)
            if aborted:
                raise MemoryError(
                    "total population exceeded max_particles; use rep_cap or chunk"
                )
            nbranch += tal.branch
            A0[:, k] = tal.a0
            if cfg.right_barrier.mode is BarrierMode.KILL:
                R[:, k] = tal.killR
            elif tal.hits_rep:
                R[:, k] = np.bincount(np.concatenate(tal.hits_rep), minlength=n_reps)
            if rep_cap is not None:
                counts = np.bincount(pop.rep, minlength=n_reps)
                over = counts > rep_cap
                if over.any():
                    flagged |= over
                    pop.keep(~over[pop.rep])
        z, y, m = statistics(pop.pos, cfg.params, rep=pop.rep, n_reps=n_reps)
        Z[:, k], Y[:, k], M[:, k] = z, y, m
        pop.ctr = pop.ctr + np.uint64(1)  # keep stream layout aligned with run()
    return BatchResult(
        grid=grid, Z=Z, Y=Y, M=M, R=R, A0=A0, flagged=flagged, n_branch=nbranch
    )
