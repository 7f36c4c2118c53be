"""Counter-based splittable random streams.

Every particle in the simulation engine owns an independent stream
identified by a single 64-bit value (its "base").  The n-th variate of a
stream is a pure function of (base, n), so particles can be advanced in
any order, in any batch partitioning, with bit-identical results.

The construction is the splitmix64 sequence: the raw 64-bit output at
counter n is mix64(base + n * GOLDEN), where mix64 is the Stafford
variant-13 finalizer.  Stream bases are themselves derived by hashing, so
two streams start at unrelated positions of the underlying sequence;
overlap of two length-m streams has probability about m^2 / 2^64.

Child streams are derived from the parent base and the parent's branch
count, which keeps the whole tree of streams reproducible from the run
seed alone.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

U64 = np.uint64
GOLDEN = U64(0x9E3779B97F4A7C15)
_MIX_A = U64(0xBF58476D1CE4E5B9)
_MIX_B = U64(0x94D049BB133111EB)
# domain-separation tags, arbitrary odd constants
TAG_ROOT = U64(0x8CB92BA72F3D8DD7)
TAG_CHILD = U64(0xD1B54A32D192ED03)
TAG_INIT = U64(0xA24BAED4963EE407)


def mix64(z):
    """Stafford mix13 finalizer; bijective on uint64 (modular arithmetic)."""
    z = np.asarray(z, dtype=U64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> U64(30))) * _MIX_A
        z = (z ^ (z >> U64(27))) * _MIX_B
        return z ^ (z >> U64(31))


def root_bases(seed: int, rep, index):
    """Stream bases for the initial particles of a run.

    `rep` and `index` may be scalars or arrays (broadcast together); the
    result is unique per (seed, rep, index) up to hash collisions.
    """
    s = mix64(U64(seed & 0xFFFFFFFFFFFFFFFF) ^ TAG_ROOT)
    with np.errstate(over="ignore"):
        r = np.asarray(rep, dtype=U64) * GOLDEN
        i = np.asarray(index, dtype=U64) * GOLDEN + U64(1)
    return mix64(mix64(s + r) + i)


def child_base(parent_base, nth_child):
    """Stream base for a particle born as the parent's nth branch (1-based)."""
    with np.errstate(over="ignore"):
        n = np.asarray(nth_child, dtype=U64) * GOLDEN + TAG_CHILD
        return mix64(np.asarray(parent_base, dtype=U64) ^ n)


def raw(base, ctr):
    """64 raw bits at the given counters."""
    with np.errstate(over="ignore"):
        z = np.asarray(base, dtype=U64) + np.asarray(ctr, dtype=U64) * GOLDEN
    return mix64(z)


def uniform(base, ctr):
    """Uniforms in the open interval (0, 1)."""
    bits = raw(base, ctr)
    return ((bits >> U64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)


def normal(base, ctr):
    """Standard normals via the inverse CDF (exact to double precision)."""
    return ndtri(uniform(base, ctr))


def exponential(base, ctr):
    """Unit-rate exponentials."""
    return -np.log(uniform(base, ctr))


class Stream:
    """Sequential view of one counter-based stream.

    Convenience wrapper for scalar/offline use (initial conditions,
    auxiliary draws); the engine manipulates (base, ctr) arrays directly.
    """

    def __init__(self, base):
        self.base = U64(base)
        self.ctr = 0

    def _take(self, n):
        c = np.arange(self.ctr, self.ctr + n, dtype=np.uint64)
        self.ctr += int(n)
        return c

    def uniform(self, n=1):
        return uniform(self.base, self._take(n))

    def normal(self, n=1):
        return normal(self.base, self._take(n))

    def exponential(self, n=1):
        return exponential(self.base, self._take(n))
