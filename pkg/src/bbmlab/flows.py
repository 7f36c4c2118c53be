"""The CSBP with Psi(u) = a u + b u log u via its flow of stable subordinators.

For this branching mechanism the Laplace exponent flow is

    u_dt(lambda) = lambda^alpha * exp(a (alpha - 1)/b),   alpha = e^{-b dt},

so the subordinator S^{(s,t)} is alpha-stable with index alpha = e^{-b(t-s)}
and scale c = exp(a (alpha - 1)/b).  A mass increment over dt started from
x is (x c)^{1/alpha} times a standard positive stable draw, the composition
of increments over consecutive intervals is the CSBP, and the normalized
flow

    B_{s,t}(y) = S^{(s,t)}(y * S^{(0,s)}(z)) / S^{(0,t)}(z)

is a bridge whose gap lengths follow the Poisson-Dirichlet law PD(alpha, 0).

Everything is computed in log space: at the paper's scale b = 2 pi^2 the
index alpha = e^{-b t} collapses so fast that the mass performs excursions
far beyond float64 range (Z(1) from Z(0) = 1 is alpha-stable with
alpha ~ 3e-9, which exceeds 1e308 with probability near one), while its
logarithm stays perfectly representable.  Plain-value wrappers are
provided for the moderate-parameter regime.

Bridges are materialized from the J largest jumps of the subordinator; the
mean mass of the untracked jumps (conditional on the smallest tracked
jump) is reported as a residual fraction.

The duality with the Bolthausen-Sznitman coalescent maps a look-back of
csbp-time dt to a coalescent duration s; the conversion factor is exposed
as `coalescent_clock_rate` and can be calibrated empirically with
`calibrate_clock_rate` (pair-coalescence matching gives s = b dt).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .analytics import CsbpParams
from .genealogy import Bridge, compose_bridges, partition_from_bridge

__all__ = [
    "StableSpec",
    "FlowBridge",
    "sample_positive_stable",
    "sample_positive_stable_log",
    "sample_S_increment",
    "sample_S_increment_log",
    "csbp_trajectory",
    "csbp_log_trajectory",
    "bridge_from_flow",
    "sample_pd_gaps_stick",
    "bsz_partitions_from_flow",
    "calibrate_clock_rate",
    "DEFAULT_CLOCK_RATE",
]

DEFAULT_CLOCK_RATE = 2.0 * math.pi
DEFAULT_GAP_COUNT = 4096


@dataclass(frozen=True)
class StableSpec:
    """One-sided stable law with Laplace transform exp(-scale * lambda^alpha)."""

    alpha: float
    scale: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.scale <= 0:
            raise ValueError("scale must be positive")


def sample_positive_stable_log(alpha: float, gen: np.random.Generator, size=None):
    """log of a standard positive stable draw, E[exp(-lam X)] = exp(-lam^alpha).

    Kanter's representation: with U uniform on (0, pi) and E exponential,

        X = (A(U) / E)^{(1-alpha)/alpha},
        log A(u) = [alpha log sin(alpha u)] / (1-alpha)
                   + log sin((1-alpha) u) - [log sin(u)] / (1-alpha).

    Working with log X keeps the tiny-alpha regime (exponent ~ 1/alpha)
    inside float range.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if alpha == 1.0:
        return 0.0 if size is None else np.zeros(size)
    u = gen.uniform(0.0, math.pi, size=size)
    e = gen.exponential(1.0, size=size)
    one_m = 1.0 - alpha
    log_a = (
        alpha / one_m * np.log(np.sin(alpha * u))
        + np.log(np.sin(one_m * u))
        - np.log(np.sin(u)) / one_m
    )
    return (one_m / alpha) * (log_a - np.log(e))


def sample_positive_stable(alpha: float, gen: np.random.Generator, size=None):
    """Standard positive stable draws (value space; can overflow for tiny alpha)."""
    return np.exp(sample_positive_stable_log(alpha, gen, size=size))


def _log_flow_scale(dt: float, params: CsbpParams):
    """alpha and log c of the increment law over dt."""
    alpha = params.alpha(dt)
    log_c = params.a * (alpha - 1.0) / params.b
    return alpha, log_c


def sample_S_increment_log(
    dt: float, log_x, params: CsbpParams, gen: np.random.Generator, size=None
):
    """log of S^{(s, s+dt)}(x) given log x; exact for any index."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    log_x = np.asarray(log_x, dtype=float)
    if dt == 0.0:
        out = log_x if size is None else np.broadcast_to(log_x, size).copy()
        return float(out) if np.ndim(out) == 0 else out
    alpha, log_c = _log_flow_scale(dt, params)
    s = sample_positive_stable_log(alpha, gen, size=size)
    out = (log_x + log_c) / alpha + s
    return float(out) if np.ndim(out) == 0 else out


def sample_S_increment(
    dt: float, x, params: CsbpParams, gen: np.random.Generator, size=None
):
    """A draw of S^{(s, s+dt)}(x): Laplace transform exp(-x u_dt(lambda)).

    dt = 0 returns x unchanged (identity flow); x = 0 is absorbing.  Values
    are returned in ordinary units; use the _log variant when b dt is large
    enough for the mass to leave float range.
    """
    x = np.asarray(x, dtype=float)
    if (x < 0).any():
        raise ValueError("mass must be nonnegative")
    if dt == 0.0:
        out = x if size is None else np.broadcast_to(x, size).copy()
        return float(out) if np.ndim(out) == 0 else out
    if (x == 0).any():
        if np.ndim(x) == 0:
            return 0.0 if size is None else np.zeros(size)
        raise ValueError("zero masses require scalar x or the log variant")
    with np.errstate(over="ignore"):
        out = np.exp(sample_S_increment_log(dt, np.log(x), params, gen, size=size))
    return float(out) if np.ndim(out) == 0 else out


def csbp_log_trajectory(
    log_z0: float, times, params: CsbpParams, gen: np.random.Generator
):
    """log Z at the given sorted times, by Markov composition of increments."""
    times = np.asarray(times, dtype=float)
    if times.size and ((np.diff(times) < 0).any() or times[0] < 0):
        raise ValueError("times must be sorted and nonnegative")
    out = np.empty(times.size)
    lz = float(log_z0)
    prev = 0.0
    for i, t in enumerate(times):
        dt = t - prev
        if dt > 0 and math.isfinite(lz):
            lz = float(sample_S_increment_log(dt, lz, params, gen))
        out[i] = lz
        prev = t
    return out


def csbp_trajectory(z0: float, times, params: CsbpParams, gen: np.random.Generator):
    """CSBP observed at the given sorted times (value space)."""
    if z0 < 0:
        raise ValueError("z0 must be nonnegative")
    lz0 = -math.inf if z0 == 0.0 else math.log(z0)
    with np.errstate(over="ignore"):
        return np.exp(csbp_log_trajectory(lz0, times, params, gen))


# ---------------------------------------------------------------------------
# flow bridges


@dataclass
class FlowBridge:
    """A flow bridge materialized from finitely many jumps."""

    bridge: Bridge
    residual_fraction: float  # estimated untracked mass / total mass
    alpha: float


def _stable_jumps_log(log_scale: float, alpha: float, J: int, gen: np.random.Generator):
    """logs of the J largest jumps of a stable subordinator.

    The jump tail is K x^{-alpha} with log K = log_scale; ranked jumps are
    (K / Gamma_i)^{1/alpha} for Poisson arrival times Gamma_i.  Returns
    (log jumps descending, log of the mean residual mass beyond the J-th).
    """
    gammas = np.cumsum(gen.exponential(1.0, size=J))
    log_jumps = (log_scale - np.log(gammas)) / alpha
    log_resid = (
        log_scale
        + math.log(alpha / (1.0 - alpha))
        + (1.0 - alpha) * log_jumps[-1]
    )
    return log_jumps, log_resid


def _panel_bridge(
    log_mass: float, alpha: float, log_c: float, J: int, gen: np.random.Generator
):
    """One interval bridge plus the log total mass it transports.

    Jump locations are uniform on the interval; values are the normalized
    cumulative jump sizes (softmax in log space, so any index works).
    """
    log_scale = log_mass + log_c - float(gammaln(1.0 - alpha))
    log_jumps, log_resid = _stable_jumps_log(log_scale, alpha, J, gen)
    locs = gen.uniform(0.0, 1.0, size=J)
    order = np.argsort(locs, kind="stable")
    lj = log_jumps[order]
    m = lj.max()
    w = np.exp(lj - m)
    cum = np.cumsum(w)
    vs = cum / cum[-1]
    log_tracked = m + math.log(cum[-1])
    log_total = float(np.logaddexp(log_tracked, log_resid))
    residual_fraction = math.exp(log_resid - log_total)
    return Bridge(xs=locs[order], vs=vs), log_total, residual_fraction


def bridge_from_flow(
    s: float,
    t: float,
    z0: float,
    params: CsbpParams,
    gap_count: int = DEFAULT_GAP_COUNT,
    gen: np.random.Generator | None = None,
) -> FlowBridge:
    """Sample the bridge B_{s,t} of the flow started from mass z0.

    The bridge carries the `gap_count` largest jumps of the interval
    subordinator; their locations are uniform and the values are
    normalized so B(1) = 1 exactly.  The mean untracked mass is reported
    as `residual_fraction` (not folded into the steps).
    """
    if gen is None:
        raise ValueError("an rng Generator is required")
    if not 0 <= s <= t:
        raise ValueError("need 0 <= s <= t")
    if gap_count < 1:
        raise ValueError("gap_count must be at least 1")
    if z0 <= 0:
        raise ValueError("z0 must be positive")
    if s == t:
        return FlowBridge(Bridge.identity_bridge(), 0.0, 1.0)
    log_m = math.log(z0)
    if s > 0:
        log_m = float(sample_S_increment_log(s, log_m, params, gen))
    alpha, log_c = _log_flow_scale(t - s, params)
    bridge, _, resid = _panel_bridge(log_m, alpha, log_c, gap_count, gen)
    return FlowBridge(bridge=bridge, residual_fraction=resid, alpha=alpha)


def sample_pd_gaps_stick(alpha: float, n_sticks: int, gen: np.random.Generator):
    """Size-biased Poisson-Dirichlet PD(alpha, 0) weights via stick breaking.

    Independent oracle for the bridge gap law: V_j ~ Beta(1 - alpha, j alpha),
    W_j = V_j prod_{i<j} (1 - V_i).  Returns the first n_sticks weights
    (unsorted; their sum falls short of one by the undealt stick mass).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    j = np.arange(1, n_sticks + 1)
    v = gen.beta(1.0 - alpha, j * alpha)
    log_remain = np.concatenate([[0.0], np.cumsum(np.log1p(-v))[:-1]])
    return v * np.exp(log_remain)


def bsz_partitions_from_flow(
    t: float,
    n: int,
    s_list,
    params: CsbpParams,
    gen: np.random.Generator,
    z0: float = 1.0,
    clock_rate: float = DEFAULT_CLOCK_RATE,
    gap_count: int = DEFAULT_GAP_COUNT,
):
    """Partition-valued path of the flow's dual coalescent.

    For each coalescent duration s in s_list, the partition is
    pi(B_{t - s/clock_rate, t}) with a single shared set of n uniforms.
    Bridges over nested look-back intervals are composed from independent
    panel bridges, which preserves the cocycle exactly.  Returns
    (s_array, list of Partition).
    """
    s_arr = np.asarray(sorted(float(v) for v in s_list))
    if n < 1:
        raise ValueError("n must be at least 1")
    if (s_arr < 0).any() or (s_arr > clock_rate * t + 1e-12).any():
        raise ValueError("coalescent times must lie in [0, clock_rate * t]")
    look = t - s_arr / clock_rate  # csbp times, descending in s
    boundaries = np.concatenate([look[::-1], [t]])  # ascending csbp times
    uniforms = gen.uniform(size=n)

    log_mass = math.log(z0)
    if boundaries[0] > 0:
        log_mass = float(sample_S_increment_log(boundaries[0], log_mass, params, gen))
    panels = []
    for a, b in zip(boundaries[:-1], boundaries[1:]):
        if b == a:
            panels.append(Bridge.identity_bridge())
            continue
        alpha, log_c = _log_flow_scale(b - a, params)
        bridge, log_mass, _ = _panel_bridge(log_mass, alpha, log_c, gap_count, gen)
        panels.append(bridge)

    # comp[i] = bridge from boundaries[i] all the way to t
    comp = [Bridge.identity_bridge()] * (len(panels) + 1)
    for i in reversed(range(len(panels))):
        comp[i] = compose_bridges(comp[i + 1], panels[i])

    parts = []
    for i in range(len(s_arr)):
        idx = len(s_arr) - 1 - i  # boundary position of the look-back for s_arr[i]
        parts.append(partition_from_bridge(comp[idx], uniforms))
    return s_arr, parts


def calibrate_clock_rate(
    params: CsbpParams,
    dts,
    replicates: int,
    gen: np.random.Generator,
    gap_count: int = 1024,
) -> dict:
    """Estimate the coalescent clock rate by pair-coalescence matching.

    For each csbp look-back dt, the probability that two uniforms fall in
    the same gap of B_{t-dt,t} is 1 - alpha = 1 - e^{-b dt} for the flow,
    while the direct BSZ pair coalesces by s with probability 1 - e^{-s};
    equating gives s = b dt, so -log(1 - p_hat)/dt estimates b.
    """
    rates = []
    for dt in dts:
        hits = 0
        for _ in range(replicates):
            fb = bridge_from_flow(0.0, dt, 1.0, params, gap_count, gen)
            u = gen.uniform(size=2)
            v = fb.bridge.inverse(u)
            hits += int(v[0] == v[1])
        p = hits / replicates
        rates.append(-math.log(max(1.0 - p, 1e-12)) / dt)
    rates = np.asarray(rates)
    return {
        "dts": np.asarray(list(dts), dtype=float),
        "rates": rates,
        "estimate": float(rates.mean()),
        "theory": params.b,
    }

