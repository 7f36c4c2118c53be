"""Closed-form kernels and rates for branching Brownian motion in a strip
and the associated log-branching-mechanism CSBP.

Everything here is deterministic and cheap; these functions double as the
exact oracles for the Monte Carlo engine.

Conventions.  A "strip" is the interval (0, K) with absorption at both
endpoints.  Particles diffuse as standard Brownian motion with drift -mu
and branch binarily at rate one.  The killed heat kernel is

    v_t(x, y) = (2/K) sum_{n>=1} exp(-pi^2 n^2 t / 2K^2)
                                 sin(n pi x/K) sin(n pi y/K),

the branching density is q_t(x,y) = exp((1 - mu^2/2) t + mu (x-y)) v_t(x,y),
and p_t is the n = 1 term of q_t, which dominates for t >> K^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import integrate
from scipy.special import gammaln

__all__ = [
    "ModelParams",
    "CsbpParams",
    "StripSpec",
    "derive_params",
    "strip_params",
    "identity_residual",
    "strip_density_v",
    "bbm_density_q",
    "principal_density_p",
    "eterm_bound",
    "green_strip",
    "lambda_bk",
    "csbp_psi",
    "csbp_laplace_u",
    "quadrature",
    "SeriesValue",
]

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# parameter sets


@dataclass(frozen=True)
class ModelParams:
    """Drift and level parameters of one population-scale experiment.

    For the N-indexed family the fields are tied together by

        mu  = sqrt(2 - 2 pi^2 / D^2),   D = log N + 3 log log N,
        L   = D / sqrt(2),              L_A = L - A / sqrt(2),

    which makes 1 - mu^2/2 - pi^2/(2 L^2) vanish identically.  Use
    `derive_params` to build validated instances of that family and
    `strip_params` for free (mu, K) experiments where N plays no role.
    """

    mu: float
    L: float
    L_A: float
    A: float = 0.0
    N: int | None = None

    def identity_residual(self) -> float:
        return 1.0 - self.mu ** 2 / 2.0 - math.pi ** 2 / (2.0 * self.L ** 2)


@dataclass(frozen=True)
class CsbpParams:
    """Branching mechanism Psi(u) = a u + b u log u, with b > 0.

    The flow index after time dt is alpha(dt) = exp(-b dt).
    """

    a: float
    b: float

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("b must be positive")

    def alpha(self, dt: float) -> float:
        return math.exp(-self.b * dt)


@dataclass(frozen=True)
class StripSpec:
    """Strip geometry plus series truncation control.

    truncation_terms = None selects the automatic rule: the smallest n
    whose rigorous tail bound drops below 1e-10, capped at 512 terms, with
    a reflection (image) representation taking over for t < 0.01 K^2 where
    the eigenfunction series converges slowly.
    """

    K: float
    mu: float = 0.0
    truncation_terms: int | None = None

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError("K must be positive")
        if self.truncation_terms is not None and self.truncation_terms < 1:
            raise ValueError("truncation_terms must be >= 1")


class SeriesValue(NamedTuple):
    """A truncated-series value with a rigorous bound on the dropped tail."""

    value: float
    tail_bound: float


MAX_TERMS = 512
AUTO_TOL = 1e-10
IMAGE_SWITCH = 0.01  # use reflection representation for t < IMAGE_SWITCH * K^2


def _level_scale(N: int) -> float:
    """D = log N + 3 log log N, the sqrt(2)-scaled level defining L."""
    if int(N) != N or N < 3:
        raise ValueError("N must be an integer >= 3 (log log N must be positive)")
    return math.log(N) + 3.0 * math.log(math.log(N))


def derive_params(N: int, A: float = 0.0) -> ModelParams:
    """Parameters of the near-critical family indexed by N.

    Requires log N + 3 log log N > pi so the drift is a real number in
    (0, sqrt(2)); that holds from N = 6 up.  Rejects any A that pushes the
    killing level L_A to or below zero.
    """
    D = _level_scale(N)
    musq = 2.0 - 2.0 * math.pi ** 2 / D ** 2
    if musq <= 0.0:
        raise ValueError(
            f"N={N} is below the scale where the drift is real (need "
            "log N + 3 log log N > pi, i.e. N >= 6); the algebraic identity "
            "is still available through identity_residual(N)"
        )
    mu = math.sqrt(musq)
    L = D / SQRT2
    L_A = L - float(A) / SQRT2
    if not L_A > 0:
        raise ValueError(f"A={A} gives non-positive killing level L_A={L_A}")
    p = ModelParams(mu=mu, L=L, L_A=L_A, A=float(A), N=int(N))
    resid = p.identity_residual()
    if abs(resid) > 1e-12:
        raise AssertionError(f"parameter identity violated: residual={resid}")
    return p


def strip_params(mu: float, K: float) -> ModelParams:
    """Free parameter set for a strip experiment: weight level L = kill level K."""
    if not K > 0:
        raise ValueError("K must be positive")
    return ModelParams(mu=float(mu), L=float(K), L_A=float(K), A=0.0, N=None)


def identity_residual(N: int) -> float:
    """1 - mu^2/2 - pi^2/(2 L^2) from N alone, via mu^2 = 2 - 2 pi^2 / D^2.

    Defined for every N >= 3, including N where mu itself is imaginary;
    exact algebra gives 0, so the returned value is pure rounding noise.
    """
    D = _level_scale(N)
    musq = 2.0 - 2.0 * math.pi ** 2 / D ** 2
    L = D / SQRT2
    return 1.0 - musq / 2.0 - math.pi ** 2 / (2.0 * L ** 2)


# ---------------------------------------------------------------------------
# strip densities


def _geom_tail(first_term: float, ratio: float) -> float:
    """Upper bound for a sum whose term ratios are <= ratio < 1."""
    if ratio >= 1.0:
        return math.inf
    return first_term / (1.0 - ratio)


def _eigen_tail_bound(lam: float, n_start: int) -> float:
    """Rigorous bound for sum_{n >= n_start} n^2 exp(-lam n^2).

    Term ratio t_{n+1}/t_n = ((n+1)/n)^2 exp(-lam (2n+1)) is decreasing in
    n, so the tail is dominated by a geometric series from n_start on,
    provided the ratio there is below one.  Summation in blocks keeps the
    bound tight for small lam.
    """
    n = n_start
    total = 0.0
    for _ in range(100000):
        term = n * n * math.exp(-lam * n * n)
        ratio = ((n + 1.0) / n) ** 2 * math.exp(-lam * (2.0 * n + 1.0))
        if ratio < 0.5:
            return total + _geom_tail(term, ratio)
        total += term
        n += 1
        if term < 1e-300:
            return total
    return math.inf


def _auto_terms(lam: float) -> int:
    """Smallest n with tail bound below AUTO_TOL, capped at MAX_TERMS."""
    for n in range(1, MAX_TERMS + 1):
        if _eigen_tail_bound(lam, n + 1) < AUTO_TOL:
            return n
    return MAX_TERMS


def _v_eigen(t, x, y, K, n_terms):
    """Eigenfunction series for the killed heat kernel, plus tail bound."""
    lam = math.pi ** 2 * t / (2.0 * K ** 2)
    n = np.arange(1, n_terms + 1)
    coef = np.exp(-lam * n * n)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sx = np.sin(np.multiply.outer(x, n) * (math.pi / K))
    sy = np.sin(np.multiply.outer(y, n) * (math.pi / K))
    val = (2.0 / K) * np.sum(coef * sx * sy, axis=-1)
    # |sin n a| <= n sin a bounds every dropped term by n^2 * the n = 1
    # envelope; sin factors <= 1 keep the bound valid on the boundary.
    envelope = np.minimum(np.sin(np.pi * x / K) * np.sin(np.pi * y / K), 1.0)
    tail = (2.0 / K) * np.abs(envelope) * _eigen_tail_bound(lam, n_terms + 1)
    return val, tail


def _v_image(t, x, y, K):
    """Reflection (image charge) representation of the killed heat kernel.

    Exact alternating sum over reflected sources; converges in a handful
    of terms when t << K^2.  The returned bound covers the dropped images.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inv = 1.0 / math.sqrt(2.0 * math.pi * t)
    val = np.zeros(np.broadcast(x, y).shape, dtype=float)
    m = 0
    while True:
        shift = 2.0 * m * K
        term = np.exp(-((y - x + shift) ** 2) / (2.0 * t)) - np.exp(
            -((y + x + shift) ** 2) / (2.0 * t)
        )
        if m > 0:
            term = term + (
                np.exp(-((y - x - shift) ** 2) / (2.0 * t))
                - np.exp(-((y + x - shift) ** 2) / (2.0 * t))
            )
        val = val + term
        biggest = float(np.max(np.abs(term)))
        m += 1
        if biggest < 1e-18 or m > 64:
            break
    # images at |k| > m sit at least (2m-1)K from the diagonal strip
    a = max((2 * m - 1) * K, 0.0)
    tail = 4.0 * math.exp(-(a ** 2) / (2.0 * t)) * inv if a > 0 else math.inf
    out = inv * val
    return (float(out) if out.ndim == 0 else out), float(tail)


def strip_density_v(t: float, x, y, spec: StripSpec) -> SeriesValue:
    """Transition density of Brownian motion killed at 0 and K.

    Returns the value together with a rigorous bound on the truncation
    remainder.  Inputs must satisfy t > 0 and 0 < x, y < K.
    """
    K = spec.K
    _check_domain(t, x, y, K)
    lam = math.pi ** 2 * t / (2.0 * K ** 2)
    if spec.truncation_terms is None and t < IMAGE_SWITCH * K ** 2:
        val, tail = _v_image(t, x, y, K)
        return SeriesValue(val, tail)
    n_terms = spec.truncation_terms or _auto_terms(lam)
    val, tail = _v_eigen(t, x, y, K, n_terms)
    if val.ndim == 0:
        return SeriesValue(float(val), float(tail))
    return SeriesValue(val, tail)


def bbm_density_q(t: float, x, y, spec: StripSpec) -> SeriesValue:
    """Expected particle density for branching BM with drift -mu in the strip."""
    v = strip_density_v(t, x, y, spec)
    factor = np.exp(
        (1.0 - spec.mu ** 2 / 2.0) * t
        + spec.mu * (np.asarray(x, float) - np.asarray(y, float))
    )
    val = factor * v.value
    tail = factor * v.tail_bound
    if np.ndim(val) == 0:
        return SeriesValue(float(val), float(np.max(tail)))
    return SeriesValue(val, tail)


def principal_density_p(t: float, x, y, spec: StripSpec) -> float:
    """Leading eigenmode of q_t; the large-t asymptote of the density."""
    K, mu = spec.K, spec.mu
    _check_domain(t, x, y, K, allow_boundary=True)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rate = 1.0 - mu ** 2 / 2.0 - math.pi ** 2 / (2.0 * K ** 2)
    out = (
        (2.0 / K)
        * np.exp(rate * t)
        * np.exp(mu * x)
        * np.sin(np.pi * x / K)
        * np.exp(-mu * y)
        * np.sin(np.pi * y / K)
    )
    return float(out) if np.ndim(out) == 0 else out


def eterm_bound(t: float, K: float) -> float:
    """Bound on |q_t/p_t - 1|: sum_{n>=2} n^2 e^{-pi^2 n^2 t/2K^2} / e^{-pi^2 t/2K^2}."""
    if t <= 0 or K <= 0:
        raise ValueError("t and K must be positive")
    lam = math.pi ** 2 * t / (2.0 * K ** 2)
    return _eigen_tail_bound(lam, 2) * math.exp(lam)


def _check_domain(t, x, y, K, allow_boundary=False):
    if t <= 0:
        raise ValueError("t must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if allow_boundary:
        ok = (x >= 0).all() and (x <= K).all() and (y >= 0).all() and (y <= K).all()
    else:
        ok = (x > 0).all() and (x < K).all() and (y > 0).all() and (y < K).all()
    if not ok:
        raise ValueError("positions must lie in the strip (0, K)")


def green_strip(x, y, K: float):
    """Expected occupation density of driftless BM killed at 0 and K.

        G(x, y) = 2 x (K - y) / K   for y >= x,
        G(x, y) = 2 y (K - x) / K   for y <= x.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if (x < 0).any() or (x > K).any() or (y < 0).any() or (y > K).any():
        raise ValueError("positions must lie in [0, K]")
    out = np.where(y >= x, 2.0 * x * (K - y) / K, 2.0 * y * (K - x) / K)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# coalescent rates


RATIONAL_LIMIT = 64


@lru_cache(maxsize=None)
def _lambda_uniform_exact(b: int, k: int) -> Fraction:
    # integral of x^(k-2) (1-x)^(b-k) dx = Beta(k-1, b-k+1)
    return Fraction(
        math.factorial(k - 2) * math.factorial(b - k), math.factorial(b - 1)
    )


def lambda_bk(b: int, k: int, measure: str = "uniform"):
    """Merger rate of k out of b blocks for a Lambda-coalescent.

    measure="uniform" is the Bolthausen-Sznitman coalescent; the rate is
    the Beta integral Beta(k-1, b-k+1), returned as an exact Fraction for
    b <= 64 and as a float beyond.  measure="point-mass-at-0" is Kingman:
    rate one for pairwise mergers, zero otherwise.
    """
    if k < 2 or k > b:
        raise ValueError("need 2 <= k <= b")
    if measure in ("point-mass-at-0", "kingman"):
        return 1 if k == 2 else 0
    if measure != "uniform":
        raise ValueError(f"unknown measure {measure!r}")
    if b <= RATIONAL_LIMIT:
        return _lambda_uniform_exact(b, k)
    return math.exp(gammaln(k - 1) + gammaln(b - k + 1) - gammaln(b))


# ---------------------------------------------------------------------------
# CSBP semigroup


def csbp_psi(u, params: CsbpParams):
    """Psi(u) = a u + b u log u, extended by continuity to Psi(0) = 0."""
    u = np.asarray(u, dtype=float)
    if (u < 0).any():
        raise ValueError("u must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(u > 0, params.a * u + params.b * u * np.log(u), 0.0)
    return float(out) if out.ndim == 0 else out


def csbp_laplace_u(t: float, lam, params: CsbpParams):
    """Laplace exponent flow u_t(lambda) = lambda^(e^{-bt}) e^{a (e^{-bt}-1)/b}.

    This solves du/dt = -Psi(u) with u_0 = lambda and obeys the semigroup
    identity u_{t+s} = u_t o u_s.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    lam = np.asarray(lam, dtype=float)
    if (lam <= 0).any():
        raise ValueError("lambda must be positive")
    al = math.exp(-params.b * t)
    out = np.power(lam, al) * math.exp(params.a * (al - 1.0) / params.b)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# quadrature


def quadrature(f, a: float, b: float, tol: float = 1e-10) -> float:
    """Adaptive quadrature of f over [a, b] to absolute tolerance tol."""
    val, err = integrate.quad(f, a, b, epsabs=tol, epsrel=tol, limit=400)
    if err > 100 * max(tol, 1e-14) * max(1.0, abs(val)):
        raise RuntimeError(f"quadrature did not converge: value={val}, err={err}")
    return val
