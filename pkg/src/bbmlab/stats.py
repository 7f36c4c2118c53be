"""Statistical utilities for the verification harness.

Thin, deterministic wrappers: one- and two-sample Kolmogorov-Smirnov,
chi-square against known expected counts, the Hill estimator, and a basic
percentile bootstrap.  Reports carry the configuration hash of the run
that produced them so a report is auditable without rerunning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sstats
from scipy.special import kolmogorov

from .fkpp import hill_estimator

__all__ = [
    "StatReport",
    "ks_test",
    "ks_test_two_sample",
    "chi_square",
    "hill",
    "bootstrap_ci",
    "mean_with_se",
]


@dataclass
class StatReport:
    name: str
    statistic: float
    p_value: float | None
    passed: bool
    level: float | None = None  # significance level, when p-value based
    n: int = 0
    hard: bool = True
    details: dict = field(default_factory=dict)
    config_hash: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else ("FAIL" if self.hard else "WARN")
        extra = f" p={self.p_value:.4g}" if self.p_value is not None else ""
        return f"[{verdict}] {self.name}: stat={self.statistic:.6g}{extra} n={self.n}"


def ks_test(samples, cdf, name="ks", level=0.01, config_hash="") -> StatReport:
    """One-sample KS against a callable CDF; asymptotic two-sided p-value."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    f = np.asarray(cdf(x), dtype=float)
    if (f < -1e-12).any() or (f > 1 + 1e-12).any():
        raise ValueError("cdf values must lie in [0, 1]")
    grid = np.arange(1, n + 1) / n
    d = float(np.max(np.maximum(grid - f, f - (grid - 1.0 / n))))
    p = float(kolmogorov(d * (math.sqrt(n) + 0.12 + 0.11 / math.sqrt(n))))
    return StatReport(
        name=name,
        statistic=d,
        p_value=p,
        passed=p > level,
        level=level,
        n=n,
        config_hash=config_hash,
    )


def ks_test_two_sample(a, b, name="ks2", level=0.01, config_hash="") -> StatReport:
    res = sstats.ks_2samp(np.asarray(a, float), np.asarray(b, float))
    return StatReport(
        name=name,
        statistic=float(res.statistic),
        p_value=float(res.pvalue),
        passed=res.pvalue > level,
        level=level,
        n=len(a) + len(b),
        config_hash=config_hash,
    )


def chi_square(counts, expected, name="chi2", level=0.01, config_hash="") -> StatReport:
    """Chi-square against expected counts from a fully specified model.

    Degrees of freedom = number of cells - 1 (the expected counts are
    renormalized onto the observed total).
    """
    obs = np.asarray(counts, dtype=float)
    exp = np.asarray(expected, dtype=float)
    if obs.shape != exp.shape or obs.ndim != 1:
        raise ValueError("counts and expected must be equal-length vectors")
    if (exp <= 0).any():
        raise ValueError("expected counts must be positive")
    exp = exp * obs.sum() / exp.sum()
    stat = float(np.sum((obs - exp) ** 2 / exp))
    df = obs.size - 1
    p = float(sstats.chi2.sf(stat, df)) if df > 0 else 1.0
    return StatReport(
        name=name,
        statistic=stat,
        p_value=p,
        passed=p > level,
        level=level,
        n=int(obs.sum()),
        details={"df": df},
        config_hash=config_hash,
    )


def hill(samples, k: int) -> float:
    """Hill tail-index estimate over the top k order statistics."""
    return hill_estimator(samples, k)


def bootstrap_ci(
    stat_fn, samples, level: float = 0.95, n_boot: int = 2000, seed: int = 0
):
    """Percentile bootstrap confidence interval for stat_fn(samples)."""
    x = np.asarray(samples)
    if x.size < 2:
        raise ValueError("need at least two samples")
    gen = np.random.default_rng(seed)
    vals = np.empty(n_boot)
    for i in range(n_boot):
        vals[i] = stat_fn(x[gen.integers(0, x.size, size=x.size)])
    lo = (1.0 - level) / 2.0
    return float(np.quantile(vals, lo)), float(np.quantile(vals, 1.0 - lo))


def mean_with_se(samples):
    x = np.asarray(samples, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))
