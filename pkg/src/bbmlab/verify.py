"""The acceptance suites: exact/analytic gates and statistical probes.

Gates marked hard are analytic or exact-identity checks run at fixed
tolerances; soft gates probe asymptotic limit theorems at desk scale with
pilot-calibrated bands (a failure warns rather than fails CI).  Every
suite is deterministic given its seed, and reports embed the oracle values
used so a report is auditable without rerunning.
"""

from __future__ import annotations

import math

import numpy as np

from . import engine as eng
from . import experiments as xp
from . import flows
from .analytics import (
    CsbpParams,
    csbp_laplace_u,
    derive_params,
    eterm_bound,
    identity_residual,
    lambda_bk,
    quadrature,
    strip_params,
)
from .coalescent import merge_rates, sample_path
from .fkpp import estimate_w_samples, laplace_cross_check, solve_fkpp_wave, tail_analysis
from .genealogy import ancestral_partition, compose_bridges, discrete_bridge, partition_from_bridge
from .stats import StatReport, chi_square, mean_with_se

__all__ = ["SUITES", "run_suite", "run_all"]

# criterion 13's clock scale (coalescent time per unit look-back) and sup
# distance threshold were fixed after the pilot run recorded in the repo
# history; see tests/test_acceptance.py for the acceptance-side values.
MM_SUP_DISTANCE_MAX = 2.0


def _report(name, ok, stat, hard=True, p=None, n=0, **details):
    return StatReport(
        name=name,
        statistic=float(stat),
        p_value=p,
        passed=bool(ok),
        n=n,
        hard=hard,
        details=details,
    )


# ---------------------------------------------------------------------------
# hard gates


def verify_identities(seed=0):
    """Criterion 1 plus the analytic invariants that need no sampling."""
    out = []
    worst = 0.0
    for N in (3, 1000, 10**6, 10**9):
        worst = max(worst, abs(identity_residual(N)))
    out.append(
        _report("parameter-identity", worst < 1e-12, worst, tol=1e-12,
                N_list=[3, 1000, 10**6, 10**9])
    )
    # lambda consistency lambda_{b,k} = lambda_{b+1,k+1} + lambda_{b+1,k}, exact
    ok = True
    for b in range(2, 40):
        for k in range(2, b + 1):
            if lambda_bk(b, k) != lambda_bk(b + 1, k + 1) + lambda_bk(b + 1, k):
                ok = False
    out.append(_report("lambda-pascal-identity", ok, 0.0))
    # semigroup on a 10x10x10 grid, relative 1e-12
    cp = CsbpParams(a=0.6, b=1.7)
    ts = np.linspace(0.05, 2.0, 10)
    lams = np.geomspace(0.05, 20.0, 10)
    worst = 0.0
    for t in ts:
        for s in ts:
            for lam in lams:
                lhs = csbp_laplace_u(t + s, lam, cp)
                rhs = csbp_laplace_u(t, csbp_laplace_u(s, lam, cp), cp)
                worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-300))
    out.append(_report("csbp-semigroup-grid", worst < 1e-12, worst, tol=1e-12))
    return out


def verify_martingale(seed=0, replicates=10_000):
    """Criterion 2: E[Z(t)] e^{-(1 - mu^2/2 - pi^2/2K^2) t} = Z(0) in the strip."""
    K, mu, t, x = 8.0, 1.0, 3.0, 4.0
    params = strip_params(mu, K)
    rate = 1.0 - mu * mu / 2.0 - math.pi ** 2 / (2.0 * K * K)
    cfg = eng.SimConfig(
        params=params,
        horizon=t,
        checkpoint_times=(0.0, t),
        init=eng.InitialCondition.point_mass(x, 1),
        seed=seed + 2101,
        right_barrier=eng.Barrier.kill_at(K),
    )
    res = eng.run_batch(cfg, replicates, chunk=replicates)
    stat = res.Z[:, 1] * math.exp(-rate * t)
    m, se = mean_with_se(stat)
    target = math.exp(mu * x) * math.sin(math.pi * x / K)
    z = (m - target) / se
    return [
        _report("strip-martingale-Zexp", abs(z) <= 3.0, z, n=replicates,
                mean=m, se=se, oracle=target, K=K, mu=mu, t=t, x=x)
    ]


def verify_green(seed=0, n_paths=100_000):
    """Criterion 3: band occupation of killed driftless BM vs the Green kernel."""
    K = 5.0
    x0 = 0.3 * K
    band = (0.6 * K, 0.8 * K)
    occ, truncated = xp.occupation_in_band(x0, K, band, n_paths, dt=0.01, seed=seed + 3301)
    m, se = mean_with_se(occ)
    target = xp.green_band_integral(x0, K, band)
    z = (m - target) / se
    return [
        _report("green-occupation", abs(z) <= 3.0 and truncated == 0, z, n=n_paths,
                mean=m, se=se, oracle=target, truncated=truncated)
    ]


def verify_counts(seed=0, replicates=10_000):
    """Criterion 4: E[M(t)] at t = K^2 against the leading-mode formula."""
    K, mu, x = 3.0, 0.9, 1.5
    t = K * K
    params = strip_params(mu, K)
    rate = 1.0 - mu * mu / 2.0 - math.pi ** 2 / (2.0 * K * K)
    integral = quadrature(lambda y: math.exp(-mu * y) * math.sin(math.pi * y / K), 0.0, K)
    main = (2.0 / K) * math.exp(rate * t) * math.exp(mu * x) * math.sin(math.pi * x / K) * integral
    bound = eterm_bound(t, K) * abs(main)
    cfg = eng.SimConfig(
        params=params,
        horizon=t,
        checkpoint_times=(0.0, t),
        init=eng.InitialCondition.point_mass(x, 1),
        seed=seed + 4401,
        right_barrier=eng.Barrier.kill_at(K),
    )
    res = eng.run_batch(cfg, replicates, chunk=replicates)
    m, se = mean_with_se(res.M[:, 1].astype(float))
    tol = 3.0 * se + bound
    return [
        _report("strip-count-Mexp", abs(m - main) <= tol, (m - main) / se,
                n=replicates, mean=m, se=se, oracle=main, eterm=bound)
    ]


def verify_rates(seed=0, events=100_000):
    """Criterion 5: first-merger size law from 5 blocks, chi-square at 99%."""
    gen = np.random.default_rng(seed + 5501)
    rates = merge_rates(5, "bolthausen_sznitman")
    counts = np.zeros(4, dtype=np.int64)
    for _ in range(events):
        path = sample_path(5, math.inf, "bolthausen_sznitman", gen)
        k = len(path.events[0][1])
        counts[k - 2] += 1
    rep = chi_square(counts, rates, name="bsz-first-event-k", level=0.01)
    rep.details.update(
        expected=[float(r) for r in rates],
        lambdas=[str(lambda_bk(5, k)) for k in range(2, 6)],
    )
    return [rep]


def verify_csbp(seed=0, draws=100_000):
    """Criterion 6: semigroup grid and the increment law's Laplace transform."""
    out = verify_identities(seed)[2:3]  # reuse the semigroup grid report
    gen = np.random.default_rng(seed + 6601)
    cp = CsbpParams(a=0.4, b=1.1)
    x = 1.3
    worst = 0.0
    pts = []
    for dt in (0.1, 0.4, 1.0):
        d = flows.sample_S_increment(dt, x, cp, gen, size=draws)
        for lam in (0.5, 1.0, 2.0):
            vals = np.exp(-lam * d)
            m, se = mean_with_se(vals)
            target = math.exp(-x * csbp_laplace_u(dt, lam, cp))
            z = (m - target) / se
            worst = max(worst, abs(z))
            pts.append({"dt": dt, "lam": lam, "mc": m, "se": se, "oracle": target})
    out.append(
        _report("csbp-increment-laplace", worst <= 4.0, worst, n=9 * draws, points=pts)
    )
    return out


def _cocycle_log(seed):
    N = 2000
    params = derive_params(N)
    cfg = eng.SimConfig(
        params=params,
        horizon=8.0,
        checkpoint_times=tuple(np.linspace(0.0, 8.0, 5)),
        init=eng.InitialCondition.stable_profile(N),
        seed=seed + 7701,
    )
    return eng.run(cfg).genealogy, params


def verify_cocycle(seed=0):
    """Criterion 7: composed discrete bridges equal direct ones bit-exactly."""
    log, params = _cocycle_log(seed)
    grid = np.linspace(0.0, 1.0, 101)
    ugrid = np.linspace(0.001, 0.999, 101)
    bad = 0
    trips = 0
    for i in range(log.n_checkpoints):
        for j in range(i + 1, log.n_checkpoints):
            for k in range(j + 1, log.n_checkpoints):
                trips += 1
                b_ik = discrete_bridge(log, i, k, params)
                b_ij = discrete_bridge(log, i, j, params)
                b_jk = discrete_bridge(log, j, k, params)
                comp = compose_bridges(b_jk, b_ij)
                if not np.array_equal(b_ik.value(grid), comp.value(grid)):
                    bad += 1
                if not np.array_equal(
                    b_ik.inverse(ugrid), b_ij.inverse(b_jk.inverse(ugrid))
                ):
                    bad += 1
    return [_report("bridge-cocycle", bad == 0, bad, triples=trips)]


def verify_equivalence(seed=0, samples=200, n=10):
    """Criterion 8: pi(B^N) equals the ancestral partition, exactly."""
    log, params = _cocycle_log(seed)
    last = log.n_checkpoints - 1
    bridge = discrete_bridge(log, 0, last, params)
    lex = log.lex_order(last)
    m = log.size(last)
    gen = np.random.default_rng(seed + 8801)
    bad = 0
    for _ in range(samples):
        u = gen.uniform(size=n)
        p_bridge = partition_from_bridge(bridge, u)
        rows = lex[np.ceil(u * m).astype(int) - 1]
        p_anc = ancestral_partition(log, rows, log.times[last], log.times[last])
        if p_bridge != p_anc:
            bad += 1
    return [_report("bridge-partition-equivalence", bad == 0, bad, samples=samples)]


# ---------------------------------------------------------------------------
# soft gates


_W_CACHE = {}


def _w_experiment(seed, replicates, y):
    """w-sample cache shared by criteria 9 and 10 (10 reuses 9's samples)."""
    key = (seed, replicates, y)
    if key not in _W_CACHE:
        _W_CACHE[key] = estimate_w_samples(y, replicates, seed + 9901)
    return _W_CACHE[key]


def verify_wtail(seed=0, replicates=30_000, y=8.0):
    """Criterion 9: Hill plateau near 1 and x P(W > x) near 1/sqrt(2)."""
    expd = _w_experiment(seed, replicates, y)
    w = expd.w_samples
    rep = tail_analysis(w, rel_band=0.15)
    out = []
    plateau_ok = rep.plateau is not None and abs(rep.plateau[2] - 1.0) <= 0.15
    out.append(
        _report("w-hill-plateau", plateau_ok,
                rep.plateau[2] if rep.plateau else math.nan, hard=False,
                n=w.size, flagged=expd.n_flagged,
                plateau=rep.plateau, k_grid=rep.k_grid.tolist(),
                hill=[round(h, 4) for h in rep.hill])
    )
    xs = np.linspace(5.0, 20.0, 16)
    vals = np.array([x * np.mean(w > x) for x in xs])
    ok = bool(((vals >= 0.45) & (vals <= 0.95)).all())
    out.append(
        _report("w-tail-xp", ok, float(vals.mean()), hard=False, n=w.size,
                lo=float(vals.min()), hi=float(vals.max()),
                target=1.0 / math.sqrt(2.0))
    )
    return out


def verify_fkpp(seed=0, replicates=30_000, y=8.0):
    """Criterion 10: the wave transform against the Monte Carlo of w."""
    w = _w_experiment(seed, replicates, y).w_samples
    wave = solve_fkpp_wave()
    rep = laplace_cross_check(wave, w, u_grid=(-1.0, 0.0, 1.0), allowance=0.03)
    ok = all(p["pass"] for p in rep["points"])
    worst = max(abs(p["diff"]) / (3 * p["se"] + rep["allowance"]) for p in rep["points"])
    return [
        _report("fkpp-laplace-duality", ok, worst, hard=False, n=len(w),
                shift=rep["shift"], points=rep["points"])
    ]


def verify_mrca(seed=0, runs_per_N=3, pairs=400):
    """Criterion 11: median pair MRCA age ratio between N = 1e3 and 1e4."""
    res = xp.mrca_scaling_experiment(
        [1000, 10_000], seed + 11011, runs_per_N=runs_per_N, pairs_per_run=pairs
    )
    ratio = res["observed_ratios"][0]
    ok = 1.4 <= ratio <= 3.6
    return [
        _report("mrca-scaling-ratio", ok, ratio, hard=False,
                predicted=res["predicted_ratios"][0], medians=res["medians"],
                censored=res["censored_fraction"])
    ]


def verify_poplink(seed=0, n_runs=200):
    """Criterion 12: the population-size link M ~ 2 pi Z / D^2 after burn-in.

    D = log N + 3 log log N is the level scale; the asymptotic statement
    reads log N, which at N = 1e4 is off by ((log N)/D)^2 ~ 0.34, so the
    desk-scale check uses D (both medians are reported).
    """
    res = xp.population_link_experiment(10_000, n_runs, seed + 12012)
    ok = 0.7 <= res["median_ratio"] <= 1.3
    return [
        _report("population-link", ok, res["median_ratio"], hard=False,
                n=res["n_effective"], naive_logN_ratio=res["median_ratio_logN"])
    ]


def verify_mergers(seed=0, n_runs=24):
    """Criterion 13: multiple mergers present; block curve closer to BSZ."""
    res = xp.multiple_merger_experiment(10_000, n_runs, seed + 13013)
    freq = res["mm_step_frequency"]
    kb, db = xp.fit_clock_and_distance(
        res["lookback"], res["mean_block_count"], "bolthausen_sznitman",
        res["n_sample"], seed + 13500)
    kk, dk = xp.fit_clock_and_distance(
        res["lookback"], res["mean_block_count"], "kingman",
        res["n_sample"], seed + 13500)
    ok = freq > 0.0 and db < dk and db <= MM_SUP_DISTANCE_MAX
    return [
        _report("multiple-mergers", ok, freq, hard=False, n=res["runs_used"],
                sup_dist_bsz=db, sup_dist_kingman=dk,
                clock_bsz=kb, clock_kingman=kk, mm_events=res["mm_events"])
    ]


SUITES = {
    "identities": (verify_identities, True),
    "martingale": (verify_martingale, True),
    "green": (verify_green, True),
    "counts": (verify_counts, True),
    "rates": (verify_rates, True),
    "csbp": (verify_csbp, True),
    "cocycle": (verify_cocycle, True),
    "equivalence": (verify_equivalence, True),
    "wtail": (verify_wtail, False),
    "fkpp": (verify_fkpp, False),
    "mrca": (verify_mrca, False),
    "poplink": (verify_poplink, False),
    "mergers": (verify_mergers, False),
}


def run_suite(name: str, seed: int = 0):
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; options: {sorted(SUITES)}")
    fn, hard = SUITES[name]
    reports = fn(seed=seed)
    for r in reports:
        r.hard = hard
    return reports


def run_all(seed: int = 0, skip=()):
    out = {}
    for name in SUITES:
        if name in skip:
            continue
        out[name] = run_suite(name, seed=seed)
    return out
