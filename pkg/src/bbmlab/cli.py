"""Command-line front end.

Subcommands: simulate-bbm, sample-coalescent, sample-csbp, flow-bridges,
estimate-w, solve-fkpp, genealogy-extract, verify.

Configuration lives in flat `key = value` text with [section] headers (one
section per subcommand); command-line flags override file values.  Every
output embeds the sha256 hash of the effective configuration, so a run is
reproducible from its persisted config and seed.

Exit codes: 0 success, 1 soft-gate warnings only, 2 usage error, 3 invalid
configuration, 4 hard verification failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import engine as eng
from . import flows, verify
from .analytics import CsbpParams, derive_params, strip_params
from .coalescent import merge_rates, sample_path
from .fkpp import estimate_w_samples, solve_fkpp_wave
from .genealogy import GenealogyLog, discrete_bridge

EXIT_OK = 0
EXIT_SOFT_WARN = 1
EXIT_USAGE = 2
EXIT_BAD_CONFIG = 3
EXIT_HARD_FAIL = 4


def config_hash(values: dict) -> str:
    """sha256 of the canonical 'section.key = value' listing."""
    lines = [f"{k} = {values[k]}" for k in sorted(values)]
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:16]


def load_config(path: str | None, section: str) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config: {e}") from e
    out = {}
    if parser.has_section(section):
        out.update(parser.items(section))
    return out


class ConfigError(Exception):
    pass


def _effective(args, file_vals: dict, keys: dict) -> dict:
    """Merge config-file values and CLI flags; flags win.  Typed by `keys`."""
    vals = {}
    for key, (typ, default) in keys.items():
        cli = getattr(args, key.replace("-", "_"), None)
        raw = cli if cli is not None else file_vals.get(key, default)
        if raw is None:
            raise ConfigError(f"missing required option {key!r}")
        try:
            vals[key] = typ(raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from e
    return vals


def _write(path: str, text: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def _csv(header: str, rows, chash: str) -> str:
    lines = [f"# config_hash={chash}", header]
    lines += rows
    return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate_bbm(args) -> int:
    keys = {
        "N": (int, 1000),
        "A": (str, "none"),  # none = no right barrier; else offset for kill level
        "mode": (str, "scaled"),  # scaled | strip
        "mu": (float, 1.0),
        "K": (float, 8.0),
        "x0": (float, 4.0),
        "count": (int, 1),
        "horizon": (float, 10.0),
        "checkpoints": (int, 10),
        "seed": (int, 0),
        "out": (str, "out"),
    }
    vals = _effective(args, load_config(args.config, "simulate-bbm"), keys)
    chash = config_hash(vals)
    if vals["mode"] == "scaled":
        a = None if vals["A"] == "none" else float(vals["A"])
        params = derive_params(vals["N"], A=a if a is not None else 0.0)
        barrier = eng.Barrier.none() if a is None else eng.Barrier.kill_at(params.L_A)
        init = eng.InitialCondition.stable_profile(vals["N"])
    elif vals["mode"] == "strip":
        params = strip_params(vals["mu"], vals["K"])
        barrier = eng.Barrier.kill_at(vals["K"])
        init = eng.InitialCondition.point_mass(vals["x0"], vals["count"])
    else:
        raise ConfigError("mode must be scaled or strip")
    cps = tuple(np.linspace(0.0, vals["horizon"], vals["checkpoints"] + 1))
    cfg = eng.SimConfig(
        params=params,
        horizon=vals["horizon"],
        checkpoint_times=cps,
        init=init,
        seed=vals["seed"],
        right_barrier=barrier,
    )
    res = eng.run(cfg)
    rows = [
        ",".join([_fmt(res.grid[k]), _fmt(res.Z[k]), _fmt(res.Y[k]),
                  str(int(res.M[k])), str(int(res.R[k]))])
        for k in range(len(res.grid))
    ]
    _write(os.path.join(vals["out"], "trajectory.csv"), _csv("t,Z,Y,M,R", rows, chash))
    payload = json.loads(res.genealogy.to_json())
    payload["config_hash"] = chash
    _write(os.path.join(vals["out"], "genealogy.json"), json.dumps(payload))
    print(f"simulate-bbm: wrote {vals['out']}/trajectory.csv "
          f"({len(res.grid)} checkpoints, final M={int(res.M[-1])}) hash={chash}")
    if res.aborted:
        print("warning: run aborted at max_particles; trailing rows unfilled")
    return EXIT_OK


def cmd_sample_coalescent(args) -> int:
    keys = {
        "kind": (str, "bsz"),
        "n": (int, 10),
        "horizon": (float, 10.0),
        "replicates": (int, 1),
        "seed": (int, 0),
        "out": (str, "out"),
    }
    vals = _effective(args, load_config(args.config, "sample-coalescent"), keys)
    chash = config_hash(vals)
    kind = {"bsz": "bolthausen_sznitman", "kingman": "kingman"}.get(vals["kind"], vals["kind"])
    gen = np.random.default_rng(vals["seed"])
    if vals["replicates"] == 1:
        path = sample_path(vals["n"], vals["horizon"], kind, gen)
        text = f"# config_hash={chash}\n" + path.to_csv()
        _write(os.path.join(vals["out"], "events.csv"), text)
        print(f"sample-coalescent: {len(path.events)} events -> {vals['out']}/events.csv")
        return EXIT_OK
    counts = np.zeros(vals["n"] - 1, dtype=np.int64)
    for _ in range(vals["replicates"]):
        path = sample_path(vals["n"], math.inf, kind, gen)
        counts[len(path.events[0][1]) - 2] += 1
    rates = merge_rates(vals["n"], kind)
    rows = [
        f"{k},{counts[k - 2]},{_fmt(rates[k - 2] / rates.sum())}"
        for k in range(2, vals["n"] + 1)
    ]
    _write(os.path.join(vals["out"], "khist.csv"),
           _csv("k,count,expected_fraction", rows, chash))
    print("first-event size histogram (k: observed, expected fraction):")
    for k in range(2, vals["n"] + 1):
        print(f"  k={k}: {counts[k-2]}  ({rates[k-2]/rates.sum():.4f})")
    return EXIT_OK


def cmd_sample_csbp(args) -> int:
    keys = {
        "z0": (float, 1.0),
        "a": (float, 0.0),
        "b": (float, 1.0),
        "horizon": (float, 1.0),
        "steps": (int, 10),
        "replicates": (int, 1),
        "log-space": (int, 0),
        "seed": (int, 0),
        "out": (str, "out"),
    }
    vals = _effective(args, load_config(args.config, "sample-csbp"), keys)
    chash = config_hash(vals)
    cp = CsbpParams(a=vals["a"], b=vals["b"])
    gen = np.random.default_rng(vals["seed"])
    times = np.linspace(0.0, vals["horizon"], vals["steps"] + 1)
    rows = []
    for r in range(vals["replicates"]):
        if vals["log-space"]:
            z = flows.csbp_log_trajectory(math.log(vals["z0"]), times, cp, gen)
        else:
            z = flows.csbp_trajectory(vals["z0"], times, cp, gen)
        rows += [f"{r},{_fmt(t)},{_fmt(v)}" for t, v in zip(times, z)]
    col = "logZ" if vals["log-space"] else "Z"
    _write(os.path.join(vals["out"], "csbp.csv"), _csv(f"rep,t,{col}", rows, chash))
    print(f"sample-csbp: wrote {vals['out']}/csbp.csv hash={chash}")
    return EXIT_OK


def cmd_flow_bridges(args) -> int:
    keys = {
        "s": (float, 0.0),
        "t": (float, 0.5),
        "z0": (float, 1.0),
        "a": (float, 0.0),
        "b": (float, 1.0),
        "gaps": (int, 4096),
        "seed": (int, 0),
        "out": (str, "out"),
    }
    vals = _effective(args, load_config(args.config, "flow-bridges"), keys)
    chash = config_hash(vals)
    cp = CsbpParams(a=vals["a"], b=vals["b"])
    gen = np.random.default_rng(vals["seed"])
    fb = flows.bridge_from_flow(vals["s"], vals["t"], vals["z0"], cp, vals["gaps"], gen)
    text = f"# config_hash={chash}\n# residual_fraction={fb.residual_fraction:.6g}\n"
    text += fb.bridge.to_csv()
    _write(os.path.join(vals["out"], "bridge.csv"), text)
    print(f"flow-bridges: alpha={fb.alpha:.6g} residual={fb.residual_fraction:.3g} "
          f"-> {vals['out']}/bridge.csv")
    return EXIT_OK


def cmd_estimate_w(args) -> int:
    keys = {
        "y": (float, 8.0),
        "replicates": (int, 10_000),
        "seed": (int, 0),
        "out": (str, "out"),
    }
    vals = _effective(args, load_config(args.config, "estimate-w"), keys)
    chash = config_hash(vals)
    expd = estimate_w_samples(vals["y"], vals["replicates"], vals["seed"])
    rows = [f"{int(z)},{_fmt(w)}" for z, w in zip(expd.zy_samples, expd.w_samples)]
    text = _csv("Zy,w", rows, chash)
    _write(os.path.join(vals["out"], "w_samples.csv"), text)
    print(f"estimate-w: {expd.zy_samples.size} samples ({expd.n_flagged} flagged) "
          f"median w={np.median(expd.w_samples):.4f} -> {vals['out']}/w_samples.csv")
    return EXIT_OK


def cmd_solve_fkpp(args) -> int:
    keys = {
        "xmax": (float, 15.0),
        "tolerance": (float, 1e-8),
        "out": (str, "out"),
    }
    vals = _effective(args, load_config(args.config, "solve-fkpp"), keys)
    chash = config_hash(vals)
    wave = solve_fkpp_wave(x_max=vals["xmax"], tolerance=vals["tolerance"])
    rows = [f"{_fmt(x)},{_fmt(p)}" for x, p in zip(wave.x, wave.psi)]
    _write(os.path.join(vals["out"], "wave.csv"), _csv("x,psi", rows, chash))
    print(f"solve-fkpp: {wave.x.size} grid points -> {vals['out']}/wave.csv")
    return EXIT_OK


def cmd_genealogy_extract(args) -> int:
    keys = {
        "log": (str, None),
        "j": (int, 0),
        "k": (int, 1),
        "N": (int, 1000),
        "out": (str, "out"),
    }
    vals = _effective(args, load_config(args.config, "genealogy-extract"), keys)
    chash = config_hash(vals)
    with open(vals["log"], encoding="utf-8") as f:
        log = GenealogyLog.from_json(f.read())
    params = derive_params(vals["N"])
    bridge = discrete_bridge(log, vals["j"], vals["k"], params)
    text = f"# config_hash={chash}\n" + bridge.to_csv()
    _write(os.path.join(vals["out"], f"bridge_{vals['j']}_{vals['k']}.csv"), text)
    print(f"genealogy-extract: bridge {vals['j']}->{vals['k']} "
          f"({bridge.xs.size} breakpoints)")
    return EXIT_OK


def cmd_verify(args) -> int:
    keys = {"seed": (int, 0)}
    vals = _effective(args, load_config(args.config, "verify"), keys)
    chash = config_hash({**vals, "suite": args.suite})
    names = list(verify.SUITES) if args.suite == "all" else [args.suite]
    unknown = [n for n in names if n not in verify.SUITES]
    if unknown:
        print(f"unknown suite(s): {unknown}; options: {sorted(verify.SUITES)}",
              file=sys.stderr)
        return EXIT_USAGE
    hard_fail = soft_fail = 0
    for name in names:
        reports = verify.run_suite(name, seed=vals["seed"])
        for r in reports:
            r.config_hash = chash
            print(r.line())
            if not r.passed:
                if r.hard:
                    hard_fail += 1
                else:
                    soft_fail += 1
    if hard_fail:
        print(f"verify: {hard_fail} hard failure(s)")
        return EXIT_HARD_FAIL
    if soft_fail:
        print(f"verify: {soft_fail} soft warning(s)")
        return EXIT_SOFT_WARN
    print("verify: all gates passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# dispatch


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="bbmlab",
        description="Branching Brownian motion with absorption: simulation "
        "and verification laboratory.",
    )
    sub = top.add_subparsers(dest="command")

    def add(name, fn, options):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="INI config file")
        for opt, typ in options:
            p.add_argument(f"--{opt}", type=typ, default=None)
        p.set_defaults(fn=fn)
        return p

    add("simulate-bbm", cmd_simulate_bbm,
        [("N", int), ("A", str), ("mode", str), ("mu", float), ("K", float),
         ("x0", float), ("count", int), ("horizon", float),
         ("checkpoints", int), ("seed", int), ("out", str)])
    add("sample-coalescent", cmd_sample_coalescent,
        [("kind", str), ("n", int), ("horizon", float), ("replicates", int),
         ("seed", int), ("out", str)])
    add("sample-csbp", cmd_sample_csbp,
        [("z0", float), ("a", float), ("b", float), ("horizon", float),
         ("steps", int), ("replicates", int), ("log-space", int),
         ("seed", int), ("out", str)])
    add("flow-bridges", cmd_flow_bridges,
        [("s", float), ("t", float), ("z0", float), ("a", float), ("b", float),
         ("gaps", int), ("seed", int), ("out", str)])
    add("estimate-w", cmd_estimate_w,
        [("y", float), ("replicates", int), ("seed", int), ("out", str)])
    add("solve-fkpp", cmd_solve_fkpp,
        [("xmax", float), ("tolerance", float), ("out", str)])
    add("genealogy-extract", cmd_genealogy_extract,
        [("log", str), ("j", int), ("k", int), ("N", int), ("out", str)])
    pv = sub.add_parser("verify")
    pv.add_argument("suite")
    pv.add_argument("--config", default=None)
    pv.add_argument("--seed", type=int, default=None)
    pv.set_defaults(fn=cmd_verify)
    return top


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit:
        return EXIT_USAGE
    if extra or args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (ValueError, KeyError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())
