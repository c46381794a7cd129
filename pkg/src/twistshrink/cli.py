"""Command-line entry point ``twistshrink``.

Configuration is layered: defaults, then a JSON file (``--config``), then
per-key flags, then ``--set key=value`` overrides. Every artifact carries the
resolved config. Exit codes: 0 success, 2 configuration error, 3 runtime
abort (positivity, range, horizon), 4 resource exhaustion; failures also
print a one-line JSON error record on stderr.

Environment: ``TWISTSHRINK_OUT`` sets the default output directory,
``TWISTSHRINK_JOBS`` the default worker count.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import verify
from .errors import ConfigError, HorizonError, PositivityError, RangeError, ResourceError
from .simulate import RunConfig, _counterexample_path, exact_companion, run_ensemble, simulate_qm_path, write_run_csv
from .walker import build_twisted_hierarchy, shrink, write_walks_csv

SUBCOMMANDS = ("simulate", "ensemble", "converge", "verify-martingale", "verify-distribution",
               "verify-residual", "twist-demo", "counterexample")

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, raw):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}; valid keys: {RunConfig.keys()}")
    kind = _FIELD_TYPES[key]
    if raw is None or raw == "null":
        return None
    try:
        if "int" in kind:
            return int(raw)
        if "float" in kind:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key} expects a number, got {raw!r}") from None
    return str(raw)


def build_config(args) -> RunConfig:
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        data.update({k: _coerce(k, v) for k, v in loaded.items()})
    for key in RunConfig.keys():
        v = getattr(args, key, None)
        if v is not None:
            data[key] = v
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        data[k.strip()] = _coerce(k.strip(), v.strip())
    if ("mu" in data or "sigma" in data) and "preset" not in data:
        data["preset"] = None
    return RunConfig.from_dict(data)


def _jobs(args):
    if args.jobs is not None:
        return max(1, args.jobs)
    env = os.environ.get("TWISTSHRINK_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"TWISTSHRINK_JOBS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _outdir(args) -> Path:
    out = Path(args.out or os.environ.get("TWISTSHRINK_OUT") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(path, payload):
    with open(path, "w") as fh:
        json.dump(verify._jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_line(config):
    return "# config: " + json.dumps(config.resolved(), sort_keys=True) + "\n"


def _levels(text: str):
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(s) for s in text.split(",")]
    except ValueError:
        raise ConfigError(f"cannot parse levels {text!r}; use e.g. 3..8 or 3,4,5") from None


# --- subcommands ---------------------------------------------------------------

def cmd_simulate(cfg, args, out):
    run = simulate_qm_path(cfg)
    exact = exact_companion(run)
    path = out / f"{args.name or 'path'}.csv"
    write_run_csv(run, path, exact=exact)
    s = run.summary()
    _dump(out / f"{args.name or 'path'}.json", dict(config=cfg.resolved(), summary=s, csv=path.name))
    return f"simulate: {s['n_steps']} steps, X_m(T)={s['terminal']:.6g} -> {path}"


def cmd_ensemble(cfg, args, out):
    start = time.perf_counter()
    ens = run_ensemble(cfg, cfg.N, jobs=_jobs(args))
    runtime = time.perf_counter() - start
    path = out / "ensemble.csv"
    with open(path, "w", newline="") as fh:
        fh.write(_config_line(cfg))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "X_T", "running_sup", "log_lambda_T", "abort_step"])
        for i in range(ens.terminal.size):
            w.writerow([i, f"{ens.terminal[i]:.17g}", f"{ens.running_sup[i]:.17g}",
                        f"{ens.log_lambda_T[i]:.17g}", int(ens.abort_step[i])])
    s = ens.summary()
    _dump(out / "ensemble.json", dict(config=cfg.resolved(), summary=s, runtime_s=runtime))
    return f"ensemble: N={s['N']} mean X_m(T)={s['terminal_mean']:.6g} +- {s['terminal_se']:.3g}, aborted {s['abort_count']}"


def cmd_converge(cfg, args, out):
    rep = verify.convergence_study(cfg, _levels(args.levels), cfg.fine_level, list(range(cfg.seed, cfg.seed + args.seeds)))
    rep.write_csv(out / "converge.csv")
    _dump(out / "converge.json", dict(config=cfg.resolved(), report=rep.to_dict()))
    print(rep.to_text())
    return f"converge: mean ratio {rep.mean_ratio:.4f}"


def cmd_martingale(cfg, args, out):
    rep = verify.martingale_tests(cfg, cfg.m, cfg.N, n_enum=args.n_enum)
    _dump(out / "martingale.json", dict(config=cfg.resolved(), report=rep.to_dict()))
    print(rep.to_text())
    return f"verify-martingale: mc {'pass' if rep.mc_pass else 'FAIL'}, enumeration {'pass' if rep.enum_pass else 'FAIL'}"


def cmd_distribution(cfg, args, out):
    rep = verify.distribution_test(cfg, cfg.m, cfg.N, threshold=args.threshold, jobs=_jobs(args))
    _dump(out / "distribution.json", dict(config=cfg.resolved(), report=rep.to_dict()))
    return "verify-distribution: " + rep.to_text()


def cmd_residual(cfg, args, out):
    seeds = list(range(cfg.seed, cfg.seed + args.seeds))
    rep = verify.residual_test(cfg, _levels(args.levels), seeds)
    drift = verify.local_drift_test(cfg, _levels(args.levels), seeds) if args.local_drift else None
    payload = dict(config=cfg.resolved(), residual=rep.to_dict())
    if drift is not None:
        payload["local_drift"] = drift.to_dict()
        print(drift.to_text())
    _dump(out / "residual.json", payload)
    return "verify-residual: " + rep.to_text()


def cmd_twist_demo(cfg, args, out):
    hier = build_twisted_hierarchy(cfg.seed, cfg.m, cfg.T)
    walks = [shrink(tw) for tw in hier]
    walks = [w.truncate(w.steps_until(cfg.T)) for w in walks]
    path = out / "walks.csv"
    write_walks_csv(walks, path)
    with open(path) as fh:
        body = fh.read()
    with open(path, "w") as fh:
        fh.write(_config_line(cfg) + body)
    checks = {}
    for lo, hi in zip(hier[:-1], hier[1:]):
        k = min(lo.positions.size, hi.stopping_times.size)
        checks[f"{lo.level}->{hi.level}"] = bool(np.array_equal(hi.positions[hi.stopping_times[:k]], 2 * lo.positions[:k]))
    _dump(out / "walks.json", dict(config=cfg.resolved(), refinement_identity=checks, csv=path.name))
    return f"twist-demo: levels 0..{cfg.m}, refinement identity {'holds' if all(checks.values()) else 'FAILS'} -> {path}"


def cmd_counterexample(cfg, args, out):
    if cfg.preset != "counterexample":
        raise ConfigError("counterexample requires preset 'counterexample'")
    run = simulate_qm_path(cfg)
    p = run.path
    r = cfg.resolved()
    strong = _counterexample_path(p.times, p.W, r["a"], r["d"], r["x0"])
    path = out / "counterexample.csv"
    with open(path, "w", newline="") as fh:
        fh.write(_config_line(cfg))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "t_r", "X_m", "W_m", "X_strong"])
        for i in range(p.n_steps + 1):
            w.writerow([i, f"{p.times[i]:.17g}", f"{p.X[i]:.17g}", f"{p.W[i]:.17g}", f"{strong[i]:.17g}"])
    payload = dict(config=r, summary=run.summary(), min_X_m=float(p.X.min()), min_X_strong=float(strong.min()),
                   X_strong_T=float(strong[-1]), csv=path.name)
    if args.study:
        rep = verify.counterexample_study(r["a"], r["d"], r["x0"], cfg.T, cfg.m, cfg.fine_level, args.study,
                                          cfg.seed, jobs=_jobs(args))
        payload["study"] = rep.to_dict()
        print(rep.to_text())
    _dump(out / "counterexample.json", payload)
    return f"counterexample: min X_m={p.X.min():.4g}, strong X(T)={strong[-1]:.4g} -> {path}"


COMMANDS = {
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "converge": cmd_converge,
    "verify-martingale": cmd_martingale,
    "verify-distribution": cmd_distribution,
    "verify-residual": cmd_residual,
    "twist-demo": cmd_twist_demo,
    "counterexample": cmd_counterexample,
}


def _common(p):
    g = p.add_argument_group("configuration (defaults: preset gbm, T=1, m=5, M=m+4, seed=0, N=1)")
    g.add_argument("--config", help="JSON file with config keys")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key (repeatable)")
    g.add_argument("--preset", choices=["gbm", "linear-sigma", "ou", "counterexample"])
    for k in ("a", "b", "c", "d", "x0", "T"):
        g.add_argument(f"--{k}", type=float)
    g.add_argument("--mu", help="drift expression in t, x")
    g.add_argument("--sigma", help="diffusion expression in t, x")
    g.add_argument("--m", type=int, help="walk level")
    g.add_argument("--M", type=int, help="fine reference level")
    g.add_argument("--seed", type=int)
    g.add_argument("--N", type=int, help="number of paths")
    g.add_argument("--phi-mode", dest="phi_mode", choices=["auto", "analytic", "numeric"])
    g.add_argument("--u-extent", dest="u_extent", type=float)
    p.add_argument("--out", help="output directory (env TWISTSHRINK_OUT, default .)")
    p.add_argument("--jobs", type=int, help="worker threads (env TWISTSHRINK_JOBS, default CPU count)")


def make_parser():
    parser = argparse.ArgumentParser(prog="twistshrink", description="Twist-and-shrink random walk SDE simulation.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "one Q_m path to CSV",
        "ensemble": "N independent Q_m paths, terminal data to CSV",
        "converge": "sup-error study against the level-M proxy",
        "verify-martingale": "E_P Lambda_m = 1 by Monte Carlo and enumeration",
        "verify-distribution": "KS test of X_m(T) against the exact law",
        "verify-residual": "discrete SDE residual trend over levels",
        "twist-demo": "nested walks of levels 0..m",
        "counterexample": "method path paired with the strong solution",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name])
        _common(p)
        if name == "simulate":
            p.add_argument("--name", help="artifact basename (default path)")
        if name == "converge":
            p.add_argument("--levels", default="3..8")
            p.add_argument("--seeds", type=int, default=20)
        if name == "verify-martingale":
            p.add_argument("--n-enum", dest="n_enum", type=int, default=8)
        if name == "verify-distribution":
            p.add_argument("--threshold", type=float, default=0.03)
        if name == "verify-residual":
            p.add_argument("--levels", default="3..7")
            p.add_argument("--seeds", type=int, default=10)
            p.add_argument("--local-drift", action="store_true", help="also run the local drift test")
        if name == "counterexample":
            p.add_argument("--study", type=int, default=0, metavar="N",
                           help="also estimate P(X(T) < 0) over N fine paths")
    return parser


def _fail(kind, code, exc, **extra):
    rec = dict(error=kind, exit_code=code, message=str(exc), **{k: v for k, v in extra.items() if v is not None})
    print(json.dumps(verify._jsonable(rec), sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        out = _outdir(args)
        if args.command == "counterexample" and args.preset is None and not args.config and cfg.preset == "gbm":
            cfg = RunConfig.from_dict({**cfg.__dict__, "preset": "counterexample"})
        print(COMMANDS[args.command](cfg, args, out))
    except ConfigError as exc:
        return _fail("config", 2, exc)
    except PositivityError as exc:
        return _fail("positivity", 3, exc, t=exc.t, x=exc.x)
    except (RangeError, HorizonError) as exc:
        return _fail(type(exc).__name__, 3, exc)
    except ResourceError as exc:
        return _fail("resource", 4, exc, level=exc.level, shortfall=exc.shortfall)
    return 0


if __name__ == "__main__":
    sys.exit(main())
