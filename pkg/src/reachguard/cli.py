"""Command-line front end: ``reachguard {train,eval,oracle,plot,ablate}``.

Exit status: 0 success, 2 bad input (parse errors, unknown keys, missing or
corrupt files), 3 numerical failure or non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time

import numpy as np

from . import config as cfgmod
from .envs import analytic_feasible_grid, make_env
from .errors import (CheckpointError, ConfigurationError, ConvergenceError, DataError,
                     NumericalError, UsageError)

EXIT_INPUT = 2
EXIT_NUMERIC = 3

log = logging.getLogger("reachguard")


def _load_config(args):
    if args.config:
        return cfgmod.load(args.config, args.set or ())
    return cfgmod.parse("", args.set or ())


def _run_dir(out, cfg, tag=""):
    stamp = time.strftime("%Y%m%d-%H%M%S")
    name = f"{cfg.env}_{stamp}_seed{cfg.seed}{tag}"
    path = os.path.join(out, name)
    i = 1
    while os.path.exists(path):
        path = os.path.join(out, f"{name}_{i}")
        i += 1
    return path


def _progress(row):
    print(f"episode {row['episode']:4d}  steps {row['env_steps']:7d}  "
          f"return {row['episode_return']:10.3f}  violations {row['episode_violations']}  "
          f"CTV {row['cumulative_training_violations']}", flush=True)


def cmd_train(args):
    from .trainer import run_training

    cfg = _load_config(args)
    run_dir = args.run_dir or _run_dir(args.out, cfg)
    print(f"run directory: {run_dir}  ({cfg.ablation_name()})", flush=True)
    res = run_training(cfg, run_dir, progress=None if args.quiet else _progress)
    print(f"metrics: {res.metrics_csv}\ncheckpoint: {res.checkpoint}")
    return 0


def cmd_eval(args):
    from .trainer import evaluate

    if not os.path.isfile(args.checkpoint):
        raise FileNotFoundError(f"no such checkpoint: {args.checkpoint}")
    res = evaluate(args.checkpoint, args.episodes, args.n, not args.no_line_search, args.seed,
                   T_ep=args.T_ep)
    print(f"mean_return {res.mean_return:.6g}")
    print(f"mean_violations {res.mean_violations:.6g}")
    print(f"intervention_rate {res.intervention_rate:.6g}")
    print(f"mean_k_star {res.mean_k_star:.6g}")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode", "return", "violations", "steps", "interventions",
                        "mean_k_star"])
            for i, r in enumerate(res.episodes):
                w.writerow([i, repr(r["return"]), r["violations"], r["steps"],
                            r["interventions"], repr(r["mean_k_star"])])
    return 0


def cmd_oracle(args):
    from .plotting import plot_feasible
    from .reachability import default_grid, tabular_reachability

    env = make_env(args.env)
    if not hasattr(env, "a_max"):
        raise UsageError(f"the oracle needs the analytic double integrator, not {args.env}")
    grid = default_grid(args.grid, (-args.extent, args.extent), (-args.extent, args.extent))
    cert = tabular_reachability(env, args.gamma, grid, np.linspace(-1, 1, args.actions),
                                tol=args.tol, max_iter=args.max_iter)
    X, V = np.meshgrid(cert.xs, cert.vs, indexing="ij")
    analytic = analytic_feasible_grid(env, X, V)
    agree = float(np.mean(cert.feasible() == analytic))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "oracle.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "v", "Q_h", "feasible", "analytic_feasible"])
        for x, v, q, f, a in zip(X.ravel(), V.ravel(), cert.value().ravel(),
                                 cert.feasible().ravel(), analytic.ravel()):
            w.writerow([repr(float(x)), repr(float(v)), repr(float(q)), int(f), int(a)])
    plot_feasible(cert, analytic, os.path.join(args.out, "feasible_set.svg"))
    print(f"sweeps {cert.iterations}  residual {cert.residual:.3e}")
    print(f"agreement {100.0 * agree:.2f}%")
    return 0


def _read_run(run_dir):
    from .trainer import read_metrics

    path = os.path.join(run_dir, "metrics.csv")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{run_dir} has no metrics.csv")
    header, rows = read_metrics(path)
    chash = os.path.basename(os.path.normpath(run_dir))
    man = os.path.join(run_dir, "manifest.txt")
    if os.path.isfile(man):
        with open(man, encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("config_hash:"):
                    chash = line.split(":", 1)[1].strip()
    return os.path.basename(os.path.normpath(run_dir)), chash, header, rows


def cmd_plot(args):
    from .plotting import plot_runs

    runs = [_read_run(d) for d in args.run_dirs]
    # seeds differ in config hash only through trainer.seed; group on the rest
    if not args.by_hash:
        runs = [(label, _hash_without_seed(d, chash), h, rows)
                for (label, chash, h, rows), d in zip(runs, args.run_dirs)]
    for p in plot_runs(runs, args.out):
        print(p)
    return 0


def _hash_without_seed(run_dir, fallback):
    path = os.path.join(run_dir, "config.toml")
    if not os.path.isfile(path):
        return fallback
    cfg = cfgmod.load(path)
    return cfgmod.config_hash(cfg.replace(seed=0))


def cmd_ablate(args):
    from .trainer import run_training

    base = _load_config(args)
    out = args.run_dir or _run_dir(args.out, base, "_ablate")
    os.makedirs(out, exist_ok=True)
    seeds = [int(s) for s in args.seeds.split(",")]
    plan = []
    for k in [float(v) for v in args.ks.split(",")]:
        for s in seeds:
            plan.append((f"k{k:+g}_seed{s}", base.replace(phi_inv_beta=k, seed=s)))
    if not args.skip_constraint_on:
        for which in ("shield", "current"):
            for s in seeds:
                plan.append((f"constraint_{which}_seed{s}",
                             base.replace(constraint_on=which, seed=s)))
    summary = []
    for name, cfg in plan:
        print(f"== {name} ({cfg.ablation_name()})", flush=True)
        res = run_training(cfg, os.path.join(out, name))
        ctv = res.rows[-1]["cumulative_training_violations"] if res.rows else 0
        summary.append((name, ctv))
    with open(os.path.join(out, "summary.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "cumulative_training_violations"])
        w.writerows(summary)
    for name, ctv in summary:
        print(f"{name}: CTV {ctv}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="reachguard", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add_cfg(sp):
        sp.add_argument("--config", help="sectioned key=value config file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
        sp.add_argument("--out", default="runs", help="parent directory for run directories")
        sp.add_argument("--run-dir", help="exact run directory (skips the timestamped name)")

    t = sub.add_parser("train", help="run the training loop")
    add_cfg(t)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint without termination")
    e.add_argument("checkpoint")
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--n", type=int, default=10, help="line-search resolution")
    e.add_argument("--no-line-search", action="store_true",
                   help="use the hard action switch instead of the line search")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--T-ep", dest="T_ep", type=int, default=None)
    e.add_argument("--csv", help="write per-episode statistics here")
    e.set_defaults(fn=cmd_eval)

    o = sub.add_parser("oracle", help="grid value iteration on the double integrator")
    o.add_argument("--env", default="double_integrator")
    o.add_argument("--grid", type=int, default=201)
    o.add_argument("--extent", type=float, default=1.5)
    o.add_argument("--actions", type=int, default=5)
    o.add_argument("--gamma", type=float, default=0.999)
    o.add_argument("--tol", type=float, default=1e-6)
    o.add_argument("--max-iter", type=int, default=100000)
    o.add_argument("--out", default="oracle")
    o.set_defaults(fn=cmd_oracle)

    pl = sub.add_parser("plot", help="SVG charts of one or more runs")
    pl.add_argument("run_dirs", nargs="+")
    pl.add_argument("--out", default="plots")
    pl.add_argument("--by-hash", action="store_true",
                    help="group runs by full config hash (seed included)")
    pl.set_defaults(fn=cmd_plot)

    a = sub.add_parser("ablate", help="quantile sweep and constraint-target comparison")
    add_cfg(a)
    a.add_argument("--ks", default="-1,0,1,2,3")
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--skip-constraint-on", action="store_true")
    a.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigurationError, UsageError, CheckpointError, DataError, FileNotFoundError,
            IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, ConvergenceError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
