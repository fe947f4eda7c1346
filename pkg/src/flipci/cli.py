"""Command-line interface: ``flipci {test,confint,simulate,deg}``.

Every run first prints its fully resolved configuration as a single
``# config: {...}`` JSON line.  Saving that JSON to a file and passing it
back through ``--config`` replays the run.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .baselines import sandwich_interval, wald_interval
from .errors import (ConvergenceError, DegenerateModelError, DesignError, InputError,
                     ZeroVarianceError)
from .families import estimate_theta_mom, family_from_name
from .flips import generate_flips, sign_flip_test
from .glm import DesignSplit, fit_full
from .inversion import CiConfig, confint
from .simulation import (SCENARIOS, Scenario, SimulationError, run_scenario, write_reps_csv,
                         write_summary_csv)

EXIT_INPUT = 2
EXIT_NUMERIC = 3
FAMILIES = ("gaussian", "bernoulli", "poisson", "negbin")


def load_data_csv(path, intercept: bool = True):
    """Read ``y,x,z1..zp`` data; returns ``(y, DesignSplit)``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        header = [h.strip() for h in next(reader, [])]
        if header[:2] != ["y", "x"]:
            raise InputError(f"{path}: header must start with y,x")
        zcols = [h for h in header[2:] if h]
        rows = []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise InputError(f"{path}: row {r}: non-numeric cell") from None
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    y, x = data[:, 0], data[:, 1]
    Z = data[:, 2:2 + len(zcols)]
    if intercept:
        Z = np.column_stack([np.ones(len(y)), Z])
    if Z.shape[1] == 0:
        raise InputError("no nuisance covariates and no intercept")
    return y, DesignSplit(x, Z)


def _family(args, y):
    theta = None
    if args.family == "negbin":
        theta = args.theta if args.theta is not None else estimate_theta_mom(y)
    return family_from_name(args.family, theta), theta


def _echo(config: dict, out=None) -> str:
    line = "config: " + json.dumps(config, sort_keys=True)
    print("# " + line, file=out or sys.stdout)
    return line


def _resolved(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}


def _num(v) -> str:
    return repr(float(v))


def cmd_test(args) -> int:
    if args.w < 2:
        raise InputError("--w must be at least 2")
    y, design = load_data_csv(args.data, not args.no_intercept)
    family, theta = _family(args, y)
    cfg = _resolved(args)
    cfg["theta"] = theta
    _echo(cfg)
    fit = fit_full(family, y, design)
    beta0 = fit.beta_hat if args.beta0 is None else args.beta0
    ens = generate_flips(design.n, args.w, args.seed)
    res = sign_flip_test(family, y, design, beta0, args.alternative, ens, not args.effective)
    print("estimate,beta0,alternative,w,statistic,p_value")
    print(",".join([_num(fit.beta_hat), _num(beta0), args.alternative, str(args.w),
                    _num(res.statistic), _num(res.p_value)]))
    return 0


def cmd_confint(args) -> int:
    if args.w < 2:
        raise InputError("--w must be at least 2")
    y, design = load_data_csv(args.data, not args.no_intercept)
    family, theta = _family(args, y)
    cfg = _resolved(args)
    cfg["theta"] = theta
    _echo(cfg)
    alpha = 1.0 - args.level
    if args.method in ("wald", "sandwich"):
        fit = fit_full(family, y, design)
        ci = wald_interval(fit, alpha) if args.method == "wald" else \
            sandwich_interval(fit, design, alpha, args.hc1)
    else:
        conf = CiConfig(level=args.level, method=args.method, tol_fraction=args.tol_fraction,
                        w=args.w, seed=args.seed, standardized=not args.effective)
        ci = confint(family, y, design, conf)
    print("method,level,estimate,lower,upper,width,p_evaluations")
    print(",".join([ci.method, _num(ci.level), _num(ci.estimate), _num(ci.lower),
                    _num(ci.upper), _num(ci.width), str(ci.p_evaluations)]))
    return 0


def cmd_simulate(args) -> int:
    if args.w < 2 or args.reps < 1:
        raise InputError("--w must be at least 2 and --reps at least 1")
    scenario = Scenario(args.scenario, hetero_lambda=args.hetero_lambda,
                        negbin_theta=args.negbin_theta)
    cfg = _resolved(args)
    line = _echo(cfg)
    alpha = 1.0 - args.level
    summaries, reps = [], []
    for N in args.N:
        s, r = run_scenario(scenario, N, args.reps, alpha, args.w, args.seed,
                            n_jobs=args.threads, return_reps=True)
        summaries.append(s)
        reps.append((N, r))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_summary_csv(fh, summaries, [line])
    else:
        write_summary_csv(sys.stdout, summaries)
    if args.reps_out:
        with open(args.reps_out, "w", newline="") as fh:
            for i, (N, r) in enumerate(reps):
                write_reps_csv(fh, scenario, N, r, [line] if i == 0 else ())
    return 0


def cmd_deg(args) -> int:
    from .deg import DegConfig, run_pipeline

    if args.w < 2:
        raise InputError("--w must be at least 2")
    cfg = _resolved(args)
    line = _echo(cfg)
    conf = DegConfig(level=args.level, w=args.w, seed=args.seed, theta=args.theta,
                     symmetric=args.symmetric, min_per_group=args.min_per_group,
                     standardized=not args.effective, small_sample=args.hc1)
    out = Path(args.out)
    _, summary = run_pipeline(args.counts, args.covariates, out / "results.csv",
                              out / "summary.csv", conf, args.threads, [line])
    skipped = next(v for m, _, _, v in summary if m == "genes_skipped")
    total = next(v for m, _, _, v in summary if m == "genes_total")
    print(f"genes,{total}\nskipped,{skipped}\nresults,{out / 'results.csv'}\n"
          f"summary,{out / 'summary.csv'}")
    if total and skipped / total > 0.2:
        print("warning: more than 20% of genes were skipped", file=sys.stderr)
    return 0


def _common(p, w_default=1000):
    p.add_argument("--config", help="JSON file with a previously echoed config to replay")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--w", type=int, default=w_default, help="number of sign flips")
    p.add_argument("--threads", type=int, default=1)


def _model_opts(p):
    p.add_argument("data", nargs="?", help="CSV with columns y,x,z1..zp")
    p.add_argument("--family", choices=FAMILIES, default="gaussian")
    p.add_argument("--theta", type=float, default=None,
                   help="negbin size; moment estimate on the intercept model if omitted")
    p.add_argument("--no-intercept", action="store_true")
    p.add_argument("--effective", action="store_true",
                   help="use the effective score instead of the standardized one")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flipci", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("test", help="one-sided sign-flip score test")
    _model_opts(p)
    _common(p)
    p.add_argument("--beta0", type=float, default=None, help="null value (default: the MLE)")
    p.add_argument("--alternative", choices=("greater", "less"), default="greater")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("confint", help="confidence interval for the x coefficient")
    _model_opts(p)
    _common(p)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--method", choices=("equitailed", "symmetric", "wald", "sandwich"),
                   default="equitailed")
    p.add_argument("--tol-fraction", type=float, default=1.0 / 1024)
    p.add_argument("--hc1", action="store_true", help="small-sample sandwich factor")
    p.set_defaults(func=cmd_confint)

    p = sub.add_parser("simulate", help="coverage simulation")
    _common(p)
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--N", type=int, nargs="+", default=[50])
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--hetero-lambda", type=float, default=1.0)
    p.add_argument("--negbin-theta", type=float, default=1.0)
    p.add_argument("--out", help="summary CSV path (default: stdout)")
    p.add_argument("--reps-out", help="optional per-replication CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("deg", help="differential-expression interval pipeline")
    _common(p)
    p.add_argument("--counts")
    p.add_argument("--covariates")
    p.add_argument("--out", help="output directory")
    p.add_argument("--theta", type=float, default=None,
                   help="fixed negbin size for all genes (default: per-gene moment estimate)")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--symmetric", action="store_true", help="also build symmetric intervals")
    p.add_argument("--min-per-group", type=int, default=10)
    p.add_argument("--effective", action="store_true")
    p.add_argument("--hc1", action="store_true")
    p.set_defaults(func=cmd_deg)
    parser.subcommands = sub.choices
    return parser


REQUIRED = {"test": ("data",), "confint": ("data",), "simulate": ("scenario",),
            "deg": ("counts", "covariates", "out")}


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        cfg = json.loads(Path(args.config).read_text())
        if cfg.pop("subcommand", args.subcommand) != args.subcommand:
            raise InputError("config file belongs to a different subcommand")
        parser.subcommands[args.subcommand].set_defaults(**cfg)
        args = parser.parse_args(argv)
    missing = [k for k in REQUIRED[args.subcommand] if getattr(args, k) is None]
    if missing:
        raise InputError(f"missing required argument(s): {', '.join(missing)}")
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
    except (OSError, json.JSONDecodeError, InputError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, DesignError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, DegenerateModelError, ZeroVarianceError, SimulationError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
