"""Command line front end: emlab <experiment-id> --config cfg.json [...]."""

import argparse
import json
import os
import sys

from .experiments import (EXPERIMENTS, TOL_DEFAULTS, ExperimentConfig,
                          UnknownExperimentError, emit_report, run_experiment)


def _tol_pair(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    key, _, val = text.partition("=")
    try:
        return key, float(val)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad tolerance value {val!r}") from exc


def build_parser():
    parser = argparse.ArgumentParser(
        prog="emlab",
        description="elliptic measure laboratory: run numerical experiments")
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("list", help="list experiment ids and config schemas")
    for exp_id in EXPERIMENTS:
        p = sub.add_parser(exp_id, help=EXPERIMENTS[exp_id][1])
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--tol", action="append", type=_tol_pair, default=[],
                       metavar="K=V", help="override one tolerance")
    return parser


def _print_list():
    print("experiments:")
    for exp_id, (_, summary) in EXPERIMENTS.items():
        print(f"  {exp_id:24s}{summary}")
        tols = ", ".join(f"{k}={v}" for k, v in TOL_DEFAULTS[exp_id].items())
        print(f"  {'':24s}config: domain, coeff, phi, scales, seed, "
              f"tolerances, out")
        print(f"  {'':24s}default tolerances: {tols}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    if args.command == "list":
        _print_list()
        return 0

    with open(args.config) as fh:
        raw = json.load(fh)
    if args.seed is not None:
        raw["seed"] = args.seed
    tols = dict(raw.get("tolerances") or {})
    tols.update(dict(args.tol))
    raw["tolerances"] = tols
    try:
        config = ExperimentConfig.from_dict(raw, experiment=args.command)
    except (UnknownExperimentError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out = args.out or config.out or os.path.join("runs", config.experiment)
    report = run_experiment(config)
    emit_report(report, out)
    width = max((len(r["name"]) for r in report.rows), default=4)
    for row in report.rows:
        status = "pass" if row["pass"] else "FAIL"
        note = f"  ({row['note']})" if row["note"] else ""
        print(f"{status}  {row['name']:{width}s}  value={row['value']:.6g}  "
              f"bound={row['bound']:.6g}{note}")
    print(f"wrote {len(report.artifacts)} artifacts to {out}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
