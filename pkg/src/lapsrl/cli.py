"""Command line entry point: ``lapsrl run | check | fit``."""

from __future__ import annotations

import argparse
import json
import sys

from .harness import ConfigError, ExperimentConfig, curve_from_rows, read_rows, run_experiment, sublinearity_fit

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lapsrl", description="Langevin posterior sampling RL experiments")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write a results CSV")
    run.add_argument("--config", help="JSON experiment config")
    run.add_argument("--env", choices=["bandit", "cartpole", "reacher"])
    run.add_argument("--agent", choices=["psrl", "lapsrl"])
    run.add_argument("--chained", action="store_true", default=None, help="chain Langevin samples across episodes")
    run.add_argument("--alpha-scale", type=float, help="declared LSI constant per data point")
    run.add_argument("--episodes", type=int)
    run.add_argument("--seeds", type=int, help="run seeds 0..N-1")
    run.add_argument("--eps-mode", choices=["alg2", "corollary"])
    run.add_argument("--out", help="results CSV path")

    sub.add_parser("check", help="run the built-in oracle checks")

    fit = sub.add_parser("fit", help="print the sublinearity exponent of a results CSV")
    fit.add_argument("--in", dest="infile", required=True)
    fit.add_argument("--burn-in", type=float, default=0.1)
    return p


def load_config(args) -> ExperimentConfig:
    d = {}
    if args.config:
        try:
            with open(args.config) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config!r}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    if args.env and d.get("env", {}).get("kind") != args.env:
        d["env"] = {"kind": args.env}
    agent = dict(d.get("agent", {"kind": "psrl"}))
    if args.agent:
        agent["kind"] = args.agent
    if args.chained:
        agent["chained"] = True
    if args.alpha_scale is not None:
        agent["alpha_scale"] = args.alpha_scale
    if args.eps_mode:
        agent["eps_mode"] = args.eps_mode
    d["agent"] = agent
    if args.episodes is not None:
        d["episodes"] = args.episodes
    if args.seeds is not None:
        d["seeds"] = args.seeds
    if args.out:
        d["out"] = args.out
    return ExperimentConfig.from_dict(d)


def cmd_run(args) -> int:
    cfg = load_config(args)
    report = run_experiment(cfg)
    s = report.summary
    if "mean_cumulative_regret" in s:
        print(f"wrote {report.out} ({len(report.rows)} rows); mean cumulative regret "
              f"{s['mean_cumulative_regret'][-1]:.4g} +- {s['se_cumulative_regret'][-1]:.2g}")
    for seed, err in report.errors.items():
        print(f"seed {seed} failed: {err}", file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_FAILED


def cmd_fit(args) -> int:
    try:
        rows = read_rows(args.infile)
        fit = sublinearity_fit(curve_from_rows(rows), burn_in=args.burn_in)
    except (OSError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    flag = "  (degenerate: zero regret)" if fit.degenerate else ""
    print(f"{fit.exponent:.6f}{flag}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "fit":
            return cmd_fit(args)
        from .checks import run_checks
        return EXIT_OK if run_checks() else EXIT_FAILED
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
