"""Command-line entry point: ``run``, ``analyze``, ``table`` and ``smooth``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..analysis import emphasis_report
from ..envs import baird
from ..mdp import TabularPolicy, load_mdp
from .config import ConfigError, ExperimentConfig, defaults
from .sweep import MANIFEST, load_curves, manifest_hash, run_sweep, smooth, variance_table, write_aggregates


def _policy(arg, mdp, default):
    """``uniform``, a JSON file holding the S x A matrix, or for two-action
    MDPs a number giving the probability of action 0 in every state."""
    if arg is None:
        return default
    if arg == "uniform":
        return TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
    try:
        p = float(arg)
    except ValueError:
        return TabularPolicy(json.loads(Path(arg).read_text()))
    if mdp.n_actions != 2:
        raise ValueError("a scalar policy is only defined for two-action MDPs")
    return TabularPolicy(np.tile([p, 1.0 - p], (mdp.n_states, 1)))


def cmd_run(args) -> int:
    if args.print_defaults:
        print(defaults(args.env, args.setting).to_json())
        return 0
    if args.config is None:
        print("run: a config file is required (or use --print-defaults)", file=sys.stderr)
        return 2
    config = ExperimentConfig.load(args.config)
    if args.workers is not None:
        config.workers = args.workers
    manifest = run_sweep(config, args.output)
    print(f"manifest: {manifest}")
    print(f"hash: {manifest_hash(manifest)}")
    return 0


def cmd_analyze(args) -> int:
    if args.mdp == "baird":
        mdp = baird.baird_mdp()
        behavior_default = baird.behavior_policy()
    else:
        mdp = load_mdp(args.mdp)
        behavior_default = TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
    behavior = _policy(args.behavior, mdp, behavior_default)
    target = _policy(args.target, mdp, behavior)
    features = None
    if args.features:
        features = np.array(json.loads(Path(args.features).read_text()), dtype=float)
    interest = None
    if args.interest:
        interest = np.array(json.loads(Path(args.interest).read_text()), dtype=float)
    report = emphasis_report(mdp, behavior, target, interest, features, args.n, args.control)
    text = report.to_json()
    if args.output:
        Path(args.output).write_text(text)
    print(text)
    return 0


def cmd_table(args) -> int:
    path = Path(args.manifest)
    if path.is_dir():
        path = path / MANIFEST
    config = ExperimentConfig.from_dict(json.loads(path.read_text())["config"])
    groups = load_curves(path)
    table = variance_table(groups, config)
    out = Path(args.output) if args.output else path.with_name("table.json")
    out.write_text(json.dumps(table.to_dict(), indent=2))
    write_aggregates(groups, config, out.parent / "aggregates")
    print(table.render())
    return 0


def cmd_smooth(args) -> int:
    data = np.loadtxt(args.csv, delimiter=",", skiprows=1, ndmin=2)
    values = smooth(data[:, 1], args.window)
    lines = ["step,value"] + [f"{int(s)},{v!r}" for s, v in zip(data[:, 0], values.tolist())]
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="truncated-etd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a sweep from a JSON config")
    run.add_argument("config", nargs="?")
    run.add_argument("--output", help="override the config's output_dir")
    run.add_argument("--workers", type=int)
    run.add_argument("--print-defaults", action="store_true",
                     help="print the default config for --env/--setting and exit")
    run.add_argument("--env", default="baird", choices=["baird", "cartpole"])
    run.add_argument("--setting", default="prediction",
                     choices=["prediction", "control-fixed-behavior", "control-changing-behavior"])
    run.set_defaults(func=cmd_run)

    an = sub.add_parser("analyze", help="closed-form emphasis report for a tabular MDP")
    an.add_argument("mdp", help="MDP JSON file, or 'baird'")
    an.add_argument("--behavior")
    an.add_argument("--target")
    an.add_argument("--n", type=int, default=0)
    an.add_argument("--features", help="JSON feature matrix (default: tabular)")
    an.add_argument("--interest", help="JSON interest vector (default: all ones)")
    an.add_argument("--control", action="store_true", help="state-action overload")
    an.add_argument("--output")
    an.set_defaults(func=cmd_analyze)

    tb = sub.add_parser("table", help="average-variance table of a finished sweep")
    tb.add_argument("manifest")
    tb.add_argument("--output")
    tb.set_defaults(func=cmd_table)

    sm = sub.add_parser("smooth", help="trailing moving average of a run CSV")
    sm.add_argument("csv")
    sm.add_argument("--window", type=int, default=10)
    sm.add_argument("--output")
    sm.set_defaults(func=cmd_smooth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
