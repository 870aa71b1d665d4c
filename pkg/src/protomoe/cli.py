"""Command-line front end.

Subcommands: train, train-diffproto, eval, trace, plot, init-config, sweep.
Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import subprocess
import sys

import numpy as np

from .core import ConfigError, NumericalError, seeded_rng
from .driver import (ExperimentConfig, config_to_text, load_config,
                     run_diffproto, run_experiment)
from .envs import evaluate, make_env
from .policy_io import load_policy
from .reporting import export_activation_trace, plot_learning_curve


def _add_train_args(p):
    p.add_argument("--config", help="configuration file (key = value lines)")
    p.add_argument("--seed", type=int, help="override the seed")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--env", help="override the environment id")
    p.add_argument("--clusters", type=int, help="override the prototype count")
    p.add_argument("--iterations", type=int, help="override the iteration count")
    p.add_argument("--steps", type=int, help="override steps per iteration")
    p.add_argument("--archive-states", action="store_true",
                   help="store all visited states for provenance checks")


def _resolve_config(args, diffproto: bool) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.env is not None:
        overrides["env"] = args.env
    if args.clusters is not None:
        overrides["clusters"] = args.clusters
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.steps is not None:
        overrides["steps_per_iteration"] = args.steps
    if args.archive_states:
        overrides["archive_states"] = True
    overrides["diffproto"] = diffproto
    config = dataclasses.replace(config, **overrides)
    config.validate()
    return config


def cmd_train(args) -> int:
    config = _resolve_config(args, diffproto=False)
    result = run_experiment(config, out_dir=args.out_dir)
    last = result.records[-1]
    print(f"done: {len(result.records)} iterations, "
          f"final eval return {last.eval_return_mean:.2f}, "
          f"live clusters {last.active_clusters}")
    return 0


def cmd_train_diffproto(args) -> int:
    config = _resolve_config(args, diffproto=True)
    result = run_diffproto(config, out_dir=args.out_dir)
    last = result.records[-1]
    print(f"done (diffproto): {len(result.records)} iterations, "
          f"final eval return {last.eval_return_mean:.2f}")
    return 0


def cmd_eval(args) -> int:
    policy = load_policy(args.policy)
    env = make_env(args.env)
    if env.dim_s != policy.state_dim or env.dim_a != policy.action_dim:
        raise ConfigError(f"policy dims ({policy.state_dim}, {policy.action_dim}) "
                          f"do not match environment {args.env!r}")
    returns = evaluate(env, policy, seeded_rng(args.seed), args.episodes)
    print(f"mean return {np.mean(returns):.3f} over {len(returns)} episodes")
    for r in returns:
        print(repr(r))
    return 0


def cmd_trace(args) -> int:
    policy = load_policy(args.policy)
    env = make_env(args.env)
    steps = export_activation_trace(policy, env, args.seed, args.out)
    print(f"wrote {steps} steps to {args.out}")
    return 0


def cmd_plot(args) -> int:
    plot_learning_curve(args.logs, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_init_config(args) -> int:
    text = config_to_text(ExperimentConfig())
    if args.out:
        with open(args.out, "w", encoding="ascii") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    """Launch one training process per seed; seed s writes to <out-dir>/seed<s>."""
    procs = []
    for seed in args.seeds:
        out = os.path.join(args.out_dir, f"seed{seed}")
        cmd = [sys.executable, "-m", "protomoe.cli",
               "train-diffproto" if args.diffproto else "train",
               "--out-dir", out, "--seed", str(seed)]
        if args.config:
            cmd += ["--config", args.config]
        if args.env:
            cmd += ["--env", args.env]
        if args.clusters is not None:
            cmd += ["--clusters", str(args.clusters)]
        if args.iterations is not None:
            cmd += ["--iterations", str(args.iterations)]
        if args.archive_states:
            cmd += ["--archive-states"]
        procs.append((seed, subprocess.Popen(cmd)))
    rc = 0
    for seed, proc in procs:
        code = proc.wait()
        print(f"seed {seed}: exit {code}")
        rc = rc or code
    return rc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protomoe")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a standard experiment")
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-diffproto",
                       help="run the gradient-learned-prototypes ablation")
    _add_train_args(p)
    p.set_defaults(func=cmd_train_diffproto)

    p = sub.add_parser("eval", help="evaluate a serialized policy")
    p.add_argument("--policy", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trace", help="export a cluster-activation trace")
    p.add_argument("--policy", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("plot", help="render learning curves from metrics logs")
    p.add_argument("logs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("init-config", help="emit a config file with all defaults")
    p.add_argument("--out")
    p.set_defaults(func=cmd_init_config)

    p = sub.add_parser("sweep", help="run several seeds as independent processes")
    p.add_argument("--seeds", type=int, nargs="+", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--env")
    p.add_argument("--clusters", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--diffproto", action="store_true")
    p.add_argument("--archive-states", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
