#!/usr/bin/env python3
"""Main entry point for coworld."""

import argparse
import logging
import sys

from . import __version__
from .cli import CLI
from .config.settings import ABLATIONS
from .utils.logging import setup_logging


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coworld",
        description="coworld - offline visual RL transfer by co-training source and target world models",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"coworld {__version__}",
    )
    parser.add_argument('-v', '--verbose', action='store_true', help='Log per-update losses (DEBUG)')

    # Add subcommands
    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    # Dataset generation
    gen_parser = subparsers.add_parser('gen-dataset', help='Record a medium-replay offline dataset')
    gen_parser.add_argument('--env', required=True, help='Env preset (flat, downhill, ...) or EnvSpec JSON file')
    gen_parser.add_argument('--out', required=True, help='Output dataset directory')
    gen_parser.add_argument('--budget', type=int, help='Step budget (default: dataset.budget_steps)')
    gen_parser.add_argument('--seed', type=int, default=0, help='Seed (default: 0)')
    gen_parser.add_argument('--config', help='Config file for agent sizes and schedule')
    gen_parser.add_argument('--force', action='store_true', help='Overwrite a non-empty output directory')
    gen_parser.add_argument('--set', action='append', default=[], dest='overrides', metavar='KEY=VALUE',
                            help='Config override in dot notation (repeatable)')

    # Training
    train_parser = subparsers.add_parser('train', help='Pretrain the source agent and co-train')
    train_parser.add_argument('--config', help='JSON config file')
    train_parser.add_argument('--dataset', help='Offline dataset directory')
    train_parser.add_argument('--run-dir', help='Run directory (default: $CWLD_RUN_DIR/<ablation>-seed<seed>)')
    train_parser.add_argument('--ablation', choices=ABLATIONS, help='Disable alignment and/or value regularization')
    train_parser.add_argument('--seed', type=int, help='Seed override')
    train_parser.add_argument('--print-config', action='store_true', help='Print the resolved config and exit')
    train_parser.add_argument('--force', action='store_true', help='Overwrite a non-empty run directory')
    train_parser.add_argument('--set', action='append', default=[], dest='overrides', metavar='KEY=VALUE',
                              help='Config override in dot notation (repeatable)')

    # Evaluation
    eval_parser = subparsers.add_parser('eval', help='Evaluate a checkpoint')
    eval_parser.add_argument('--checkpoint', required=True, help='Checkpoint file')
    eval_parser.add_argument('--env', help="Env preset or EnvSpec file (default: the checkpoint's env)")
    eval_parser.add_argument('--episodes', type=int, default=10, help='Evaluation episodes (default: 10)')
    eval_parser.add_argument('--seed', type=int, default=0, help='Seed (default: 0)')
    eval_parser.add_argument('--value-horizon', type=int, help='Also run the value diagnostic over N steps')
    eval_parser.add_argument('--out', help='Write the JSON report to this file')
    eval_parser.add_argument('--dump-frames', help='Write the open-loop prediction strip to this directory')
    eval_parser.add_argument('--dataset', help='Dataset to take the open-loop episode from')

    # Plots
    plot_parser = subparsers.add_parser('plot', help='Render figures from metrics.csv')
    plot_parser.add_argument('--run-dir', required=True, help='Run directory')
    plot_parser.add_argument('--out', help='Output directory (default: <run-dir>/plots)')

    # Comparison
    compare_parser = subparsers.add_parser('compare', help='Compare the final target agents of several runs')
    compare_parser.add_argument('--run-dir', action='append', required=True, dest='run_dirs',
                                help='Run directory (repeat for each run)')
    compare_parser.add_argument('--out', help='Output JSON (default: comparison.json)')

    # Config
    config_parser = subparsers.add_parser('print-config', help='Print the resolved configuration')
    config_parser.add_argument('--config', help='JSON config file')
    config_parser.add_argument('--set', action='append', default=[], dest='overrides', metavar='KEY=VALUE',
                               help='Config override in dot notation (repeatable)')
    config_parser.add_argument('--get', dest='key', metavar='KEY', help='Print a single value (dot notation)')
    config_parser.add_argument('--save', help='Write the resolved configuration to this file')

    return parser


def main(argv=None) -> int:
    """Main entry point for the application."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 0

    setup_logging(logging.DEBUG if args.verbose else logging.INFO)
    cli = CLI()

    if args.command == 'gen-dataset':
        return cli.gen_dataset(args.env, args.out, args.budget, args.seed, args.config, args.force,
                               args.overrides)

    elif args.command == 'train':
        return cli.train(args.config, args.dataset, args.run_dir, args.ablation, args.seed,
                         args.print_config, args.force, args.overrides)

    elif args.command == 'eval':
        return cli.evaluate(args.checkpoint, args.env, args.episodes, args.seed, args.value_horizon,
                            args.out, args.dump_frames, args.dataset)

    elif args.command == 'plot':
        return cli.plot(args.run_dir, args.out)

    elif args.command == 'compare':
        return cli.compare(args.run_dirs, args.out)

    elif args.command == 'print-config':
        return cli.print_config(args.config, args.overrides, args.key, args.save)

    return 0


if __name__ == "__main__":
    sys.exit(main())
