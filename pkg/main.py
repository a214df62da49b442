"""
Hypergrid Replay Experiments
Command-line entry point: single runs, seeded sweep matrices, learning-curve plots and study checks.

    python main.py run --config configs/regimes_r0_1e-3.cfg --set regime=random
    python main.py matrix --config configs/replay_sample_sweep.cfg --sweep batch_replay=4,8,12,16
    python main.py plot results/aggregates/*.csv --column modes_pct --out figure.svg
    python main.py check --regimes results/regimes_r0_1e-3 --sample-sweep results/replay_sample_sweep
"""

import argparse
import logging
import sys

from acceptance import check_studies
from errors import GFlowNetError
from experiment_harness import (
    DEFAULT_SEEDS,
    default_workers,
    load_aggregate,
    parse_config,
    parse_seeds,
    parse_sweeps,
    run,
    run_matrix,
)
from learning_curves import PlotAxes, emit_plot

logger = logging.getLogger("hypergrid")

AXIS_LABELS = {
    'modes_pct': 'modes found (fraction)',
    'modes_found': 'modes found',
    'empirical_l1': 'empirical L1',
    'mean_loss': 'training loss',
    'mean_online_reward': 'mean online reward',
}


def build_parser():
    parser = argparse.ArgumentParser(description="GFlowNet replay experiments on the hypergrid")
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    commands = parser.add_subparsers(dest='command', required=True)

    def add_config_flags(sub):
        sub.add_argument('--config', help="flat key = value config file")
        sub.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                         help="override one config key (repeatable)")
        sub.add_argument('--out-dir', help="output directory (overrides out_dir)")

    run_cmd = commands.add_parser('run', help="train one configuration")
    add_config_flags(run_cmd)
    run_cmd.add_argument('--no-progress', action='store_true', help="hide the progress bar")

    matrix_cmd = commands.add_parser('matrix', help="sweep configuration keys across seeds")
    add_config_flags(matrix_cmd)
    matrix_cmd.add_argument('--sweep', action='append', default=[], metavar='KEY=V1,V2',
                            help="values to sweep for one key (repeatable)")
    matrix_cmd.add_argument('--seeds', default=','.join(map(str, DEFAULT_SEEDS)), help="comma-separated seeds")
    matrix_cmd.add_argument('--workers', type=int, default=default_workers(), help="parallel runs")

    plot_cmd = commands.add_parser('plot', help="draw aggregate CSVs as learning curves")
    plot_cmd.add_argument('aggregates', nargs='+', help="aggregate CSV files")
    plot_cmd.add_argument('--column', default='modes_pct', help="metric to plot")
    plot_cmd.add_argument('--labels', help="comma-separated legend labels, one per file")
    plot_cmd.add_argument('--title', default='')
    plot_cmd.add_argument('--out', required=True, help="target .svg or .html file")

    check_cmd = commands.add_parser('check', help="check finished study matrices against the expected orderings")
    check_cmd.add_argument('--regimes', help="matrix directory of the none / random / rprs sweep")
    check_cmd.add_argument('--sample-sweep', help="matrix directory of the batch_replay=4..16 sweep")
    check_cmd.add_argument('--control', help="matrix directory of the batch-32 no-buffer control")
    check_cmd.add_argument('--rprs', help="matrix directory of the 16 + 16 R-PRS run")
    return parser


def command_run(args):
    overrides = list(args.overrides) + ([f"out_dir={args.out_dir}"] if args.out_dir else [])
    config = parse_config(args.config, overrides)
    result = run(config, progress=not args.no_progress)
    if result.failed:
        logger.error("❌ Run failed: %s (partial metrics in %s)", result.message, result.csv_path)
        return 1
    print(result.csv_path)
    return 0


def command_matrix(args):
    overrides = list(args.overrides) + ([f"out_dir={args.out_dir}"] if args.out_dir else [])
    base = parse_config(args.config, overrides)
    result = run_matrix(base, parse_sweeps(args.sweep), parse_seeds(args.seeds), workers=max(1, args.workers))
    for name, path in result.aggregate_paths.items():
        logger.info("📈 %s -> %s", name, path)
    print(result.out_dir)
    return 1 if any(r.failed for r in result.runs) else 0


def command_plot(args):
    labels = [label.strip() for label in args.labels.split(',')] if args.labels else None
    aggregates = [load_aggregate(path, args.column) for path in args.aggregates]
    axes = PlotAxes(x_label='states visited', y_label=AXIS_LABELS.get(args.column, args.column), title=args.title)
    print(emit_plot(aggregates, labels, axes, args.out))
    return 0


def command_check(args):
    report = check_studies(args.regimes, args.sample_sweep, args.control, args.rprs)
    return 1 if any(report.values()) else 0


COMMANDS = {'run': command_run, 'matrix': command_matrix, 'plot': command_plot, 'check': command_check}


def main(argv=None):
    """Parse the command line and dispatch to a subcommand"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except GFlowNetError as exc:
        logger.error("❌ %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
