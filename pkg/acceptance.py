"""
Acceptance Module
Checks finished study matrices against the orderings the replay study reports:
mode discovery per regime, replay sample size, the larger-batch control and the
final empirical L1. Every check reads summary.csv and the aggregate CSVs written
by run_matrix and returns the list of violations it found (empty when it holds).
"""

import logging
from pathlib import Path

import pandas as pd

from errors import UsageError

logger = logging.getLogger(__name__)

MODE_SLACK = 1.0
L1_SLACK = 1.05
LATE_FRACTION = 0.25
MIN_COMPLETE_SEEDS = 4


def read_summary(matrix_dir):
    path = Path(matrix_dir) / 'summary.csv'
    if not path.exists():
        raise UsageError(f"{path} not found, run the matrix first")
    return pd.read_csv(path)


def read_aggregate(matrix_dir, cell):
    path = Path(matrix_dir) / 'aggregates' / f"{cell}.csv"
    if not path.exists():
        raise UsageError(f"{path} not found, the cell needs at least two usable seeds")
    return pd.read_csv(path)


def _cell_rows(summary, cell):
    rows = summary[summary['cell'] == cell]
    if rows.empty:
        raise UsageError(f"no runs of cell {cell} in the summary")
    return rows


def mean_states_to_all_modes(summary, cell):
    """Seed mean of states visited until every mode was found; seeds that never got there count their whole budget"""
    rows = _cell_rows(summary, cell)
    reached = rows['states_to_all_modes'].fillna(rows['final_states_visited'])
    return float(reached.mean())


def check_regime_ordering(matrix_dir, cells=('regime=none', 'regime=random', 'regime=rprs')):
    """R-PRS completes the census in most seeds and leads random, which leads none up to one mode, late in training"""
    none_cell, random_cell, rprs_cell = cells
    summary = read_summary(matrix_dir)
    violations = []

    complete = _cell_rows(summary, rprs_cell)['states_to_all_modes'].notna().sum()
    if complete < MIN_COMPLETE_SEEDS:
        violations.append(f"{rprs_cell} found every mode in {complete} seeds, expected at least {MIN_COMPLETE_SEEDS}")

    curves = {cell: read_aggregate(matrix_dir, cell).set_index('states_visited') for cell in cells}
    shared = curves[none_cell].index.intersection(curves[random_cell].index).intersection(curves[rprs_cell].index)
    late = [x for x in shared if curves[rprs_cell].loc[x, 'step_mean'] > LATE_FRACTION * curves[rprs_cell]['step_mean'].max()]
    for x in late:
        none_modes, random_modes, rprs_modes = (curves[cell].loc[x, 'modes_found_mean'] for cell in cells)
        if rprs_modes < random_modes:
            violations.append(f"at {x} states: {rprs_cell} {rprs_modes:.2f} modes < {random_cell} {random_modes:.2f}")
        if random_modes < none_modes - MODE_SLACK:
            violations.append(f"at {x} states: {random_cell} {random_modes:.2f} modes < {none_cell} {none_modes:.2f} - {MODE_SLACK:g}")
    return violations


def check_replay_sample_size(matrix_dir, smallest='batch_replay=4', largest='batch_replay=16'):
    summary = read_summary(matrix_dir)
    small = mean_states_to_all_modes(summary, smallest)
    large = mean_states_to_all_modes(summary, largest)
    if large > small:
        return [f"{largest} needs {large:.0f} states to find every mode, more than {smallest} ({small:.0f})"]
    return []


def check_batch_control(control_dir, rprs_dir, control_cell='base', rprs_cell='base'):
    """More online samples without a buffer must not find every mode sooner than 16 online + 16 replayed"""
    control = mean_states_to_all_modes(read_summary(control_dir), control_cell)
    rprs = mean_states_to_all_modes(read_summary(rprs_dir), rprs_cell)
    if control < rprs:
        return [f"no-buffer control finds every mode after {control:.0f} states, before R-PRS ({rprs:.0f})"]
    return []


def check_l1_ordering(matrix_dir, cells=('regime=none', 'regime=random', 'regime=rprs')):
    none_cell, random_cell, rprs_cell = cells
    final = {cell: float(read_aggregate(matrix_dir, cell)['empirical_l1_mean'].iloc[-1]) for cell in cells}
    violations = []
    if final[rprs_cell] > final[random_cell]:
        violations.append(f"final L1 {rprs_cell} {final[rprs_cell]:.3e} > {random_cell} {final[random_cell]:.3e}")
    if final[random_cell] > final[none_cell] * L1_SLACK:
        violations.append(f"final L1 {random_cell} {final[random_cell]:.3e} > {none_cell} {final[none_cell]:.3e} x {L1_SLACK:g}")
    return violations


def check_studies(regimes_dir=None, sample_sweep_dir=None, control_dir=None, rprs_dir=None):
    """Run every check whose matrices were given; {check name: violations}"""
    report = {}
    if regimes_dir is not None:
        report['regime ordering'] = check_regime_ordering(regimes_dir)
        report['final L1 ordering'] = check_l1_ordering(regimes_dir)
    if sample_sweep_dir is not None:
        report['replay sample size'] = check_replay_sample_size(sample_sweep_dir)
    if control_dir is not None and rprs_dir is not None:
        report['batch-32 control'] = check_batch_control(control_dir, rprs_dir)
    if not report:
        raise UsageError("no study directories given")

    for name, violations in report.items():
        if violations:
            logger.warning("⚠️ %s: %d violation(s)", name, len(violations))
            for violation in violations:
                logger.warning("   %s", violation)
        else:
            logger.info("✅ %s holds", name)
    return report
