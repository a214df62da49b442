"""Tests for the study-level checks over finished matrices"""

import pandas as pd
import pytest

from acceptance import (
    check_batch_control,
    check_l1_ordering,
    check_regime_ordering,
    check_replay_sample_size,
    check_studies,
    mean_states_to_all_modes,
)
from errors import UsageError
from experiment_harness import DEFAULT_SEEDS, default_workers, parse_config, run_matrix

REGIME_CELLS = ('regime=none', 'regime=random', 'regime=rprs')


def write_matrix(path, completions, curves=None, budget=40_000):
    """completions: {cell: states_to_all_modes per seed, None when never reached}"""
    rows = [
        {'cell': cell, 'seed': seed, 'status': 'ok', 'final_states_visited': budget, 'states_to_all_modes': reached}
        for cell, per_seed in completions.items()
        for seed, reached in enumerate(per_seed)
    ]
    path.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(path / 'summary.csv', index=False)
    (path / 'aggregates').mkdir(exist_ok=True)
    for cell, (modes, l1) in (curves or {}).items():
        pd.DataFrame({
            'states_visited': [800, 1600, 2400, 3200],
            'step_mean': [50.0, 100.0, 150.0, 200.0],
            'modes_found_mean': modes,
            'empirical_l1_mean': l1,
        }).to_csv(path / 'aggregates' / f"{cell}.csv", index=False)
    return path


@pytest.fixture
def ordered_regimes(tmp_path):
    return write_matrix(tmp_path / 'regimes', {
        'regime=none': [None] * 5,
        'regime=random': [30_000, None, None, None, None],
        'regime=rprs': [9_600, 12_000, 8_800, 20_000, None],
    }, {
        'regime=none': ([1, 3, 5, 6], [3e-4, 2e-4, 1.2e-4, 1.0e-4]),
        'regime=random': ([1, 3, 6, 8], [3e-4, 2e-4, 1.0e-4, 0.9e-4]),
        'regime=rprs': ([2, 9, 14, 16], [3e-4, 1e-4, 0.6e-4, 0.5e-4]),
    })


class TestStatesToAllModes:

    def test_unreached_seeds_count_the_budget(self, tmp_path):
        summary = pd.read_csv(write_matrix(tmp_path, {'base': [1_000, None]}, budget=5_000) / 'summary.csv')
        assert mean_states_to_all_modes(summary, 'base') == 3_000

    def test_unknown_cell(self, tmp_path):
        summary = pd.read_csv(write_matrix(tmp_path, {'base': [1_000]}) / 'summary.csv')
        with pytest.raises(UsageError):
            mean_states_to_all_modes(summary, 'regime=rprs')


class TestRegimeOrdering:

    def test_holds(self, ordered_regimes):
        assert check_regime_ordering(ordered_regimes) == []
        assert check_l1_ordering(ordered_regimes) == []

    def test_too_few_complete_seeds(self, tmp_path):
        path = write_matrix(tmp_path, {
            'regime=none': [None] * 5, 'regime=random': [None] * 5, 'regime=rprs': [9_600, None, None, None, None],
        }, {cell: ([1, 2, 3, 4], [1e-4] * 4) for cell in REGIME_CELLS})
        violations = check_regime_ordering(path)
        assert len(violations) == 1
        assert 'in 1 seeds' in violations[0]

    def test_early_points_are_not_checked(self, tmp_path):
        # rprs trails at 50 steps, which is the first quarter of the 200-step budget
        path = write_matrix(tmp_path, {cell: [1_000] * 5 for cell in REGIME_CELLS}, {
            'regime=none': ([3, 3, 3, 3], [1e-4] * 4),
            'regime=random': ([3, 3, 3, 3], [1e-4] * 4),
            'regime=rprs': ([0, 3, 3, 3], [1e-4] * 4),
        })
        assert check_regime_ordering(path) == []

    def test_one_mode_slack_for_random(self, tmp_path):
        path = write_matrix(tmp_path, {cell: [1_000] * 5 for cell in REGIME_CELLS}, {
            'regime=none': ([4, 4, 4, 6], [1e-4] * 4),
            'regime=random': ([3, 3, 3, 4], [1e-4] * 4),
            'regime=rprs': ([4, 4, 4, 4], [1e-4] * 4),
        })
        violations = check_regime_ordering(path)
        assert len(violations) == 1
        assert '3200 states' in violations[0]

    def test_final_l1_ordering(self, tmp_path):
        path = write_matrix(tmp_path, {cell: [1_000] * 5 for cell in REGIME_CELLS}, {
            'regime=none': ([16] * 4, [1.1e-5] * 4),
            'regime=random': ([16] * 4, [1.15e-5] * 4),
            'regime=rprs': ([16] * 4, [1.6e-5] * 4),
        })
        violations = check_l1_ordering(path)
        assert len(violations) == 1
        assert violations[0].startswith('final L1 regime=rprs')

    def test_missing_aggregate(self, tmp_path):
        path = write_matrix(tmp_path, {cell: [1_000] * 5 for cell in REGIME_CELLS})
        with pytest.raises(UsageError):
            check_l1_ordering(path)


class TestSampleSizeAndControl:

    def test_larger_replay_sample_is_not_slower(self, tmp_path):
        path = write_matrix(tmp_path, {'batch_replay=4': [20_000, None], 'batch_replay=16': [9_000, 12_000]})
        assert check_replay_sample_size(path) == []

    def test_larger_replay_sample_slower(self, tmp_path):
        path = write_matrix(tmp_path, {'batch_replay=4': [9_000, 12_000], 'batch_replay=16': [20_000, None]})
        assert len(check_replay_sample_size(path)) == 1

    def test_batch_control(self, tmp_path):
        control = write_matrix(tmp_path / 'control', {'base': [None, 30_000]})
        rprs = write_matrix(tmp_path / 'rprs', {'base': [9_000, 12_000]})
        assert check_batch_control(control, rprs) == []
        assert len(check_batch_control(rprs, control)) == 1

    def test_report(self, ordered_regimes):
        report = check_studies(regimes_dir=ordered_regimes)
        assert report == {'regime ordering': [], 'final L1 ordering': []}
        with pytest.raises(UsageError):
            check_studies()

    def test_missing_summary(self, tmp_path):
        with pytest.raises(UsageError):
            check_replay_sample_size(tmp_path)


@pytest.mark.slow
def test_replay_studies(tmp_path):
    """Full regime, replay sample size and batch-32 studies over five seeds (CPU-hours)"""
    workers = default_workers()

    def matrix(config, sweeps, name):
        base = parse_config(f"configs/{config}", [f"out_dir={tmp_path / name}"])
        return run_matrix(base, sweeps, DEFAULT_SEEDS, workers=workers).out_dir

    regimes = matrix('regimes_r0_1e-3.cfg', {'regime': ['none', 'random', 'rprs']}, 'regimes')
    sample_sweep = matrix('replay_sample_sweep.cfg', {'batch_replay': [4, 8, 12, 16]}, 'sample_sweep')
    control = matrix('batch32_no_buffer.cfg', {}, 'control')
    rprs = matrix('rprs_16_16.cfg', {}, 'rprs')

    report = check_studies(regimes, sample_sweep, control, rprs)
    assert report == {name: [] for name in report}
