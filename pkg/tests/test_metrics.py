"""Tests for mode tracking, the exact terminal distribution, empirical L1 and metric CSVs"""

import numpy as np
import pytest

from conftest import exact_flow_model, zero_flow_model
from errors import UsageError
from gflownet_core import make_flow_model, sample_trajectories
from hypergrid_env import HyperGrid, RewardParams
from metrics import (
    CSV_COLUMNS,
    MetricsRecord,
    ModeTracker,
    empirical_l1,
    read_csv,
    states_to_all_modes,
    terminal_distribution,
    update_modes,
    write_csv,
)


def record(step, modes_found=0, states_visited=None):
    return MetricsRecord(
        step=step,
        states_visited=states_visited if states_visited is not None else 16 * step,
        modes_found=modes_found,
        modes_pct=modes_found / 16,
        empirical_l1=1 / 3,
        mean_loss=0.1 + step,
        mean_online_reward=np.pi,
    )


class TestModeTracker:

    @pytest.fixture
    def tracker(self):
        return ModeTracker(HyperGrid(RewardParams(R0=1e-3, ndim=4)))

    def test_first_visit_counts(self, tracker):
        update_modes(tracker, (1, 7, 1, 7))
        assert tracker.modes_found == 1
        assert tracker.modes_pct == pytest.approx(1 / 16)

    def test_revisit_is_idempotent(self, tracker):
        update_modes(tracker, (1, 7, 1, 7))
        update_modes(tracker, (1, 7, 1, 7))
        assert tracker.modes_found == 1
        assert tracker.states_visited == 2

    def test_non_mode(self, tracker):
        update_modes(tracker, (0, 0, 0, 0))
        assert tracker.modes_found == 0

    def test_replay_does_not_count_as_visit(self, tracker):
        update_modes(tracker, (7, 7, 7, 7), source="replay")
        assert tracker.states_visited == 0
        assert tracker.modes_found == 1

    def test_unknown_source(self, tracker):
        with pytest.raises(UsageError):
            update_modes(tracker, (0, 0, 0, 0), source="buffer")

    def test_all_found(self):
        tracker = ModeTracker(HyperGrid(RewardParams(R0=1e-3, ndim=1)))
        for s in [(1,), (7,)]:
            update_modes(tracker, s)
        assert tracker.all_found


class TestTerminalDistribution:

    def test_uniform_policy_on_two_states(self, line_env):
        assert terminal_distribution(zero_flow_model(line_env), line_env) == pytest.approx([0.5, 0.5], abs=1e-15)

    def test_uniform_policy_on_a_square(self):
        # Side 2: stop at origin 1/3; each edge state 1/3 * 1/2; corner gets the rest
        env = HyperGrid(RewardParams(R0=1e-3, height=2, ndim=2))
        probs = terminal_distribution(zero_flow_model(env), env)
        assert probs == pytest.approx([1 / 3, 1 / 6, 1 / 6, 1 / 3], abs=1e-15)

    def test_conservation(self, grid2d):
        for seed in range(3):
            probs = terminal_distribution(make_flow_model(grid2d, seed=seed, hidden=(32, 32)), grid2d)
            assert probs.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(probs >= 0)

    def test_matches_monte_carlo(self, grid2d):
        model = make_flow_model(grid2d, seed=8, hidden=(32, 32))
        probs = terminal_distribution(model, grid2d)
        n = 200_000
        trajs = sample_trajectories(model, grid2d, n, 0.0, np.random.default_rng(8))
        counts = np.bincount(grid2d.flat_index([t.terminal for t in trajs]), minlength=64)
        frequencies = counts / n
        assert np.mean(np.abs(frequencies - probs)) < 0.02
        assert np.all(np.abs(frequencies - probs) <= 5 * np.sqrt(probs * (1 - probs) / n) + 1e-4)


class TestEmpiricalL1:

    def test_hand_arithmetic(self):
        env = HyperGrid(RewardParams(R0=1e-3, height=2, ndim=1), reward_fn=lambda s: np.where(s[:, 0] == 0, 0.501, 2.501))
        expected = abs(0.5 - 0.501 / 3.002)
        assert empirical_l1(zero_flow_model(env), env) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.33311, abs=1e-5)

    def test_zero_at_target(self, line_env):
        assert empirical_l1(exact_flow_model(), line_env) == pytest.approx(0.0, abs=1e-12)

    def test_bounded(self, grid2d):
        assert 0 <= empirical_l1(make_flow_model(grid2d, seed=1, hidden=(8, 8)), grid2d) <= 2


class TestStatesToAllModes:

    def test_first_completion(self):
        records = [record(1, 3), record(2, 16), record(3, 16)]
        assert states_to_all_modes(records, 16) == 32

    def test_never_completed(self):
        assert states_to_all_modes([record(1, 3)], 16) is None


class TestCsv:

    def test_header_and_rows(self, tmp_path):
        path = write_csv([record(50, 4)], tmp_path / "run.csv")
        lines = path.read_bytes().split(b"\n")
        assert lines[0].decode() == ",".join(CSV_COLUMNS)
        assert len([line for line in lines if line]) == 2
        assert b"\r" not in path.read_bytes()

    def test_round_trip(self, tmp_path):
        records = [record(i, i % 17) for i in range(1, 6)]
        assert read_csv(write_csv(records, tmp_path / "run.csv")) == records

    def test_significant_digits(self, tmp_path):
        path = write_csv([record(1, 1)], tmp_path / "run.csv")
        row = path.read_text().splitlines()[1].split(",")
        assert row[CSV_COLUMNS.index("modes_pct")] == "0.0625"
        assert len(row[CSV_COLUMNS.index("empirical_l1")].replace("0.", "", 1)) >= 6

    def test_empty(self, tmp_path):
        with pytest.raises(UsageError):
            write_csv([], tmp_path / "run.csv")

    def test_wrong_columns(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(UsageError):
            read_csv(path)
