"""
Metrics Module
Mode discovery tracking, the exact terminal-state distribution of a flow model
(forward dynamic programming over the grid DAG), empirical L1 error and metric CSV files.
"""

from dataclasses import asdict, dataclass, fields

import numpy as np
import pandas as pd

from errors import UsageError
from gflownet_core import forward_policy_batch

CSV_COLUMNS = [
    "step",
    "states_visited",
    "modes_found",
    "modes_pct",
    "empirical_l1",
    "mean_loss",
    "mean_online_reward",
]
SOURCES = ("online", "replay")


class ModeTracker:
    """Discovered modes and the count of online terminal states ("states visited")"""

    def __init__(self, env):
        self.env = env
        self.total_modes = env.num_modes
        self.discovered = set()
        self.states_visited = 0

    @property
    def modes_found(self):
        return len(self.discovered)

    @property
    def modes_pct(self):
        return self.modes_found / self.total_modes if self.total_modes else 0.0

    @property
    def all_found(self):
        return self.modes_found == self.total_modes


def update_modes(tracker, terminal, source="online"):
    if source not in SOURCES:
        raise UsageError(f"source must be one of {SOURCES}, got {source}")
    terminal = tracker.env.validate_state(terminal)
    if source == "online":
        tracker.states_visited += 1
    if tracker.env.is_mode(terminal):
        tracker.discovered.add(terminal)
    return tracker


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    states_visited: int
    modes_found: int
    modes_pct: float
    empirical_l1: float
    mean_loss: float
    mean_online_reward: float


def terminal_distribution(model, env):
    """p_theta(x) for every state, indexed like env.all_states()"""
    states = env.all_states()
    probs = forward_policy_batch(model, env, states)
    strides = env.height ** np.arange(env.ndim - 1, -1, -1)
    levels = states.sum(axis=1)

    # Mass reaching each state; parents sit one level below their children
    mass = np.zeros(len(states))
    mass[0] = 1.0
    order = np.argsort(levels, kind="stable")
    bounds = np.searchsorted(levels[order], np.arange(levels.max() + 2))
    for level in range(levels.max() + 1):
        rows = order[bounds[level]:bounds[level + 1]]
        for i in range(env.ndim):
            movable = rows[states[rows, i] < env.height - 1]
            mass[movable + strides[i]] += mass[movable] * probs[movable, i]

    return mass * probs[:, env.stop_action]


def empirical_l1(model, env, target=None):
    """Mean over states of |p_theta(x) - R(x)/Z|"""
    target = target if target is not None else env.true_distribution()
    return float(np.mean(np.abs(terminal_distribution(model, env) - target.probs)))


def states_to_all_modes(records, total_modes):
    """First states_visited at which every mode had been found, or None"""
    for record in records:
        if record.modes_found >= total_modes:
            return record.states_visited
    return None


def records_to_frame(records):
    return pd.DataFrame([asdict(record) for record in records], columns=CSV_COLUMNS)


def write_csv(records, path):
    if not records:
        raise UsageError("no metric records to write")
    frame = records_to_frame(records)
    # %.17g round-trips every float64 exactly
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


def read_csv(path):
    frame = pd.read_csv(path)
    if list(frame.columns) != CSV_COLUMNS:
        raise UsageError(f"{path} does not have the metric columns {CSV_COLUMNS}")
    types = {f.name: f.type for f in fields(MetricsRecord)}
    return [
        MetricsRecord(**{name: (int(value) if types[name] is int else float(value)) for name, value in row.items()})
        for row in frame.to_dict("records")
    ]
