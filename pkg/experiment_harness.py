"""
Experiment Harness Module
Run configuration, the seeded training loop for one (config, seed) cell, sweep
matrices over configuration keys, and mean/standard-error aggregation across seeds.
"""

import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import trange

from errors import ConfigError, DivergenceError, GFlowNetError, UsageError
from gflownet_core import (
    DEFAULT_EPSILON,
    DEFAULT_LOG_EPS,
    OBJECTIVES,
    make_flow_model,
    make_optimizer,
    sample_trajectories,
    train_step,
)
from hypergrid_env import MAX_ENUMERABLE_STATES, HyperGrid, RewardParams
from metrics import (
    CSV_COLUMNS,
    MetricsRecord,
    ModeTracker,
    empirical_l1,
    states_to_all_modes,
    update_modes,
    write_csv,
)
from replay import DEFAULT_CAPACITY, REGIMES, REPLAY_PATHS, ReplayBuffer

logger = logging.getLogger(__name__)

# Run configuration keys; defaults follow the hypergrid study (H=8, lr=0.001, 16 online + 16 replayed)
CONFIG_FIELDS = {
    'ndim': {'default': 4, 'type': int, 'min': 1, 'description': 'Number of grid dimensions n'},
    'H': {'default': 8, 'type': int, 'min': 2, 'description': 'Grid side length'},
    'R0': {'default': None, 'type': float, 'description': 'Background reward, 0 < R0 < R1 (required)'},
    'R1': {'default': 0.5, 'type': float, 'description': 'Outer plateau reward'},
    'R2': {'default': 2.0, 'type': float, 'description': 'Mode plateau reward, R2 > R1'},
    'objective': {'default': 'fm', 'type': str, 'choices': OBJECTIVES, 'description': 'Training objective'},
    'regime': {'default': 'rprs', 'type': str, 'choices': REGIMES, 'description': 'Replay regime'},
    'batch_online': {'default': 16, 'type': int, 'min': 1, 'description': 'Online trajectories per step'},
    'batch_replay': {'default': None, 'type': int, 'min': 0, 'description': 'Replayed trajectories per step (16, or 0 without buffer)'},
    'buffer_capacity': {'default': DEFAULT_CAPACITY, 'type': int, 'min': 1, 'description': 'Replay buffer capacity'},
    'replay_paths': {'default': 'resampled', 'type': str, 'choices': REPLAY_PATHS, 'description': 'Replay the stored path, or a fresh uniform backward path into the stored terminal'},
    'lr': {'default': 0.001, 'type': float, 'description': 'Adam learning rate'},
    'lr_logz': {'default': 0.1, 'type': float, 'description': 'Adam learning rate of log Z (tb only)'},
    'log_eps': {'default': DEFAULT_LOG_EPS, 'type': float, 'min': 0.0, 'description': 'Smoothing constant inside flow matching logarithms'},
    'epsilon': {'default': DEFAULT_EPSILON, 'type': float, 'min': 0.0, 'description': 'Uniform exploration probability, below 1'},
    'train_steps': {'default': 2500, 'type': int, 'min': 1, 'description': 'Training steps'},
    'eval_every': {'default': 50, 'type': int, 'min': 1, 'description': 'Steps between metric records'},
    'seed': {'default': 0, 'type': int, 'min': 0, 'description': 'Random seed'},
    'out_dir': {'default': 'results', 'type': str, 'description': 'Output directory'},
}
REQUIRED_KEYS = [key for key, spec in CONFIG_FIELDS.items() if spec['default'] is None and key != 'batch_replay']
DEFAULT_SEEDS = [0, 1, 2, 3, 4]


@dataclass(frozen=True)
class RunConfig:
    ndim: int
    H: int
    R0: float
    R1: float
    R2: float
    objective: str
    regime: str
    batch_online: int
    batch_replay: int
    buffer_capacity: int
    replay_paths: str
    lr: float
    lr_logz: float
    log_eps: float
    epsilon: float
    train_steps: int
    eval_every: int
    seed: int
    out_dir: str

    def __post_init__(self):
        for key, spec in CONFIG_FIELDS.items():
            value = getattr(self, key)
            if 'min' in spec and value < spec['min']:
                raise ConfigError(key, f"must be at least {spec['min']}, got {value}")
            if 'choices' in spec and value not in spec['choices']:
                raise ConfigError(key, f"must be one of {spec['choices']}, got {value}")
        for key in ('lr', 'lr_logz'):
            if not getattr(self, key) > 0:
                raise ConfigError(key, f"must be positive, got {getattr(self, key)}")
        if not self.epsilon < 1.0:
            raise ConfigError('epsilon', f"must be below 1, got {self.epsilon}")
        if (self.batch_replay == 0) != (self.regime == 'none'):
            raise ConfigError('batch_replay', f"must be 0 exactly when regime is none (regime={self.regime}, batch_replay={self.batch_replay})")
        if self.H ** self.ndim > MAX_ENUMERABLE_STATES:
            raise ConfigError('ndim', f"{self.H}^{self.ndim} states are too many to evaluate exactly")
        self.reward_params()

    def reward_params(self):
        return RewardParams(R0=self.R0, R1=self.R1, R2=self.R2, height=self.H, ndim=self.ndim)

    def run_name(self):
        return f"{self.objective}_{self.regime}_n{self.ndim}_H{self.H}_R0-{self.R0:g}_seed{self.seed}"


@dataclass
class RunResult:
    config: RunConfig | None
    name: str
    csv_path: Path | None
    status: str = 'ok'
    message: str = ''
    records: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    total_modes: int = 0

    @property
    def failed(self):
        return self.status != 'ok'


@dataclass
class AggregateSeries:
    label: str
    x: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray


@dataclass
class MatrixResult:
    out_dir: Path
    runs: list
    aggregate_paths: dict
    summary_path: Path


def parse_value(key, text):
    """Convert one textual config value to the type declared for its key"""
    if key not in CONFIG_FIELDS:
        raise ConfigError(key, "unknown configuration key")
    kind = CONFIG_FIELDS[key]['type']
    try:
        return kind(text.strip()) if isinstance(text, str) else kind(text)
    except ValueError as exc:
        raise ConfigError(key, f"cannot read {text!r} as {kind.__name__}") from exc


def _split_assignment(line, source):
    if '=' not in line:
        raise ConfigError(line.strip(), f"expected KEY=VALUE in {source}")
    key, value = line.split('=', 1)
    return key.strip(), value.strip()


def read_config_file(path):
    """Flat key = value lines, '#' starts a comment"""
    values = {}
    with open(path, encoding='utf-8') as handle:
        for line in handle:
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            key, value = _split_assignment(line, path)
            values[key] = parse_value(key, value)
    return values


def parse_overrides(overrides):
    values = {}
    for item in overrides or []:
        key, value = _split_assignment(item, '--set')
        values[key] = parse_value(key, value)
    return values


def build_config(values):
    unknown = [key for key in values if key not in CONFIG_FIELDS]
    if unknown:
        raise ConfigError(unknown[0], "unknown configuration key")
    merged = {key: spec['default'] for key, spec in CONFIG_FIELDS.items()}
    merged.update(values)
    for key in REQUIRED_KEYS:
        if merged[key] is None:
            raise ConfigError(key, "missing required key")
    if merged['batch_replay'] is None:
        merged['batch_replay'] = 0 if merged['regime'] == 'none' else 16
    return RunConfig(**merged)


def parse_config(path=None, overrides=None):
    """Defaults, then the config file, then --set overrides"""
    values = read_config_file(path) if path else {}
    values.update(parse_overrides(overrides))
    return build_config(values)


def parse_sweeps(items):
    """KEY=V1,V2,... assignments to an ordered {key: [values]} mapping"""
    sweeps = {}
    for item in items or []:
        key, value = _split_assignment(item, '--sweep')
        if key == 'seed':
            raise ConfigError(key, "seeds are given with --seeds, not swept")
        sweeps[key] = [parse_value(key, part) for part in value.split(',') if part.strip()]
        if not sweeps[key]:
            raise ConfigError(key, "sweep has no values")
    return sweeps


def parse_seeds(text):
    try:
        seeds = [int(part) for part in text.split(',') if part.strip()]
    except ValueError as exc:
        raise ConfigError('seeds', f"cannot read {text!r} as a list of integers") from exc
    if not seeds:
        raise ConfigError('seeds', "no seeds given")
    return seeds


def save_run_metadata(result, path):
    """Companion JSON next to the run CSV"""
    metadata = {
        'name': result.name,
        'status': result.status,
        'message': result.message,
        'config': asdict(result.config),
        'counters': result.counters,
        'records': len(result.records),
        'total_modes': result.total_modes,
        'creation_date': datetime.now().isoformat(),
    }
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(metadata, f, indent=2)


def run(config, name=None, progress=True):
    """Train one model under one regime and seed, recording metrics every eval_every steps"""
    name = name or config.run_name()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    env = HyperGrid(config.reward_params())
    target = env.true_distribution()
    model = make_flow_model(env, config.objective, seed=config.seed)
    opt = make_optimizer(model, config.lr, config.lr_logz)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])

    # The none regime never allocates a buffer
    buffer = ReplayBuffer(config.buffer_capacity, config.regime) if config.regime != 'none' else None
    tracker = ModeTracker(env)
    result = RunResult(config=config, name=name, csv_path=None, total_modes=tracker.total_modes)

    losses, rewards = [], []
    steps = trange(1, config.train_steps + 1, desc=name, disable=not progress, leave=False)
    try:
        for step in steps:
            online = sample_trajectories(model, env, config.batch_online, config.epsilon, rng)
            replayed = []
            if buffer is not None:
                for traj in online:
                    buffer.insert(traj)
                if len(buffer):
                    replayed = buffer.sample(config.batch_replay, rng)
                if config.replay_paths == 'resampled':
                    # A stored path freezes the policy that found it; only its terminal is kept
                    replayed = [env.backward_trajectory(t.terminal, rng, t.terminal_reward) for t in replayed]

            losses.append(train_step(model, env, online, replayed, opt, config.log_eps))

            for traj in online:
                update_modes(tracker, traj.terminal, 'online')
                rewards.append(traj.terminal_reward)
            for traj in replayed:
                update_modes(tracker, traj.terminal, 'replay')

            if step % config.eval_every == 0 or step == config.train_steps:
                record = MetricsRecord(
                    step=step,
                    states_visited=tracker.states_visited,
                    modes_found=tracker.modes_found,
                    modes_pct=tracker.modes_pct,
                    empirical_l1=empirical_l1(model, env, target),
                    mean_loss=float(np.mean(losses)),
                    mean_online_reward=float(np.mean(rewards)),
                )
                result.records.append(record)
                losses, rewards = [], []
                steps.set_postfix(modes=record.modes_found, l1=f"{record.empirical_l1:.2e}")
    except DivergenceError as exc:
        result.status = 'failed'
        result.message = f"step {step}: {exc}"
        logger.error("❌ %s diverged at step %d: %s", name, step, exc)

    result.counters = {
        'buffers_allocated': int(buffer is not None),
        'buffer_inserts': buffer.accepted + buffer.rejected if buffer is not None else 0,
        'replay_samples': buffer.sampled if buffer is not None else 0,
    }

    if result.records:
        result.csv_path = write_csv(result.records, out_dir / f"{name}.csv")
    save_run_metadata(result, out_dir / f"{name}_metadata.json")

    if not result.failed:
        final = result.records[-1]
        logger.info("✅ %s: %d/%d modes after %d states, empirical L1 %.3e",
                    name, final.modes_found, tracker.total_modes, final.states_visited, final.empirical_l1)
    return result


def cell_name(cell):
    # repr keeps every digit, so distinct swept floats never share a file name
    return '__'.join(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}" for key, value in cell.items()) or 'base'


def _run_job(job):
    base, values, seed, runs_dir, name = job
    config = None
    try:
        config = replace(base, **values, seed=seed, out_dir=str(runs_dir))
        return run(config, name=name, progress=False)
    except GFlowNetError as exc:
        logger.error("❌ %s could not run: %s", name, exc)
        return RunResult(config=config, name=name, csv_path=None, status='failed', message=str(exc))


def aggregate_frames(frames):
    """Mean and standard error (n-1 denominator) of every metric column per states_visited"""
    if len(frames) < 2:
        raise UsageError("aggregation needs at least two seeds")
    stacked = pd.concat(frames, ignore_index=True)
    grouped = stacked.groupby('states_visited', sort=True)
    columns = [column for column in CSV_COLUMNS if column != 'states_visited']

    table = pd.DataFrame({'n_seeds': grouped.size()})
    means = grouped[columns].mean()
    errors = grouped[columns].sem(ddof=1)
    for column in columns:
        table[f"{column}_mean"] = means[column]
        table[f"{column}_stderr"] = errors[column]
    return table.reset_index()


def load_aggregate(path, column='modes_pct', label=None):
    table = pd.read_csv(path)
    if f"{column}_mean" not in table.columns:
        raise UsageError(f"{path} has no aggregated column {column}")
    return AggregateSeries(
        label=label or Path(path).stem,
        x=table['states_visited'].to_numpy(dtype=np.float64),
        mean=table[f"{column}_mean"].to_numpy(dtype=np.float64),
        stderr=table[f"{column}_stderr"].fillna(0.0).to_numpy(dtype=np.float64),
    )


def run_matrix(base, sweeps, seeds, out_dir=None, workers=1):
    """Every combination of swept values, for every seed, then per-cell aggregates"""
    for key in sweeps:
        if key not in CONFIG_FIELDS or key in ('seed', 'out_dir'):
            raise ConfigError(key, "cannot be swept")
    out_dir = Path(out_dir or base.out_dir)
    runs_dir = out_dir / 'runs'
    aggregates_dir = out_dir / 'aggregates'
    keys = list(sweeps)
    cells = [dict(zip(keys, values)) for values in itertools.product(*(sweeps[key] for key in keys))]

    jobs = []
    for cell in cells:
        values = dict(cell)
        # A regime sweep without a batch_replay sweep takes the regime's default replay batch
        if 'regime' in values and 'batch_replay' not in values:
            values['batch_replay'] = 0 if values['regime'] == 'none' else (base.batch_replay or 16)
        for seed in seeds:
            jobs.append((base, values, seed, runs_dir, f"{cell_name(cell)}_seed{seed}"))
    logger.info("Running %d cells x %d seeds = %d runs", len(cells), len(seeds), len(jobs))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(job) for job in jobs]

    aggregates_dir.mkdir(parents=True, exist_ok=True)
    aggregate_paths = {}
    summary_rows = []
    for index, cell in enumerate(cells):
        name = cell_name(cell)
        cell_results = results[index * len(seeds):(index + 1) * len(seeds)]
        frames = [pd.read_csv(r.csv_path) for r in cell_results if r.csv_path is not None]
        if len(frames) >= 2:
            path = aggregates_dir / f"{name}.csv"
            aggregate_frames(frames).to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
            aggregate_paths[name] = path
        else:
            logger.warning("⚠️ %s: only %d usable seed(s), no aggregate written", name, len(frames))

        for seed, r in zip(seeds, cell_results):
            final = r.records[-1] if r.records else None
            summary_rows.append({
                'cell': name,
                'seed': seed,
                'status': r.status,
                'message': r.message,
                'csv_path': str(r.csv_path) if r.csv_path else '',
                'final_states_visited': final.states_visited if final else None,
                'final_modes_found': final.modes_found if final else None,
                'final_empirical_l1': final.empirical_l1 if final else None,
                'states_to_all_modes': states_to_all_modes(r.records, r.total_modes) if r.records else None,
            })

    summary_path = out_dir / 'summary.csv'
    pd.DataFrame(summary_rows).to_csv(summary_path, index=False, lineterminator='\n')
    failed = sum(r.failed for r in results)
    if failed:
        logger.warning("⚠️ %d of %d runs failed, see %s", failed, len(results), summary_path)
    return MatrixResult(out_dir=out_dir, runs=results, aggregate_paths=aggregate_paths, summary_path=summary_path)


def default_workers():
    return max(1, (os.cpu_count() or 1) - 1)
