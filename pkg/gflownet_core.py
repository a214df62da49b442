"""
GFlowNet Core Module
Flow model evaluation, exploratory trajectory sampling, the flow matching and
trajectory balance objectives, and the combined online + replay training step.
"""

import logging
from dataclasses import dataclass

import numpy as np

import tensor_autodiff as ad
from errors import ConfigError, DimensionError, DivergenceError, UsageError
from hypergrid_env import Trajectory

logger = logging.getLogger(__name__)

OBJECTIVES = ("fm", "tb")
DEFAULT_EPSILON = 0.05
DEFAULT_LOG_EPS = 1e-8


@dataclass
class SamplerConfig:
    epsilon: float = DEFAULT_EPSILON
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError("epsilon", f"must lie in [0, 1), got {self.epsilon}")


@dataclass
class FlowModel:
    """MLP with one output per increment action plus stop; TB adds a learnable log Z"""

    mlp: ad.MLPParams
    objective: str = "fm"
    log_z: ad.ParameterSet | None = None

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError("objective", f"must be one of {OBJECTIVES}, got {self.objective}")
        if self.objective == "tb" and self.log_z is None:
            self.log_z = ad.ParameterSet({"log_z": 0.0})

    @property
    def parameter_sets(self):
        return [self.mlp] if self.objective == "fm" else [self.mlp, self.log_z]

    @property
    def log_partition(self):
        return float(self.log_z["log_z"]) if self.log_z is not None else None


def make_flow_model(env, objective="fm", seed=0, hidden=(ad.HIDDEN_WIDTH, ad.HIDDEN_WIDTH)):
    dims = ad.mlp_dims(env.ndim * env.height, env.num_actions, hidden)
    return FlowModel(ad.init_params(seed, dims), objective)


def make_optimizer(model, lr=0.001, lr_logz=0.1):
    overrides = {"log_z": lr_logz} if model.objective == "tb" else {}
    return ad.AdamState(lr=lr, lr_overrides=overrides)


def _check_dims(model, env):
    expected = (env.ndim * env.height, env.num_actions)
    if (model.mlp.dims[0], model.mlp.dims[-1]) != expected:
        raise DimensionError(f"model widths {model.mlp.dims} do not fit a grid needing {expected}")


def policy_outputs(model, env, states):
    """Raw network outputs: log edge flows (FM) or logits (TB)"""
    _check_dims(model, env)
    return ad.predict(model.mlp, env.encode_batch(states))


def forward_policy_batch(model, env, states):
    """Probabilities over all n+1 actions, zero on disallowed ones"""
    outputs = policy_outputs(model, env, states)
    masked = np.where(env.action_mask(states), outputs, -np.inf)
    weights = np.exp(masked - masked.max(axis=1, keepdims=True))
    return weights / weights.sum(axis=1, keepdims=True)


def edge_flows(model, env, s):
    if model.objective != "fm":
        raise UsageError("edge flows are defined for flow matching models only")
    allowed = env.allowed_actions(s)
    outputs = policy_outputs(model, env, np.array([s]))[0]
    with np.errstate(over="ignore"):
        flows = np.exp(outputs[allowed])
    if not np.all(np.isfinite(flows)):
        raise DivergenceError(f"edge flows overflow in state {tuple(s)}")
    return dict(zip(allowed, flows.tolist()))


def forward_policy(model, env, s):
    allowed = env.allowed_actions(s)
    probs = forward_policy_batch(model, env, np.array([s]))[0]
    return dict(zip(allowed, probs[allowed].tolist()))


def sample_trajectories(model, env, count, epsilon, rng):
    """Roll out `count` trajectories from the origin under (1-eps) * policy + eps * uniform"""
    # epsilon = 1 is the purely uniform walk; run configs keep it below 1
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError("epsilon", f"must lie in [0, 1], got {epsilon}")

    current = np.zeros((count, env.ndim), dtype=np.int64)
    active = np.ones(count, dtype=bool)
    states = [[env.origin] for _ in range(count)]
    actions = [[] for _ in range(count)]

    for _ in range(env.max_trajectory_length):
        rows = np.flatnonzero(active)
        if len(rows) == 0:
            break
        mask = env.action_mask(current[rows])
        uniform = mask / mask.sum(axis=1, keepdims=True)
        probs = (1.0 - epsilon) * forward_policy_batch(model, env, current[rows]) + epsilon * uniform
        draws = rng.random(len(rows))
        chosen = (np.cumsum(probs, axis=1) <= draws[:, None]).sum(axis=1)
        # Rounding can push the draw past the last cumulative sum; stop is always allowed
        chosen = np.minimum(chosen, env.stop_action)

        for row, action in zip(rows, chosen):
            actions[row].append(int(action))
            if action == env.stop_action:
                active[row] = False
            else:
                current[row, action] += 1
                states[row].append(tuple(int(c) for c in current[row]))

    if active.any():
        raise RuntimeError(f"trajectory exceeded the length bound {env.max_trajectory_length}")

    rewards = env.reward_batch(current)
    return [
        Trajectory(tuple(path), tuple(moves), float(reward))
        for path, moves, reward in zip(states, actions, rewards)
    ]


def sample_trajectory(model, env, cfg, rng=None):
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return sample_trajectories(model, env, 1, cfg.epsilon, rng)[0]


def unique_states(trajectories):
    """Every state visited by the trajectories, first occurrence order"""
    return list(dict.fromkeys(s for traj in trajectories for s in traj.states))


def flow_matching_terms(model, env, states, log_eps=DEFAULT_LOG_EPS, tape=None):
    """Squared log residuals: inflow vs outflow per non-origin state, stop flow vs reward per state"""
    if len(states) == 0:
        raise UsageError("flow matching needs a non-empty batch of states")
    if model.objective != "fm":
        raise UsageError("flow matching needs a flow matching model")
    _check_dims(model, env)
    states = [env.validate_state(s) for s in states]

    union = dict.fromkeys(states)
    inner, parent_states, parent_actions, segments = [], [], [], []
    for k, s in enumerate(states):
        parents = env.parents(s)
        if not parents:
            continue
        for parent, action in parents:
            union[parent] = None
            parent_states.append(parent)
            parent_actions.append(action)
            segments.append(len(inner))
        inner.append(k)

    row_of = {s: row for row, s in enumerate(union)}
    outputs, tape = ad.mlp_forward(model.mlp, env.encode_batch(np.array(list(union))), tape)

    batch = np.array(states)
    own = ad.index(outputs, np.array([row_of[s] for s in states]))
    outflow = ad.reduce_sum(ad.mul(ad.exp(own), env.action_mask(batch).astype(np.float64)), axis=1)
    stop_flow = ad.exp(ad.index(own, (np.arange(len(states)), np.full(len(states), env.stop_action))))
    terminal = ad.square(ad.log(stop_flow + log_eps) - np.log(env.reward_batch(batch) + log_eps))

    matching = None
    if inner:
        incoming = ad.index(outputs, (np.array([row_of[p] for p in parent_states]), np.array(parent_actions)))
        inflow = ad.segment_sum(ad.exp(incoming), segments, len(inner))
        matching = ad.square(ad.log(inflow + log_eps) - ad.log(ad.index(outflow, np.array(inner)) + log_eps))
    return matching, terminal, tape


def fm_loss(model, env, states, log_eps=DEFAULT_LOG_EPS, tape=None):
    """Mean per-state flow matching loss; returns (scalar tensor, tape)"""
    matching, terminal, tape = flow_matching_terms(model, env, states, log_eps, tape)
    total = ad.reduce_sum(terminal)
    if matching is not None:
        total = total + ad.reduce_sum(matching)
    return ad.mul(total, 1.0 / len(states)), tape


def _log_backward_uniform(states):
    # Uniform backward policy: each non-origin state has one parent per nonzero coordinate
    return -float(np.sum([np.log(np.count_nonzero(s)) for s in states[1:]]))


def tb_loss(model, env, trajectories, tape=None):
    """Mean of (log Z + sum log P_F + sum log P_B - log R)^2 over trajectories"""
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    if not trajectories:
        raise UsageError("trajectory balance needs at least one trajectory")
    if model.objective != "tb":
        raise UsageError("trajectory balance needs a trajectory balance model")
    _check_dims(model, env)

    union = {}
    rows, step_actions, owners = [], [], []
    log_pb = np.zeros(len(trajectories))
    log_reward = np.zeros(len(trajectories))
    for b, traj in enumerate(trajectories):
        for s, action in zip(traj.states, traj.actions):
            rows.append(union.setdefault(s, len(union)))
            step_actions.append(action)
            owners.append(b)
        log_pb[b] = _log_backward_uniform(traj.states)
        log_reward[b] = np.log(traj.terminal_reward)

    union_states = np.array(list(union))
    logits, tape = ad.mlp_forward(model.mlp, env.encode_batch(union_states), tape)
    log_pf = ad.masked_log_softmax(logits, env.action_mask(union_states))
    per_traj = ad.segment_sum(ad.index(log_pf, (np.array(rows), np.array(step_actions))), owners, len(trajectories))

    log_z = tape.watch(model.log_z)["log_z"]
    residual = per_traj + log_z + (log_pb - log_reward)
    return ad.mean(ad.square(residual)), tape


def train_step(model, env, online, replayed, opt, log_eps=DEFAULT_LOG_EPS):
    """One Adam update on the union of online and replayed trajectories; returns the pre-update loss"""
    if not online:
        raise UsageError("a training step needs at least one online trajectory")
    batch = list(online) + list(replayed)

    if model.objective == "fm":
        loss, tape = fm_loss(model, env, unique_states(batch), log_eps)
    else:
        loss, tape = tb_loss(model, env, batch)

    value = loss.item()
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss {value}")
    logger.debug("%s loss %.6g on %d online + %d replayed trajectories", model.objective, value, len(online), len(replayed))
    grads = ad.backward(tape, 1.0)
    ad.adam_step(model.parameter_sets, grads, opt)
    return value
