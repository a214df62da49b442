"""
Hypergrid Environment Module
The n-dimensional hypergrid DAG of side H: increment and stop actions, parent
enumeration, the three-plateau reward, modes, one-hot encodings and the exact
target distribution R(x)/Z.
"""

from dataclasses import dataclass

import numpy as np

from errors import CapacityError, ConfigError, IllegalMoveError, UsageError

MAX_ENUMERABLE_STATES = 2_000_000

# Reward bands on |x_i/H - 0.5|, both strict
R1_BAND_LOW = 0.25
R2_BAND = (0.3, 0.4)


@dataclass(frozen=True)
class RewardParams:
    R0: float
    R1: float = 0.5
    R2: float = 2.0
    height: int = 8
    ndim: int = 4

    def __post_init__(self):
        if self.ndim < 1:
            raise ConfigError("ndim", f"must be at least 1, got {self.ndim}")
        if self.height < 2:
            raise ConfigError("height", f"must be at least 2, got {self.height}")
        if not self.R0 > 0:
            raise ConfigError("R0", f"must be positive, got {self.R0}")
        if not self.R0 < self.R1:
            raise ConfigError("R0", f"must be below R1={self.R1}, got {self.R0}")
        if not self.R1 < self.R2:
            raise ConfigError("R1", f"must be below R2={self.R2}, got {self.R1}")


def three_plateau_reward(states, params):
    """R0 + R1 * prod 1(0.25 < |x/H - 0.5|) + R2 * prod 1(0.3 < |x/H - 0.5| < 0.4)"""
    offset = np.abs(np.asarray(states, dtype=np.float64) / params.height - 0.5)
    outer = np.all(offset > R1_BAND_LOW, axis=-1)
    band = np.all((offset > R2_BAND[0]) & (offset < R2_BAND[1]), axis=-1)
    return params.R0 + params.R1 * outer + params.R2 * band


@dataclass(frozen=True)
class Terminal:
    state: tuple


@dataclass(frozen=True)
class Trajectory:
    """States from the origin to the stopped state; actions end with the stop action"""

    states: tuple
    actions: tuple
    terminal_reward: float

    @property
    def terminal(self):
        return self.states[-1]

    def __len__(self):
        return len(self.actions)


@dataclass(frozen=True)
class TrueDistribution:
    states: np.ndarray
    probs: np.ndarray
    Z: float


class HyperGrid:
    """Grid {0..H-1}^n; action i < n increments coordinate i, action n stops"""

    def __init__(self, params, reward_fn=None):
        self.params = params
        # Any callable mapping a (k, n) state array to k positive rewards
        self.reward_fn = reward_fn if reward_fn is not None else (lambda states: three_plateau_reward(states, params))

    @property
    def ndim(self):
        return self.params.ndim

    @property
    def height(self):
        return self.params.height

    @property
    def stop_action(self):
        return self.params.ndim

    @property
    def num_actions(self):
        return self.params.ndim + 1

    @property
    def num_states(self):
        return self.height ** self.ndim

    @property
    def max_trajectory_length(self):
        return self.ndim * (self.height - 1) + 1

    @property
    def origin(self):
        return (0,) * self.ndim

    def validate_state(self, s):
        s = tuple(int(c) for c in s)
        if len(s) != self.ndim or any(c < 0 or c >= self.height for c in s):
            raise UsageError(f"{s} is not a state of the {self.ndim}-d grid of side {self.height}")
        return s

    def allowed_actions(self, s):
        s = self.validate_state(s)
        return [i for i, c in enumerate(s) if c < self.height - 1] + [self.stop_action]

    def action_mask(self, states):
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        mask = np.ones((len(states), self.num_actions), dtype=bool)
        mask[:, : self.ndim] = states < self.height - 1
        return mask

    def step(self, s, a):
        s = self.validate_state(s)
        if a not in self.allowed_actions(s):
            raise IllegalMoveError(f"action {a} is not allowed in state {s}")
        if a == self.stop_action:
            return Terminal(s)
        return s[:a] + (s[a] + 1,) + s[a + 1:]

    def parents(self, s):
        s = self.validate_state(s)
        return [(s[:i] + (c - 1,) + s[i + 1:], i) for i, c in enumerate(s) if c > 0]

    def reward(self, s):
        s = self.validate_state(s)
        return float(self.reward_batch(np.array([s]))[0])

    def reward_batch(self, states):
        return np.asarray(self.reward_fn(np.atleast_2d(states)), dtype=np.float64)

    def mode_coordinates(self):
        """Coordinates that fall inside the top reward band, per dimension"""
        offset = np.abs(np.arange(self.height) / self.height - 0.5)
        return np.flatnonzero((offset > R2_BAND[0]) & (offset < R2_BAND[1]))

    @property
    def num_modes(self):
        return len(self.mode_coordinates()) ** self.ndim

    def mode_mask(self, states):
        offset = np.abs(np.atleast_2d(states) / self.height - 0.5)
        return np.all((offset > R2_BAND[0]) & (offset < R2_BAND[1]), axis=-1)

    def is_mode(self, s):
        s = self.validate_state(s)
        return bool(self.mode_mask(np.array([s]))[0])

    def encode(self, s):
        s = self.validate_state(s)
        return self.encode_batch(np.array([s]))[0]

    def encode_batch(self, states):
        """Concatenated per-dimension one-hot blocks, width n*H"""
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        encoded = np.zeros((len(states), self.ndim * self.height))
        columns = np.arange(self.ndim) * self.height + states
        encoded[np.arange(len(states))[:, None], columns] = 1.0
        return encoded

    def decode(self, vector):
        blocks = np.asarray(vector).reshape(self.ndim, self.height)
        if not np.all(blocks.sum(axis=1) == 1) or not np.all((blocks == 0) | (blocks == 1)):
            raise UsageError("vector is not a per-dimension one-hot encoding")
        return tuple(int(c) for c in blocks.argmax(axis=1))

    def all_states(self):
        """Every state, row r being the state with C-order flat index r"""
        if self.num_states > MAX_ENUMERABLE_STATES:
            raise CapacityError(
                f"{self.height}^{self.ndim} = {self.num_states} states exceed the limit of {MAX_ENUMERABLE_STATES}"
            )
        return np.indices((self.height,) * self.ndim).reshape(self.ndim, -1).T

    def flat_index(self, states):
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        return np.ravel_multi_index(states.T, (self.height,) * self.ndim)

    def true_distribution(self):
        states = self.all_states()
        rewards = self.reward_batch(states)
        Z = float(rewards.sum())
        return TrueDistribution(states=states, probs=rewards / Z, Z=Z)

    def backward_trajectory(self, terminal, rng, reward=None):
        """Fresh path into `terminal`, walking back to the origin under the uniform backward policy"""
        s = self.validate_state(terminal)
        path = [s]
        actions = [self.stop_action]
        while any(s):
            parent, action = self.parents(s)[rng.integers(np.count_nonzero(s))]
            path.append(parent)
            actions.append(action)
            s = parent
        reward = self.reward(terminal) if reward is None else float(reward)
        return Trajectory(tuple(reversed(path)), tuple(reversed(actions)), reward)

    def validate_trajectory(self, traj):
        if not traj.actions or traj.actions[-1] != self.stop_action:
            raise UsageError("trajectory must end with the stop action")
        if len(traj.states) != len(traj.actions) or tuple(traj.states[0]) != self.origin:
            raise UsageError("trajectory must start at the origin with one state per action")
        for current, action, following in zip(traj.states, traj.actions, traj.states[1:]):
            if self.step(current, action) != tuple(following):
                raise UsageError(f"{following} does not follow {current} by action {action}")
        if not np.isclose(traj.terminal_reward, self.reward(traj.terminal), rtol=0, atol=1e-12):
            raise UsageError("terminal reward does not match the reward of the stopped state")
        return True
