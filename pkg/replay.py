"""
Replay Module
Bounded trajectory replay buffer with three regimes:
- none: nothing is stored
- random: FIFO storage, uniform sampling
- rprs: keeps the highest-reward trajectories seen, samples proportionally to reward
"""

import heapq
import logging
from dataclasses import dataclass

import numpy as np

from errors import ConfigError, UsageError

logger = logging.getLogger(__name__)

REGIMES = ("none", "random", "rprs")
REPLAY_PATHS = ("resampled", "stored")
DEFAULT_CAPACITY = 1000


@dataclass(frozen=True)
class BufferEntry:
    trajectory: object
    reward: float
    index: int


@dataclass(frozen=True)
class BufferStats:
    size: int
    min_reward: float | None
    max_reward: float | None
    mean_reward: float | None


class ReplayBuffer:
    def __init__(self, capacity=DEFAULT_CAPACITY, regime="rprs"):
        if regime not in REGIMES:
            raise ConfigError("regime", f"must be one of {REGIMES}, got {regime}")
        if int(capacity) < 1:
            raise ConfigError("buffer_capacity", f"must be at least 1, got {capacity}")
        self.capacity = int(capacity)
        self.regime = regime
        self.entries = []
        self._inserted = 0
        # rprs eviction order: lowest reward first, newest first among equal rewards
        self._heap = []

        # Instrumentation
        self.accepted = 0
        self.rejected = 0
        self.sampled = 0

    def __len__(self):
        return len(self.entries)

    def insert(self, traj):
        accepted = self._insert(traj)
        if accepted:
            self.accepted += 1
        else:
            self.rejected += 1
        return accepted

    def _insert(self, traj):
        if self.regime == "none":
            return False

        entry = BufferEntry(traj, float(traj.terminal_reward), self._inserted)
        self._inserted += 1

        if self.regime == "random":
            if len(self.entries) < self.capacity:
                self.entries.append(entry)
            else:
                self.entries[entry.index % self.capacity] = entry
            return True

        if len(self.entries) < self.capacity:
            heapq.heappush(self._heap, (entry.reward, -entry.index, len(self.entries)))
            self.entries.append(entry)
            return True

        lowest, _, slot = self._heap[0]
        if entry.reward <= lowest:
            return False
        logger.debug("rprs: reward %.4g replaces %.4g in slot %d", entry.reward, lowest, slot)
        heapq.heapreplace(self._heap, (entry.reward, -entry.index, slot))
        self.entries[slot] = entry
        return True

    def sample(self, m, rng):
        """Up to m distinct stored trajectories"""
        if self.regime == "none":
            raise UsageError("the none regime has no buffer to sample from")
        if not self.entries:
            raise UsageError("cannot sample from an empty replay buffer")

        count = min(int(m), len(self.entries))
        if self.regime == "random":
            picked = rng.choice(len(self.entries), size=count, replace=False)
        else:
            rewards = np.array([entry.reward for entry in self.entries])
            picked = rng.choice(len(self.entries), size=count, replace=False, p=rewards / rewards.sum())
        self.sampled += count
        return [self.entries[i].trajectory for i in picked]

    def rewards(self):
        return np.array([entry.reward for entry in self.entries])


def stats(buf):
    if not buf.entries:
        return BufferStats(0, None, None, None)
    rewards = buf.rewards()
    return BufferStats(len(rewards), float(rewards.min()), float(rewards.max()), float(rewards.mean()))
