"""Flat stream replay buffer with episode-start flags."""

from __future__ import annotations

import numpy as np


class ReplayBuffer:
    """Stores steps in arrival order.

    Row ``i`` holds an observation, the action that led to it (zeros at an
    episode start), the reward received on arrival and ``is_first``.
    Sampled windows may straddle episodes; ``is_first`` marks the resets.
    """

    def __init__(self, obs_dim: int, act_dim: int, capacity: int = 1_000_000, phase: str = ""):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.capacity = capacity
        self.phase = phase
        self._obs = np.zeros((0, obs_dim))
        self._action = np.zeros((0, act_dim))
        self._reward = np.zeros(0)
        self._is_first = np.zeros(0, dtype=bool)
        self._pending: list[tuple] = []

    def __len__(self) -> int:
        return len(self._reward) + len(self._pending)

    def add(self, obs, action, reward: float, is_first: bool) -> None:
        self._pending.append((np.asarray(obs, dtype=np.float64), np.asarray(action, dtype=np.float64),
                              float(reward), bool(is_first)))

    def _flush(self) -> None:
        if not self._pending:
            return
        obs, act, rew, first = zip(*self._pending)
        self._obs = np.concatenate([self._obs, np.stack(obs)])[-self.capacity:]
        self._action = np.concatenate([self._action, np.stack(act)])[-self.capacity:]
        self._reward = np.concatenate([self._reward, np.asarray(rew)])[-self.capacity:]
        self._is_first = np.concatenate([self._is_first, np.asarray(first)])[-self.capacity:]
        self._pending = []

    def arrays(self) -> dict:
        self._flush()
        return {"obs": self._obs, "action": self._action, "reward": self._reward, "is_first": self._is_first}

    def sample(self, batch: int, length: int, rng: np.random.Generator) -> dict:
        """``batch`` random windows of ``length`` consecutive steps, shaped (B, T, ...)."""
        self._flush()
        n = len(self._reward)
        if n < length:
            raise ValueError(f"buffer holds {n} steps, need at least {length}")
        starts = rng.integers(0, n - length + 1, size=batch)
        idx = starts[:, None] + np.arange(length)[None, :]
        is_first = self._is_first[idx].copy()
        is_first[:, 0] = True
        return {
            "obs": self._obs[idx],
            "action": self._action[idx],
            "reward": self._reward[idx],
            "is_first": is_first,
        }

    def save(self, path) -> None:
        data = self.arrays()
        with open(path, "wb") as fh:
            np.savez(fh, phase=np.array(self.phase), **data)

    @classmethod
    def load(cls, path, capacity: int = 1_000_000) -> "ReplayBuffer":
        with np.load(path) as data:
            buf = cls(data["obs"].shape[1], data["action"].shape[1], capacity, str(data["phase"]))
            buf._obs = data["obs"].copy()
            buf._action = data["action"].copy()
            buf._reward = data["reward"].copy()
            buf._is_first = data["is_first"].copy()
        return buf
