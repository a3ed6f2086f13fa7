"""Fixed-capacity replay buffer with uniform sampling."""

from dataclasses import dataclass
from typing import Optional

import numpy as np


class ReplayBufferError(Exception):
    """Base exception for replay buffer errors."""

    pass


class EmptyBufferError(ReplayBufferError):
    """Raised when sampling from an empty buffer."""

    pass


class MalformedTransitionError(ReplayBufferError):
    """Raised when a transition has wrong widths, non-finite values or bad flags."""

    pass


@dataclass(frozen=True)
class Transition:
    """One environment step.

    ``action`` is the executed action. ``task_action`` and ``risk_action`` are
    the proposals of the task and recovery policies; both default to the
    executed action for algorithms without a recovery policy. ``cost_prev`` is
    the cost observed on the previous step of the same episode (0 at episode
    start).
    """

    obs: np.ndarray
    action: np.ndarray
    next_obs: np.ndarray
    reward: float
    cost: int
    done: int
    task_action: Optional[np.ndarray] = None
    risk_action: Optional[np.ndarray] = None
    cost_prev: int = 0


@dataclass
class Batch:
    """Column-wise view of sampled transitions; one row per sample."""

    obs: np.ndarray
    action: np.ndarray
    next_obs: np.ndarray
    reward: np.ndarray
    cost: np.ndarray
    done: np.ndarray
    task_action: np.ndarray
    risk_action: np.ndarray
    cost_prev: np.ndarray

    def __len__(self) -> int:
        return int(self.reward.shape[0])

    def transition(self, i: int) -> Transition:
        return Transition(
            obs=self.obs[i].copy(),
            action=self.action[i].copy(),
            next_obs=self.next_obs[i].copy(),
            reward=float(self.reward[i]),
            cost=int(self.cost[i]),
            done=int(self.done[i]),
            task_action=self.task_action[i].copy(),
            risk_action=self.risk_action[i].copy(),
            cost_prev=int(self.cost_prev[i]),
        )


class ReplayBuffer:
    """Ring buffer of transitions; the oldest entry is overwritten when full."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int) -> None:
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)

        self._obs = np.zeros((self.capacity, self.obs_dim))
        self._action = np.zeros((self.capacity, self.act_dim))
        self._next_obs = np.zeros((self.capacity, self.obs_dim))
        self._reward = np.zeros(self.capacity)
        self._cost = np.zeros(self.capacity)
        self._done = np.zeros(self.capacity)
        self._task_action = np.zeros((self.capacity, self.act_dim))
        self._risk_action = np.zeros((self.capacity, self.act_dim))
        self._cost_prev = np.zeros(self.capacity)

        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def _vector(self, name: str, value: Optional[np.ndarray], width: int) -> np.ndarray:
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != (width,):
            raise MalformedTransitionError(f"{name} must have shape ({width},), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise MalformedTransitionError(f"{name} contains non-finite values")
        return arr

    def push(self, transition: Transition) -> None:
        """Append a transition, evicting the oldest one when full.

        Raises:
            MalformedTransitionError: If widths, flags or values are invalid
        """
        obs = self._vector("obs", transition.obs, self.obs_dim)
        action = self._vector("action", transition.action, self.act_dim)
        next_obs = self._vector("next_obs", transition.next_obs, self.obs_dim)
        task = action if transition.task_action is None else self._vector(
            "task_action", transition.task_action, self.act_dim
        )
        risk = action if transition.risk_action is None else self._vector(
            "risk_action", transition.risk_action, self.act_dim
        )
        for name in ("cost", "done", "cost_prev"):
            flag = getattr(transition, name)
            if flag not in (0, 1):
                raise MalformedTransitionError(f"{name} must be 0 or 1, got {flag!r}")
        if not np.isfinite(transition.reward):
            raise MalformedTransitionError(f"reward must be finite, got {transition.reward!r}")

        i = self._next
        self._obs[i] = obs
        self._action[i] = action
        self._next_obs[i] = next_obs
        self._reward[i] = transition.reward
        self._cost[i] = transition.cost
        self._done[i] = transition.done
        self._task_action[i] = task
        self._risk_action[i] = risk
        self._cost_prev[i] = transition.cost_prev

        self._next = (self._next + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _gather(self, idx: np.ndarray) -> Batch:
        return Batch(
            obs=self._obs[idx],
            action=self._action[idx],
            next_obs=self._next_obs[idx],
            reward=self._reward[idx],
            cost=self._cost[idx],
            done=self._done[idx],
            task_action=self._task_action[idx],
            risk_action=self._risk_action[idx],
            cost_prev=self._cost_prev[idx],
        )

    def get(self, i: int) -> Transition:
        """Return the i-th stored transition, oldest first."""
        if not 0 <= i < self._size:
            raise IndexError(f"index {i} out of range for buffer of size {self._size}")
        start = self._next if self._size == self.capacity else 0
        return self._gather(np.array([(start + i) % self.capacity])).transition(0)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """Draw ``n`` transitions uniformly with replacement.

        Raises:
            EmptyBufferError: If nothing has been stored yet
        """
        if self._size == 0:
            raise EmptyBufferError("Cannot sample from an empty replay buffer")
        if n < 1:
            raise ValueError(f"sample size must be >= 1, got {n}")
        idx = rng.integers(0, self._size, size=n)
        return self._gather(idx)
