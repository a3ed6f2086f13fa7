"""Shared fixtures: small networks and short runs."""

import numpy as np
import pytest

from rx_speedguard.buffer import Batch
from rx_speedguard.config import defaults


@pytest.fixture
def make_config():
    """Factory for configs small enough to train in a test."""

    def _make(algorithm="td3", **changes):
        small = dict(
            hidden_sizes=(8, 8),
            batch_size=8,
            start_steps=20,
            total_steps=120,
            eval_interval=60,
            eval_episodes=1,
            buffer_capacity=1000,
            env_horizon=50,
        )
        small.update(changes)
        return defaults(algorithm).replace(**small)

    return _make


@pytest.fixture
def make_batch():
    """Factory for random batches with fixed reward, cost and done columns."""

    def _make(n=8, obs_dim=4, act_dim=2, reward=0.0, cost=0.0, done=0.0, seed=0):
        rng = np.random.default_rng(seed)
        action = rng.uniform(-1.0, 1.0, size=(n, act_dim))
        return Batch(
            obs=rng.normal(size=(n, obs_dim)),
            action=action,
            next_obs=rng.normal(size=(n, obs_dim)),
            reward=np.full(n, float(reward)),
            cost=np.full(n, float(cost)),
            done=np.full(n, float(done)),
            task_action=action.copy(),
            risk_action=action.copy(),
            cost_prev=np.zeros(n),
        )

    return _make
