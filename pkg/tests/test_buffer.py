"""Tests for the replay buffer."""

import numpy as np
import pytest

from rx_speedguard.buffer import (
    EmptyBufferError,
    MalformedTransitionError,
    ReplayBuffer,
    Transition,
)


def make_transition(i, **changes):
    fields = dict(
        obs=np.full(4, float(i)),
        action=np.array([0.1 * i, -0.1 * i]),
        next_obs=np.full(4, float(i + 1)),
        reward=float(i),
        cost=i % 2,
        done=0,
    )
    fields.update(changes)
    return Transition(**fields)


@pytest.fixture
def buffer():
    return ReplayBuffer(capacity=5, obs_dim=4, act_dim=2)


class TestPushAndGet:
    """Test storage order and eviction."""

    def test_size_grows_to_capacity(self, buffer):
        """Test that size saturates at capacity."""
        for i in range(8):
            buffer.push(make_transition(i))
        assert len(buffer) == 5

    def test_oldest_first_after_wraparound(self, buffer):
        """Test that the oldest entries are evicted first."""
        for i in range(7):
            buffer.push(make_transition(i))
        assert [buffer.get(k).reward for k in range(5)] == [2.0, 3.0, 4.0, 5.0, 6.0]

    def test_proposals_default_to_executed_action(self, buffer):
        """Test that missing task/risk actions fall back to the executed action."""
        buffer.push(make_transition(3))
        stored = buffer.get(0)
        np.testing.assert_array_equal(stored.task_action, stored.action)
        np.testing.assert_array_equal(stored.risk_action, stored.action)

    def test_stores_all_fields(self, buffer):
        """Test that every field survives storage."""
        t = make_transition(
            1, task_action=np.array([0.5, 0.5]), risk_action=np.array([-0.5, 0.0]), cost_prev=1, done=1
        )
        buffer.push(t)
        stored = buffer.get(0)
        np.testing.assert_array_equal(stored.task_action, [0.5, 0.5])
        np.testing.assert_array_equal(stored.risk_action, [-0.5, 0.0])
        assert stored.cost_prev == 1 and stored.done == 1 and stored.cost == 1

    def test_get_out_of_range(self, buffer):
        """Test IndexError for indices beyond the stored size."""
        buffer.push(make_transition(0))
        with pytest.raises(IndexError):
            buffer.get(1)

    def test_invalid_capacity(self):
        """Test that a zero capacity is rejected."""
        with pytest.raises(ValueError):
            ReplayBuffer(0, 4, 2)


class TestValidation:
    """Test rejection of malformed transitions."""

    @pytest.mark.parametrize(
        "changes",
        [
            {"obs": np.zeros(3)},
            {"action": np.array([np.nan, 0.0])},
            {"next_obs": np.full(4, np.inf)},
            {"cost": 2},
            {"done": -1},
            {"cost_prev": 0.5},
            {"reward": float("nan")},
            {"task_action": np.zeros(3)},
        ],
    )
    def test_rejects(self, buffer, changes):
        """Test that malformed transitions raise and are not stored."""
        with pytest.raises(MalformedTransitionError):
            buffer.push(make_transition(1, **changes))
        assert len(buffer) == 0


class TestSample:
    """Test uniform sampling."""

    def test_empty_buffer(self, buffer):
        """Test that sampling an empty buffer raises EmptyBufferError."""
        with pytest.raises(EmptyBufferError):
            buffer.sample(4, np.random.default_rng(0))

    def test_batch_shapes(self, buffer):
        """Test the column shapes of a sampled batch."""
        for i in range(3):
            buffer.push(make_transition(i))
        batch = buffer.sample(10, np.random.default_rng(0))
        assert len(batch) == 10
        assert batch.obs.shape == (10, 4)
        assert batch.action.shape == (10, 2)
        assert batch.cost.shape == (10,)
        assert set(batch.reward) <= {0.0, 1.0, 2.0}

    def test_sampling_is_seeded(self, buffer):
        """Test that the same generator state draws the same batch."""
        for i in range(5):
            buffer.push(make_transition(i))
        a = buffer.sample(8, np.random.default_rng(42))
        b = buffer.sample(8, np.random.default_rng(42))
        np.testing.assert_array_equal(a.reward, b.reward)

    def test_roughly_uniform(self, buffer):
        """Test that every stored entry is drawn with similar frequency."""
        for i in range(5):
            buffer.push(make_transition(i))
        batch = buffer.sample(20000, np.random.default_rng(1))
        counts = np.bincount(batch.reward.astype(int), minlength=5)
        assert np.all(np.abs(counts / 20000 - 0.2) < 0.02)
