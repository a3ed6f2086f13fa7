"""Tests for the dense-network core."""

import numpy as np
import pytest

from rx_speedguard.nn import (
    ADAM_EPS,
    OUTPUT_ACTIVATIONS,
    Gradient,
    NetParams,
    NonFiniteError,
    ShapeError,
    adam_step,
    backward,
    forward,
    init_params,
    mlp_layer_sizes,
    soft_update,
)


def _loss(params, x, seed, head=None):
    return float(np.sum(forward(params, x, head) * seed))


def _numeric_param_grads(params, x, seed, eps=1e-6):
    grads = []
    for group in (params.weights, params.biases):
        for arr in group:
            g = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                original = arr[idx]
                arr[idx] = original + eps
                plus = _loss(params, x, seed)
                arr[idx] = original - eps
                minus = _loss(params, x, seed)
                arr[idx] = original
                g[idx] = (plus - minus) / (2 * eps)
            grads.append(g)
    return grads


def _max_rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-4)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


class TestInitAndForward:
    """Test initialization and the forward pass."""

    def test_layer_sizes(self):
        """Test that hidden widths are placed between input and output."""
        assert mlp_layer_sizes(4, (256, 256), 2) == (4, 256, 256, 2)
        assert mlp_layer_sizes(4, (), 1) == (4, 1)

    def test_init_bounds(self):
        """Test uniform init within +-1/sqrt(fan_in)."""
        params = init_params((6, 16, 3), np.random.default_rng(0))
        assert np.all(np.abs(params.weights[0]) <= 1 / np.sqrt(6))
        assert np.all(np.abs(params.weights[1]) <= 1 / np.sqrt(16))
        assert params.layer_sizes == (6, 16, 3)
        assert params.t == 0

    def test_final_bias(self):
        """Test that the output bias can be set to a constant."""
        params = init_params((3, 8, 1), np.random.default_rng(0), "softplus", final_bias=-5.0)
        assert np.all(params.biases[-1] == -5.0)

    def test_vector_and_batch_inputs(self):
        """Test that output rank follows input rank."""
        params = init_params((3, 8, 2), np.random.default_rng(1))
        x = np.random.default_rng(2).normal(size=(5, 3))
        batch_out = forward(params, x)
        assert batch_out.shape == (5, 2)
        assert forward(params, x[0]).shape == (2,)
        np.testing.assert_allclose(forward(params, x[0]), batch_out[0])

    def test_single_linear_layer(self):
        """Test 2 * 3 + 1 = 7 through one identity layer."""
        params = NetParams(weights=[np.array([[2.0]])], biases=[np.array([1.0])])
        np.testing.assert_array_equal(forward(params, np.array([3.0])), [7.0])

    def test_wrong_input_width(self):
        """Test that a mismatched input raises ShapeError."""
        params = init_params((3, 8, 2), np.random.default_rng(1))
        with pytest.raises(ShapeError):
            forward(params, np.zeros(4))

    def test_head_ranges(self):
        """Test the output ranges of the bounded heads."""
        rng = np.random.default_rng(3)
        x = rng.normal(scale=50.0, size=(200, 3))
        for head, low, high in (("tanh", -1, 1), ("sigmoid", 0, 1)):
            out = forward(init_params((3, 8, 2), rng, head), x)
            assert np.all(out >= low) and np.all(out <= high)

    def test_softplus_strictly_positive(self):
        """Test that the softplus head stays > 0 for very negative pre-activations."""
        params = init_params((2, 1), np.random.default_rng(0), "softplus", final_bias=-1000.0)
        assert np.all(forward(params, np.zeros((4, 2))) > 0.0)

    def test_output_activation_override(self):
        """Test that output_activation overrides the stored head."""
        params = init_params((3, 4, 2), np.random.default_rng(0), "identity")
        x = np.ones(3)
        np.testing.assert_allclose(forward(params, x, "tanh"), np.tanh(forward(params, x)))

    def test_invalid_params(self):
        """Test validation of malformed parameter sets."""
        with pytest.raises(ShapeError):
            NetParams(weights=[np.zeros((3, 4)), np.zeros((5, 2))], biases=[np.zeros(4), np.zeros(2)])
        with pytest.raises(ValueError, match="Unknown output activation"):
            NetParams(weights=[np.zeros((3, 4))], biases=[np.zeros(4)], head="relu6")


class TestBackward:
    """Test reverse-mode gradients against finite differences."""

    @pytest.mark.parametrize("head", OUTPUT_ACTIVATIONS)
    def test_parameter_gradients(self, head):
        """Test parameter gradients for random networks of every head."""
        rng = np.random.default_rng(10)
        worst = 0.0
        for _ in range(100):
            params = init_params((3, 5, 4, 2), rng, head)
            x = rng.normal(size=(3, 3))
            seed = rng.normal(size=(3, 2))
            grad = backward(params, x, seed)
            numeric = _numeric_param_grads(params, x, seed)
            worst = max(worst, _max_rel_error(grad.weights + grad.biases, numeric))
        assert worst <= 1e-4

    def test_input_gradient(self):
        """Test that input_grad keeps one row per sample and matches differences."""
        rng = np.random.default_rng(11)
        params = init_params((4, 6, 1), rng, "tanh")
        x = rng.normal(size=(3, 4))
        seed = np.ones((3, 1))
        grad = backward(params, x, seed)
        assert grad.input_grad.shape == (3, 4)
        eps = 1e-6
        for i in range(3):
            for j in range(4):
                plus, minus = x.copy(), x.copy()
                plus[i, j] += eps
                minus[i, j] -= eps
                numeric = (_loss(params, plus, seed) - _loss(params, minus, seed)) / (2 * eps)
                assert grad.input_grad[i, j] == pytest.approx(numeric, rel=1e-4, abs=1e-8)

    def test_relu_subgradient_zero_at_kink(self):
        """Test that a hidden pre-activation of exactly 0 passes no gradient."""
        params = NetParams(
            weights=[np.zeros((2, 3)), np.ones((3, 1))],
            biases=[np.zeros(3), np.zeros(1)],
        )
        grad = backward(params, np.array([1.0, -2.0]), np.array([1.0]))
        assert np.all(grad.weights[0] == 0.0)
        assert np.all(grad.biases[0] == 0.0)
        assert np.all(grad.input_grad == 0.0)

    def test_upstream_shape_checked(self):
        """Test that a mismatched upstream gradient raises ShapeError."""
        params = init_params((3, 4, 2), np.random.default_rng(0))
        with pytest.raises(ShapeError):
            backward(params, np.zeros((5, 3)), np.zeros((5, 1)))

    def test_nonfinite_upstream(self):
        """Test that NaN upstream gradients are refused."""
        params = init_params((3, 4, 1), np.random.default_rng(0))
        with pytest.raises(NonFiniteError):
            backward(params, np.zeros((2, 3)), np.array([[np.nan], [0.0]]))


class TestAdam:
    """Test the Adam update."""

    def test_first_step_moves_by_lr(self):
        """Test that the bias-corrected first step has size lr * |g| / (|g| + eps)."""
        params = init_params((3, 4, 1), np.random.default_rng(0))
        grad = backward(params, np.ones((2, 3)), np.ones((2, 1)))
        updated = adam_step(params, grad, lr=1e-3)
        for before, after, g in zip(params.weights, updated.weights, grad.weights):
            expected = before - 1e-3 * g / (np.abs(g) + ADAM_EPS)
            np.testing.assert_allclose(after, expected, rtol=1e-9, atol=1e-15)
        assert updated.t == 1
        assert params.t == 0

    def test_zero_gradient_leaves_params(self):
        """Test that a zero gradient does not move the parameters."""
        params = init_params((3, 4, 1), np.random.default_rng(0))
        zero = Gradient(
            weights=[np.zeros_like(w) for w in params.weights],
            biases=[np.zeros_like(b) for b in params.biases],
            input_grad=np.zeros(3),
        )
        updated = adam_step(params, zero, lr=1e-3)
        for a, b in zip(params.weights, updated.weights):
            np.testing.assert_array_equal(a, b)

    def test_scalar_first_step(self):
        """Test that parameter 0 with gradient 1 and lr 3e-4 moves to about -3e-4."""
        params = NetParams(weights=[np.zeros((1, 1))], biases=[np.zeros(1)])
        grad = Gradient(weights=[np.ones((1, 1))], biases=[np.zeros(1)], input_grad=np.zeros(1))
        updated = adam_step(params, grad, lr=3e-4)
        assert updated.weights[0][0, 0] == pytest.approx(-2.99999997e-4, rel=1e-9)

    def test_refuses_nonfinite_gradient(self):
        """Test that an infinite gradient raises NonFiniteError."""
        params = init_params((2, 1), np.random.default_rng(0))
        bad = Gradient(weights=[np.full((2, 1), np.inf)], biases=[np.zeros(1)], input_grad=np.zeros(2))
        with pytest.raises(NonFiniteError):
            adam_step(params, bad, lr=1e-3)

    def test_refuses_incongruent_gradient(self):
        """Test that a gradient of the wrong shape raises ShapeError."""
        params = init_params((2, 1), np.random.default_rng(0))
        other = init_params((3, 1), np.random.default_rng(0))
        grad = backward(other, np.zeros(3), np.ones(1))
        with pytest.raises(ShapeError):
            adam_step(params, grad, lr=1e-3)

    def test_minimizes_quadratic(self):
        """Test that repeated steps fit a linear regression target."""
        rng = np.random.default_rng(5)
        x = rng.normal(size=(64, 2))
        y = x @ np.array([1.5, -0.5]) + 0.3
        params = init_params((2, 1), rng)
        for _ in range(3000):
            err = forward(params, x)[:, 0] - y
            params = adam_step(params, backward(params, x, (2 * err / len(err))[:, None]), 1e-2)
        assert np.mean((forward(params, x)[:, 0] - y) ** 2) < 1e-3


class TestSoftUpdate:
    """Test Polyak averaging."""

    def test_tau_one_copies_online(self):
        """Test that tau=1 makes the target equal to the online network."""
        rng = np.random.default_rng(0)
        target, online = init_params((3, 4, 1), rng), init_params((3, 4, 1), rng)
        updated = soft_update(target, online, 1.0)
        for a, b in zip(updated.weights, online.weights):
            np.testing.assert_array_equal(a, b)

    def test_convex_combination(self):
        """Test (1 - tau) * target + tau * online."""
        rng = np.random.default_rng(0)
        target, online = init_params((3, 4, 1), rng), init_params((3, 4, 1), rng)
        updated = soft_update(target, online, 0.005)
        np.testing.assert_allclose(
            updated.weights[0], 0.995 * target.weights[0] + 0.005 * online.weights[0]
        )

    def test_target_keeps_own_moments(self):
        """Test that averaging does not copy the online optimizer state."""
        rng = np.random.default_rng(0)
        online = init_params((2, 1), rng)
        target = online.copy()
        online = adam_step(online, backward(online, np.ones(2), np.ones(1)), 1e-3)
        updated = soft_update(target, online, 0.5)
        assert updated.t == 0
        assert np.all(updated.m_weights[0] == 0.0)

    def test_half_tau_midpoint(self):
        """Test that tau=0.5 between 0 and 2 gives 1."""
        target = NetParams(weights=[np.zeros((1, 1))], biases=[np.zeros(1)])
        online = NetParams(weights=[np.full((1, 1), 2.0)], biases=[np.full(1, 2.0)])
        updated = soft_update(target, online, 0.5)
        assert updated.weights[0][0, 0] == 1.0
        assert updated.biases[0][0] == 1.0

    @pytest.mark.parametrize("tau", [0.0, -0.1, 1.5])
    def test_invalid_tau(self, tau):
        """Test that tau outside (0, 1] raises ValueError."""
        params = init_params((2, 1), np.random.default_rng(0))
        with pytest.raises(ValueError, match="tau"):
            soft_update(params, params.copy(), tau)

    def test_incongruent_networks(self):
        """Test that differently shaped networks cannot be averaged."""
        rng = np.random.default_rng(0)
        with pytest.raises(ShapeError):
            soft_update(init_params((2, 1), rng), init_params((2, 3, 1), rng), 0.5)
