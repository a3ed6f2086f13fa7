"""Dense-network numerical core for the actor-critic stack.

Provides a fixed-shape multilayer perceptron (ReLU hidden layers, selectable
output head), reverse-mode gradients, the Adam optimizer and Polyak averaging.
All arrays are 64-bit floats. Weight matrices are stored as ``(fan_in, fan_out)``
so that a batch ``x`` of shape ``(N, fan_in)`` maps through ``x @ W + b``.

Every operation accepts either a single input vector or a 2-D batch; the
output has the same rank as the input.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

OUTPUT_ACTIVATIONS = ("identity", "tanh", "softplus", "sigmoid")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# softplus underflows to 0.0 below about -745; keep the head strictly positive
_SOFTPLUS_FLOOR = np.finfo(np.float64).tiny


class NetworkError(Exception):
    """Base exception for network errors."""

    pass


class ShapeError(NetworkError):
    """Raised when inputs, gradients or parameter sets have the wrong shape."""

    pass


class NonFiniteError(NetworkError):
    """Raised when a gradient or upstream seed contains NaN or infinity."""

    pass


def _zeros_like(arrays: Sequence[np.ndarray]) -> List[np.ndarray]:
    return [np.zeros_like(a) for a in arrays]


@dataclass
class NetParams:
    """Parameters of one MLP plus its Adam optimizer state.

    Attributes:
        weights: Weight matrices, ``weights[i]`` has shape ``(fan_in, fan_out)``
        biases: Bias vectors, ``biases[i]`` has length ``fan_out``
        head: Output activation (one of ``OUTPUT_ACTIVATIONS``)
        m_weights, m_biases: Adam first-moment accumulators
        v_weights, v_biases: Adam second-moment accumulators
        t: Number of Adam steps taken
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    head: str = "identity"
    m_weights: List[np.ndarray] = field(default_factory=list)
    m_biases: List[np.ndarray] = field(default_factory=list)
    v_weights: List[np.ndarray] = field(default_factory=list)
    v_biases: List[np.ndarray] = field(default_factory=list)
    t: int = 0

    def __post_init__(self) -> None:
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if not self.m_weights:
            self.m_weights = _zeros_like(self.weights)
            self.m_biases = _zeros_like(self.biases)
            self.v_weights = _zeros_like(self.weights)
            self.v_biases = _zeros_like(self.biases)
        self._validate()

    def _validate(self) -> None:
        if self.head not in OUTPUT_ACTIVATIONS:
            raise ValueError(
                f"Unknown output activation '{self.head}', "
                f"expected one of {', '.join(OUTPUT_ACTIVATIONS)}"
            )
        if not self.weights or len(self.weights) != len(self.biases):
            raise ShapeError(
                f"Need one bias per weight matrix, got {len(self.weights)} weights "
                f"and {len(self.biases)} biases"
            )
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(
                    f"Layer {i}: weight {w.shape} and bias {b.shape} do not conform"
                )
            if i > 0 and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"Layer {i}: input width {w.shape[0]} does not match previous "
                    f"output width {self.weights[i - 1].shape[1]}"
                )
        for name, moments, params in (
            ("m_weights", self.m_weights, self.weights),
            ("m_biases", self.m_biases, self.biases),
            ("v_weights", self.v_weights, self.weights),
            ("v_biases", self.v_biases, self.biases),
        ):
            if len(moments) != len(params) or any(
                m.shape != p.shape for m, p in zip(moments, params)
            ):
                raise ShapeError(f"Adam state '{name}' is not shaped like its parameters")
        if self.t < 0:
            raise ValueError(f"Adam step counter must be >= 0, got {self.t}")

    @property
    def input_width(self) -> int:
        return int(self.weights[0].shape[0])

    @property
    def output_width(self) -> int:
        return int(self.weights[-1].shape[1])

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.input_width,) + tuple(int(w.shape[1]) for w in self.weights)

    def copy(self) -> "NetParams":
        """Return a deep copy (parameters and optimizer state)."""
        return NetParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            head=self.head,
            m_weights=[m.copy() for m in self.m_weights],
            m_biases=[m.copy() for m in self.m_biases],
            v_weights=[v.copy() for v in self.v_weights],
            v_biases=[v.copy() for v in self.v_biases],
            t=self.t,
        )

    def congruent_with(self, other: "NetParams") -> bool:
        return len(self.weights) == len(other.weights) and all(
            a.shape == b.shape for a, b in zip(self.weights, other.weights)
        )


@dataclass
class Gradient:
    """dLoss/dParam for every parameter of a network, plus dLoss/dInput."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input_grad: np.ndarray

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.weights + self.biases)

    def congruent_with(self, params: NetParams) -> bool:
        return (
            len(self.weights) == len(params.weights)
            and len(self.biases) == len(params.biases)
            and all(g.shape == p.shape for g, p in zip(self.weights, params.weights))
            and all(g.shape == p.shape for g, p in zip(self.biases, params.biases))
        )


def mlp_layer_sizes(
    input_width: int, hidden_sizes: Sequence[int], output_width: int
) -> Tuple[int, ...]:
    """Layer widths for an MLP with the given hidden layers."""
    return (int(input_width),) + tuple(int(h) for h in hidden_sizes) + (int(output_width),)


def init_params(
    layer_sizes: Sequence[int],
    rng: np.random.Generator,
    head: str = "identity",
    final_bias: Optional[float] = None,
) -> NetParams:
    """Initialize an MLP uniformly in +-1/sqrt(fan_in) per layer.

    Args:
        layer_sizes: Widths from input to output, e.g. ``(4, 256, 256, 2)``
        rng: Generator drawing the initial values
        head: Output activation
        final_bias: If given, the output-layer bias is set to this constant

    Returns:
        Freshly initialized parameters with zeroed Adam state
    """
    if len(layer_sizes) < 2 or any(int(s) < 1 for s in layer_sizes):
        raise ShapeError(f"Invalid layer sizes: {tuple(layer_sizes)}")

    weights = []
    biases = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    if final_bias is not None:
        biases[-1] = np.full_like(biases[-1], float(final_bias))
    return NetParams(weights=weights, biases=biases, head=head)


def _apply_head(z: np.ndarray, head: str) -> np.ndarray:
    if head == "identity":
        return z
    if head == "tanh":
        return np.tanh(z)
    if head == "softplus":
        return np.maximum(np.logaddexp(0.0, z), _SOFTPLUS_FLOOR)
    return expit(z)


def _head_derivative(z: np.ndarray, y: np.ndarray, head: str) -> np.ndarray:
    if head == "identity":
        return np.ones_like(z)
    if head == "tanh":
        return 1.0 - y * y
    if head == "softplus":
        return expit(z)
    return y * (1.0 - y)


def _resolve_head(params: NetParams, output_activation: Optional[str]) -> str:
    head = output_activation or params.head
    if head not in OUTPUT_ACTIVATIONS:
        raise ValueError(
            f"Unknown output activation '{head}', "
            f"expected one of {', '.join(OUTPUT_ACTIVATIONS)}"
        )
    return head


def _as_batch(x: np.ndarray, width: int, what: str = "input") -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ShapeError(
            f"{what} has shape {np.shape(x)}, expected width {width}"
        )
    return arr, single


def _trace(
    params: NetParams, x: np.ndarray, head: str
) -> Tuple[List[np.ndarray], List[np.ndarray], np.ndarray]:
    """Forward pass keeping every layer input and pre-activation."""
    layer_inputs = [x]
    pre_activations = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre_activations.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
            layer_inputs.append(h)
    return layer_inputs, pre_activations, _apply_head(pre_activations[-1], head)


def forward(
    params: NetParams, x: np.ndarray, output_activation: Optional[str] = None
) -> np.ndarray:
    """Evaluate the network.

    Args:
        params: Network parameters
        x: Input vector of length ``input_width`` or a batch ``(N, input_width)``
        output_activation: Overrides ``params.head`` when given

    Returns:
        Output vector (or batch) of width ``output_width``

    Raises:
        ShapeError: If the input width does not match the network
    """
    head = _resolve_head(params, output_activation)
    batch, single = _as_batch(x, params.input_width)
    _, _, out = _trace(params, batch, head)
    return out[0] if single else out


def backward(
    params: NetParams,
    x: np.ndarray,
    upstream_grad: np.ndarray,
    output_activation: Optional[str] = None,
) -> Gradient:
    """Backpropagate ``upstream_grad`` (dLoss/dOutput) through the network.

    Parameter gradients are summed over the batch; ``input_grad`` keeps one
    row per sample so that an actor can be chained through a critic.

    Raises:
        ShapeError: If input or upstream gradient shapes do not match
        NonFiniteError: If the upstream gradient is not finite
    """
    head = _resolve_head(params, output_activation)
    batch, single = _as_batch(x, params.input_width)
    upstream = np.asarray(upstream_grad, dtype=np.float64)
    if single and upstream.ndim == 1:
        upstream = upstream[None, :]
    if upstream.shape != (batch.shape[0], params.output_width):
        raise ShapeError(
            f"Upstream gradient has shape {np.shape(upstream_grad)}, "
            f"expected {(batch.shape[0], params.output_width)}"
        )
    if not np.all(np.isfinite(upstream)):
        raise NonFiniteError("Upstream gradient contains non-finite values")

    layer_inputs, pre_activations, out = _trace(params, batch, head)
    n_layers = len(params.weights)
    grad_w: List[np.ndarray] = [np.empty(0)] * n_layers
    grad_b: List[np.ndarray] = [np.empty(0)] * n_layers

    delta = upstream * _head_derivative(pre_activations[-1], out, head)
    grad_in = delta
    for i in reversed(range(n_layers)):
        grad_w[i] = layer_inputs[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        grad_in = delta @ params.weights[i].T
        if i > 0:
            # ReLU subgradient at 0 is 0
            delta = grad_in * (pre_activations[i - 1] > 0.0)

    return Gradient(
        weights=grad_w,
        biases=grad_b,
        input_grad=grad_in[0] if single else grad_in,
    )


def adam_step(
    params: NetParams,
    grad: Gradient,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> NetParams:
    """Apply one Adam update and return the new parameter set.

    Raises:
        ShapeError: If the gradient is not shaped like the parameters
        NonFiniteError: If the gradient is not finite (update refused)
    """
    if not (lr > 0.0 and math.isfinite(lr)):
        raise ValueError(f"Learning rate must be a positive finite number, got {lr}")
    if not grad.congruent_with(params):
        raise ShapeError("Gradient is not shape-congruent with the parameters")
    if not grad.is_finite():
        raise NonFiniteError("Refusing Adam update: gradient contains non-finite values")

    t = params.t + 1
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t

    def _update(
        values: List[np.ndarray],
        grads: List[np.ndarray],
        first: List[np.ndarray],
        second: List[np.ndarray],
    ) -> Tuple[List[np.ndarray], List[np.ndarray], List[np.ndarray]]:
        new_values, new_first, new_second = [], [], []
        for p, g, m, v in zip(values, grads, first, second):
            m = beta1 * m + (1.0 - beta1) * g
            v = beta2 * v + (1.0 - beta2) * g * g
            new_values.append(p - lr * (m / correction1) / (np.sqrt(v / correction2) + eps))
            new_first.append(m)
            new_second.append(v)
        return new_values, new_first, new_second

    weights, m_w, v_w = _update(params.weights, grad.weights, params.m_weights, params.v_weights)
    biases, m_b, v_b = _update(params.biases, grad.biases, params.m_biases, params.v_biases)
    return NetParams(
        weights=weights,
        biases=biases,
        head=params.head,
        m_weights=m_w,
        m_biases=m_b,
        v_weights=v_w,
        v_biases=v_b,
        t=t,
    )


def soft_update(target: NetParams, online: NetParams, tau: float) -> NetParams:
    """Polyak-average ``online`` into ``target``: (1 - tau) * target + tau * online.

    The target keeps its own (unused) optimizer state.

    Raises:
        ShapeError: If the two networks are not shape-congruent
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    if not target.congruent_with(online):
        raise ShapeError("Target and online networks are not shape-congruent")

    return NetParams(
        weights=[(1.0 - tau) * t + tau * o for t, o in zip(target.weights, online.weights)],
        biases=[(1.0 - tau) * t + tau * o for t, o in zip(target.biases, online.biases)],
        head=target.head,
        m_weights=list(target.m_weights),
        m_biases=list(target.m_biases),
        v_weights=list(target.v_weights),
        v_biases=list(target.v_biases),
        t=target.t,
    )
