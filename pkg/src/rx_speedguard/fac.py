"""Feasible Actor-Critic: state-dependent multipliers from a softplus-headed network.

The actor minimizes -Q + lambda(s) Q_c with lambda(s) held fixed; the
multiplier network ascends mean lambda(s) (Q_c(s, pi(s)) - threshold) with the
critic and actor held fixed, once every ``multiplier_delay`` updates.
"""

from typing import Dict, List, Sequence, Tuple

import numpy as np

from .backbone import OffPolicyAgent, Penalty
from .buffer import Batch
from .config import HyperConfig
from .nn import Gradient, adam_step, backward, forward, init_params, mlp_layer_sizes

# Initial softplus(-5) ~ 0.0067, so lambda(s) starts near zero.
MULTIPLIER_FINAL_BIAS = -5.0


def state_penalty(multipliers: np.ndarray) -> Penalty:
    """Penalty lambda(s) * Q_c per sample, lambda(s) treated as a constant."""

    def penalty(qc: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return multipliers * qc, multipliers

    return penalty


class MultiplierNet:
    """Network s -> lambda(s) > 0 with a softplus head.

    Args:
        obs_dim: Observation width
        hidden_sizes: Hidden widths; ``()`` gives a linear-softplus model
        lr: Adam learning rate for the ascent step
        delay: Updates between multiplier steps
        threshold: Cost-value threshold
        rng: Generator for weight initialization
    """

    def __init__(
        self,
        obs_dim: int,
        hidden_sizes: Sequence[int],
        lr: float,
        delay: int,
        threshold: float,
        rng: np.random.Generator,
        final_bias: float = MULTIPLIER_FINAL_BIAS,
    ) -> None:
        if delay < 1:
            raise ValueError(f"multiplier delay must be >= 1, got {delay}")
        self.params = init_params(
            mlp_layer_sizes(obs_dim, hidden_sizes, 1), rng, "softplus", final_bias=final_bias
        )
        self.lr = float(lr)
        self.delay = int(delay)
        self.threshold = float(threshold)
        self.steps = 0

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return forward(self.params, obs)[..., 0]

    def objective(self, obs: np.ndarray, qc: np.ndarray) -> float:
        return float(np.mean(self(obs) * (qc - self.threshold)))

    def ascent_gradient(self, obs: np.ndarray, qc: np.ndarray) -> Gradient:
        """Gradient of mean lambda(s) (qc - threshold) with respect to the network."""
        upstream = ((qc - self.threshold) / obs.shape[0])[:, None]
        return backward(self.params, obs, upstream)

    def ascend(self, obs: np.ndarray, qc: np.ndarray) -> float:
        """One Adam ascent step; returns the objective before the step."""
        value = self.objective(obs, qc)
        grad = self.ascent_gradient(obs, qc)
        descent = Gradient(
            weights=[-w for w in grad.weights],
            biases=[-b for b in grad.biases],
            input_grad=-grad.input_grad,
        )
        self.params = adam_step(self.params, descent, self.lr)
        self.steps += 1
        return value


class FACAgent(OffPolicyAgent):
    """TD3 with state-wise multipliers lambda(s) on the cost critic."""

    name = "fac"

    def __init__(
        self, config: HyperConfig, obs_dim: int, act_dim: int, rng: np.random.Generator
    ) -> None:
        super().__init__(config, obs_dim, act_dim, rng)
        self.multiplier_net = MultiplierNet(
            obs_dim,
            config.hidden_sizes,
            lr=config.multiplier_lr,
            delay=config.multiplier_delay,
            threshold=config.cost_limit,
            rng=rng,
        )

    def actor_penalty(self, obs: np.ndarray) -> Penalty:
        return state_penalty(self.multiplier_net(obs))

    def fac_actor_loss(self, batch: Batch) -> float:
        """Adam step on mean(-Q1(s, pi(s)) + lambda(s) Q_c(s, pi(s)))."""
        return self.core.step_actor(batch.obs, self.actor_penalty(batch.obs))

    def update_policy(self, batch: Batch) -> Dict[str, float]:
        return {"actor": self.fac_actor_loss(batch)}

    def multiplier_net_update(self, batch: Batch, update_counter: int) -> Dict[str, float]:
        """Ascent step on the multiplier network when ``update_counter`` is on schedule."""
        if update_counter % self.multiplier_net.delay != 0:
            return {}
        action = forward(self.core.actor, batch.obs)
        qc = self.core.q_value(self.core.cost_critic, batch.obs, action)
        return {"multiplier_net": self.multiplier_net.ascend(batch.obs, qc)}

    def update_multipliers(self, batch: Batch) -> Dict[str, float]:
        return self.multiplier_net_update(batch, self.core.updates)

    def probe_multipliers(self, rng: np.random.Generator, n: int = 256) -> np.ndarray:
        return self.multiplier_net(rng.normal(size=(n, self.obs_dim)))

    def diagnostics(self) -> Dict[str, float]:
        info = super().diagnostics()
        info["multiplier_net_steps"] = float(self.multiplier_net.steps)
        # fixed sample set, independent of the training streams
        probes = self.probe_multipliers(np.random.default_rng(0))
        info["multiplier_probe_min"] = float(np.min(probes))
        return info

    def invariant_breaches(self, rng: np.random.Generator) -> List[str]:
        lowest = float(np.min(self.probe_multipliers(rng)))
        if not lowest > 0.0:
            return [f"state multiplier is not positive: min lambda(s) = {lowest}"]
        return []
