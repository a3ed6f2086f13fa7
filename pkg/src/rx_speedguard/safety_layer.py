"""Safety layer: a learned linear single-step cost model plus closed-form action projection.

The model predicts the next cost as ``g(s)^T a + c_prev``. When that
prediction exceeds the instantaneous threshold, the action is moved to the
closest point of the half-space ``g(s)^T a + c_prev <= threshold``.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np

from .backbone import ActionChoice, OffPolicyAgent
from .buffer import Batch
from .config import HyperConfig
from .nn import adam_step, backward, forward, init_params, mlp_layer_sizes

logger = logging.getLogger(__name__)

# Below this squared norm the cost model carries no usable direction.
DEGENERATE_NORM_SQ = 1e-8


def closed_form_projection(
    g: np.ndarray, mu: np.ndarray, cost_prev: float, threshold: float
) -> np.ndarray:
    """Minimizer of 0.5 ||a - mu||^2 subject to g^T a + cost_prev <= threshold.

    No clipping is applied. ``g`` must be non-zero when the constraint is active.
    """
    violation = float(g @ mu) + cost_prev - threshold
    if violation <= 0.0:
        return mu
    return mu - (violation / float(g @ g)) * g


@dataclass
class ProjectionStats:
    """Counters of how the projection behaved over a run."""

    calls: int = 0
    active: int = 0
    degenerate: int = 0
    clipped: int = 0

    def as_dict(self) -> Dict[str, float]:
        return {
            "projection_calls": float(self.calls),
            "projection_active": float(self.active),
            "projection_degenerate": float(self.degenerate),
            "projection_clipped": float(self.clipped),
        }


class LinearCostModel:
    """State-conditioned linear model of the single-step cost.

    Args:
        obs_dim: Observation width
        act_dim: Action width (also the width of g(s))
        hidden_sizes: Hidden layer widths of the g network
        threshold: Instantaneous cost threshold
        lr: Adam learning rate
        rng: Generator for weight initialization
    """

    def __init__(
        self,
        obs_dim: int,
        act_dim: int,
        hidden_sizes: Sequence[int],
        threshold: float,
        lr: float,
        rng: np.random.Generator,
    ) -> None:
        if threshold <= 0:
            raise ValueError(f"threshold must be > 0, got {threshold}")
        self.params = init_params(mlp_layer_sizes(obs_dim, hidden_sizes, act_dim), rng)
        self.threshold = float(threshold)
        self.lr = float(lr)
        self.stats = ProjectionStats()

    def direction(self, obs: np.ndarray) -> np.ndarray:
        """g(s); one row per observation for batched input."""
        return forward(self.params, obs)

    def predict(self, obs: np.ndarray, action: np.ndarray, cost_prev: np.ndarray) -> np.ndarray:
        return np.sum(self.direction(obs) * action, axis=-1) + cost_prev

    def train_cost_model(self, batch: Batch) -> float:
        """One Adam step on the MSE between g(s)^T a + c_prev and the observed cost."""
        error = self.predict(batch.obs, batch.action, batch.cost_prev) - batch.cost
        loss = float(np.mean(error * error))
        upstream = (2.0 * error / error.shape[0])[:, None] * batch.action
        self.params = adam_step(self.params, backward(self.params, batch.obs, upstream), self.lr)
        return loss

    def project_action(self, obs: np.ndarray, raw_action: np.ndarray, cost_prev: float) -> np.ndarray:
        """Correct ``raw_action`` onto the predicted-safe half-space, then clip to [-1, 1].

        Feasible actions are returned unchanged. If the constraint is violated
        but g(s) is (numerically) zero, the raw action is returned and the
        incident is counted as degenerate.
        """
        self.stats.calls += 1
        g = self.direction(obs)
        violation = float(g @ raw_action) + cost_prev - self.threshold
        if violation <= 0.0:
            return raw_action

        self.stats.active += 1
        if float(g @ g) < DEGENERATE_NORM_SQ:
            self.stats.degenerate += 1
            logger.debug(f"Degenerate cost model (|g|^2={float(g @ g):.2e}); projection skipped")
            return raw_action

        projected = closed_form_projection(g, raw_action, cost_prev, self.threshold)
        clipped = np.clip(projected, -1.0, 1.0)
        if not np.array_equal(clipped, projected):
            self.stats.clipped += 1
        return clipped


class SafetyLayerAgent(OffPolicyAgent):
    """TD3 whose actions pass through the learned projection once warm-up ends."""

    name = "safety_layer"

    def __init__(
        self, config: HyperConfig, obs_dim: int, act_dim: int, rng: np.random.Generator
    ) -> None:
        super().__init__(config, obs_dim, act_dim, rng)
        self.cost_model = LinearCostModel(
            obs_dim,
            act_dim,
            config.hidden_sizes,
            threshold=config.cost_limit,
            lr=config.safe_critic_lr,
            rng=rng,
        )

    def correct(self, obs: np.ndarray, action: np.ndarray, cost_prev: int, step: int) -> np.ndarray:
        # warm-up boundary is inclusive: projection is on from warmup_steps onward
        if step < self.config.warmup_steps:
            return action
        return self.cost_model.project_action(obs, action, cost_prev)

    def act(
        self, obs: np.ndarray, cost_prev: int, step: int, rng: np.random.Generator
    ) -> ActionChoice:
        raw = self.exploration_action(obs, step, rng)
        executed = self.correct(obs, raw, cost_prev, step)
        return ActionChoice(executed=executed, task=raw, risk=executed)

    def policy(self, obs: np.ndarray, cost_prev: int, step: int) -> np.ndarray:
        return self.correct(obs, self.core.select_action(obs, explore=False), cost_prev, step)

    def update_auxiliary(self, batch: Batch) -> Dict[str, float]:
        return {"cost_model": self.cost_model.train_cost_model(batch)}

    def diagnostics(self) -> Dict[str, float]:
        info = super().diagnostics()
        info.update(self.cost_model.stats.as_dict())
        return info
