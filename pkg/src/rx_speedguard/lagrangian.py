"""Off-policy Lagrangian: primal-dual updates with a single nonnegative multiplier."""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Tuple

import numpy as np
from numpy.typing import ArrayLike

from .backbone import OffPolicyAgent, Penalty
from .buffer import Batch
from .config import HyperConfig
from .nn import forward

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScalarMultiplier:
    """Lagrange multiplier with its dual learning rate and cost threshold."""

    value: float
    lr: float
    threshold: float

    def __post_init__(self) -> None:
        if not self.value >= 0.0:
            raise ValueError(f"multiplier must be >= 0, got {self.value}")
        if self.lr <= 0.0:
            raise ValueError(f"multiplier learning rate must be > 0, got {self.lr}")


def projected_ascent(value: ArrayLike, lr: ArrayLike, drive: ArrayLike) -> np.ndarray:
    """max(0, value + lr * drive), elementwise."""
    return np.maximum(0.0, np.asarray(value, dtype=np.float64) + lr * np.asarray(drive))


def multiplier_update(multiplier: ScalarMultiplier, mean_cost_value: float) -> ScalarMultiplier:
    """Projected dual ascent: max(0, lambda + lr (mean Q_c - threshold))."""
    drive = mean_cost_value - multiplier.threshold
    value = projected_ascent(multiplier.value, multiplier.lr, drive)
    return replace(multiplier, value=float(value))


def lagrangian_penalty(value: float) -> Penalty:
    """Penalty lambda * Q_c; the constant -lambda * threshold is left out."""

    def penalty(qc: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return value * qc, np.full_like(qc, value)

    return penalty


class LagrangianAgent(OffPolicyAgent):
    """TD3 with the actor loss -Q + lambda Q_c and a dual step every update."""

    name = "lagrangian"

    def __init__(
        self, config: HyperConfig, obs_dim: int, act_dim: int, rng: np.random.Generator
    ) -> None:
        super().__init__(config, obs_dim, act_dim, rng)
        self.multiplier = ScalarMultiplier(
            value=config.multiplier_init, lr=config.multiplier_lr, threshold=config.cost_limit
        )

    def actor_penalty(self, obs: np.ndarray) -> Penalty:
        return lagrangian_penalty(self.multiplier.value)

    def lagrangian_actor_loss(self, batch: Batch) -> float:
        """Adam step on mean(-Q1(s, pi(s)) + lambda Q_c(s, pi(s)))."""
        return self.core.step_actor(batch.obs, self.actor_penalty(batch.obs))

    def update_policy(self, batch: Batch) -> Dict[str, float]:
        return {"actor": self.lagrangian_actor_loss(batch)}

    def mean_cost_value(self, obs: np.ndarray) -> float:
        action = forward(self.core.actor, obs)
        return float(np.mean(self.core.q_value(self.core.cost_critic, obs, action)))

    def update_multipliers(self, batch: Batch) -> Dict[str, float]:
        # same mini-batch as the primal step
        previous = self.multiplier.value
        self.multiplier = multiplier_update(self.multiplier, self.mean_cost_value(batch.obs))
        if previous == 0.0 < self.multiplier.value:
            logger.debug(f"Multiplier left zero after {self.core.updates} updates")
        return {"multiplier": self.multiplier.value}

    def diagnostics(self) -> Dict[str, float]:
        info = super().diagnostics()
        info["multiplier"] = self.multiplier.value
        return info

    def invariant_breaches(self, rng: np.random.Generator) -> List[str]:
        if self.multiplier.value < 0.0:
            return [f"scalar multiplier is negative: {self.multiplier.value}"]
        return []
