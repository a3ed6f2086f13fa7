"""Recovery RL: a task policy for reward and a recovery policy that takes over when risky.

Both policies are deterministic actors. The risk critic estimates the
discounted probability of a future constraint violation; once warm-up ends,
the recovery action is executed whenever the risk of the task action exceeds
the threshold.
"""

import logging
from typing import Dict, List, Tuple

import numpy as np

from .backbone import ActionChoice, OffPolicyAgent
from .buffer import Batch
from .config import HyperConfig
from .nn import Gradient, adam_step, backward, forward, init_params, mlp_layer_sizes, soft_update

logger = logging.getLogger(__name__)


class RecoveryAgent(OffPolicyAgent):
    """Dual-policy agent with a risk-critic takeover rule.

    The reward critic is trained on the executed actions, so the task policy
    learns in the MDP induced by the recovery policy. Once warm-up has ended
    the risk critic bootstraps through that same composite policy.

    Attributes:
        risk_actor: Recovery policy minimizing the risk critic (own target network)
        threshold: Risk threshold in (0, 1); the configured cost limit
        takeovers: Number of executed recovery actions during training
        engaged: Whether training has passed warm-up, so takeovers can fire
    """

    name = "recovery"
    uses_risk_critic = True

    def __init__(
        self, config: HyperConfig, obs_dim: int, act_dim: int, rng: np.random.Generator
    ) -> None:
        super().__init__(config, obs_dim, act_dim, rng)
        if not 0.0 < config.cost_limit < 1.0:
            raise ValueError(
                f"Recovery risk threshold (cost_limit) must be in (0, 1), got {config.cost_limit}"
            )
        self.threshold = config.cost_limit
        self.risk_actor = init_params(
            mlp_layer_sizes(obs_dim, config.hidden_sizes, act_dim), rng, "tanh"
        )
        self.risk_actor_target = self.risk_actor.copy()
        self.takeovers = 0
        self.engaged = False

    def risk(self, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
        assert self.core.risk_critic is not None
        return self.core.q_value(self.core.risk_critic, obs, action)

    def recovery_action(self, obs: np.ndarray, step: int, rng: np.random.Generator) -> np.ndarray:
        """Exploring recovery proposal, uniform random during the first start_steps."""
        if step < self.config.start_steps:
            return rng.uniform(-1.0, 1.0, size=self.act_dim)
        noisy = forward(self.risk_actor, obs) + rng.normal(
            0.0, self.core.sigma, size=self.act_dim
        )
        return np.clip(noisy, -1.0, 1.0)

    def takes_over(self, obs: np.ndarray, task_action: np.ndarray, step: int) -> bool:
        """Recovery fires after warm-up when Q_risk(s, a_task) exceeds the threshold."""
        if step < self.config.warmup_steps:
            return False
        return float(self.risk(obs, task_action)) > self.threshold

    def select_with_recovery(
        self, obs: np.ndarray, step: int, rng: np.random.Generator
    ) -> ActionChoice:
        """Propose a task and a recovery action (both exploring) and pick one to execute."""
        task = self.exploration_action(obs, step, rng)
        recovery = self.recovery_action(obs, step, rng)
        if step >= self.config.warmup_steps:
            self.engaged = True
        if self.takes_over(obs, task, step):
            if self.takeovers == 0:
                logger.info(f"Recovery policy took over for the first time at step {step}")
            self.takeovers += 1
            return ActionChoice(executed=recovery, task=task, risk=recovery)
        return ActionChoice(executed=task, task=task, risk=recovery)

    def act(
        self, obs: np.ndarray, cost_prev: int, step: int, rng: np.random.Generator
    ) -> ActionChoice:
        return self.select_with_recovery(obs, step, rng)

    def policy(self, obs: np.ndarray, cost_prev: int, step: int) -> np.ndarray:
        task = self.core.select_action(obs, explore=False)
        if self.takes_over(obs, task, step):
            return np.clip(forward(self.risk_actor, obs), -1.0, 1.0)
        return task

    def bootstrap_action(self, next_obs: np.ndarray) -> np.ndarray:
        """Action of the executed policy at s' under the target networks.

        Before warm-up ends this is the task target actor. Afterwards rows whose
        target risk exceeds the threshold take the recovery target actor instead.
        """
        task = forward(self.core.actor_target, next_obs)
        if not self.engaged:
            return task
        assert self.core.risk_critic_target is not None
        risky = self.core.q_value(self.core.risk_critic_target, next_obs, task) > self.threshold
        return np.where(risky[:, None], forward(self.risk_actor_target, next_obs), task)

    def update_auxiliary(self, batch: Batch) -> Dict[str, float]:
        next_action = self.bootstrap_action(batch.next_obs)
        return {"risk_critic": self.core.update_risk_critic(batch, next_action)}

    def update_task_actor(self, batch: Batch) -> float:
        """Adam step on mean -Q1(s, pi_task(s))."""
        return self.core.step_actor(batch.obs)

    def recovery_objective(self, obs: np.ndarray) -> Tuple[float, Gradient]:
        """Loss mean Q_risk(s, pi_risk(s)) and its gradient for the recovery actor."""
        assert self.core.risk_critic is not None
        n = obs.shape[0]
        action = forward(self.risk_actor, obs)
        q_risk, dq_da = self.core.critic_action_gradient(self.core.risk_critic, obs, action)
        return float(np.mean(q_risk)), backward(self.risk_actor, obs, dq_da / n)

    def update_recovery_actor(self, batch: Batch) -> float:
        """Adam step descending the predicted violation probability of pi_risk."""
        loss, grad = self.recovery_objective(batch.obs)
        self.risk_actor = adam_step(self.risk_actor, grad, self.config.safe_actor_lr)
        self.risk_actor_target = soft_update(
            self.risk_actor_target, self.risk_actor, self.config.polyak_tau
        )
        return loss

    def update_policy(self, batch: Batch) -> Dict[str, float]:
        return {
            "actor": self.update_task_actor(batch),
            "recovery_actor": self.update_recovery_actor(batch),
        }

    def diagnostics(self) -> Dict[str, float]:
        info = super().diagnostics()
        info["recovery_takeovers"] = float(self.takeovers)
        return info

    def invariant_breaches(self, rng: np.random.Generator) -> List[str]:
        samples = np.concatenate(
            [rng.normal(size=(256, self.obs_dim)), rng.uniform(-1, 1, size=(256, self.act_dim))],
            axis=1,
        )
        assert self.core.risk_critic is not None
        values = forward(self.core.risk_critic, samples)
        if np.any(values < 0.0) or np.any(values > 1.0):
            return [f"risk critic left [0, 1]: range [{values.min():.3g}, {values.max():.3g}]"]
        return []
