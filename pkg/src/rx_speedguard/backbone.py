"""Deterministic actor-critic backbone shared by every algorithm.

``AgentCore`` owns the networks and the TD3-style updates (twin reward
critics with a min target, target policy smoothing, delayed actor updates,
Polyak-averaged targets) plus a single cost critic and an optional risk
critic. ``OffPolicyAgent`` is the unconstrained TD3 agent; the safe
algorithms subclass it and override the hooks they need. ``train_step`` runs
one explore / store / sample / update iteration.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .buffer import Batch, ReplayBuffer, Transition
from .config import HyperConfig
from .env import Rollout
from .nn import (
    Gradient,
    NetParams,
    NonFiniteError,
    adam_step,
    backward,
    forward,
    init_params,
    mlp_layer_sizes,
    soft_update,
)

logger = logging.getLogger(__name__)

# Maps cost-critic values Q_c(s, pi(s)) to (per-sample penalty, d penalty / d Q_c).
Penalty = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]


def no_penalty(qc: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    zeros = np.zeros_like(qc)
    return zeros, zeros


def _check_finite(name: str, values: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return values


class AgentCore:
    """Networks and updates of the deterministic actor-critic.

    Attributes:
        actor: Policy network (tanh head) and ``actor_target``
        critic_1, critic_2: Twin reward critics and their targets
        cost_critic: Cost critic (single, identity head) and its target
        risk_critic: Optional risk critic with a sigmoid head bounded to [0, 1]
        updates: Number of critic updates so far (drives the policy delay)
    """

    def __init__(
        self,
        obs_dim: int,
        act_dim: int,
        config: HyperConfig,
        rng: np.random.Generator,
        risk_critic: bool = False,
    ) -> None:
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.config = config

        self.gamma = config.reward_discount
        self.gamma_c = config.cost_discount
        self.sigma = config.exploration_noise
        self.policy_delay = config.policy_delay
        self.tau = config.polyak_tau
        self.updates = 0

        hidden = config.hidden_sizes
        critic_sizes = mlp_layer_sizes(self.obs_dim + self.act_dim, hidden, 1)
        self.actor = init_params(mlp_layer_sizes(self.obs_dim, hidden, self.act_dim), rng, "tanh")
        self.critic_1 = init_params(critic_sizes, rng)
        self.critic_2 = init_params(critic_sizes, rng)
        self.cost_critic = init_params(critic_sizes, rng)
        self.risk_critic: Optional[NetParams] = (
            init_params(critic_sizes, rng, "sigmoid") if risk_critic else None
        )

        self.actor_target = self.actor.copy()
        self.critic_1_target = self.critic_1.copy()
        self.critic_2_target = self.critic_2.copy()
        self.cost_critic_target = self.cost_critic.copy()
        self.risk_critic_target = self.risk_critic.copy() if self.risk_critic else None

    def state_action(self, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
        return np.concatenate([obs, action], axis=-1)

    def select_action(
        self, obs: np.ndarray, explore: bool, rng: Optional[np.random.Generator] = None
    ) -> np.ndarray:
        """pi(s), plus N(0, sigma^2) noise when exploring, clipped to [-1, 1]."""
        action = forward(self.actor, obs)
        if explore:
            if rng is None:
                raise ValueError("Exploration needs a random generator")
            action = action + rng.normal(0.0, self.sigma, size=action.shape)
        return np.clip(action, -1.0, 1.0)

    def q_value(self, params: NetParams, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
        return forward(params, self.state_action(obs, action))[..., 0]

    def critic_target(self, batch: Batch, rng: np.random.Generator) -> np.ndarray:
        """r + gamma (1 - d) min(Q1', Q2')(s', smoothed pi'(s'))."""
        cfg = self.config
        next_action = forward(self.actor_target, batch.next_obs)
        noise = np.clip(
            rng.normal(0.0, cfg.target_noise, size=next_action.shape),
            -cfg.target_noise_clip,
            cfg.target_noise_clip,
        )
        next_action = np.clip(next_action + noise, -1.0, 1.0)
        q1 = self.q_value(self.critic_1_target, batch.next_obs, next_action)
        q2 = self.q_value(self.critic_2_target, batch.next_obs, next_action)
        target = batch.reward + self.gamma * (1.0 - batch.done) * np.minimum(q1, q2)
        return _check_finite("Critic target", target)

    def cost_target(self, batch: Batch) -> np.ndarray:
        """c + gamma_c (1 - d) Q_c'(s', pi'(s'))."""
        next_action = forward(self.actor_target, batch.next_obs)
        qc = self.q_value(self.cost_critic_target, batch.next_obs, next_action)
        target = batch.cost + self.gamma_c * (1.0 - batch.done) * qc
        return _check_finite("Cost target", target)

    def risk_target(self, batch: Batch, next_action: Optional[np.ndarray] = None) -> np.ndarray:
        """c + (1 - c) gamma_c (1 - d) Q_risk'(s', a'); exactly 1 where c = 1.

        ``a'`` defaults to pi'(s').
        """
        if self.risk_critic_target is None:
            raise RuntimeError("This agent core has no risk critic")
        if next_action is None:
            next_action = forward(self.actor_target, batch.next_obs)
        q_risk = self.q_value(self.risk_critic_target, batch.next_obs, next_action)
        target = batch.cost + (1.0 - batch.cost) * self.gamma_c * (1.0 - batch.done) * q_risk
        return _check_finite("Risk target", target)

    def _regress(
        self, params: NetParams, inputs: np.ndarray, targets: np.ndarray, lr: float
    ) -> Tuple[NetParams, float]:
        """One Adam step on the mean-squared error between params(inputs) and targets."""
        error = forward(params, inputs)[:, 0] - targets
        loss = float(np.mean(error * error))
        if not np.isfinite(loss):
            raise NonFiniteError("Regression loss is not finite")
        grad = backward(params, inputs, (2.0 * error / error.shape[0])[:, None])
        return adam_step(params, grad, lr), loss

    def update_critics(self, batch: Batch, rng: np.random.Generator) -> float:
        """Regress both reward critics on the shared twin-min target; returns the summed loss."""
        target = self.critic_target(batch, rng)
        inputs = self.state_action(batch.obs, batch.action)
        self.critic_1, loss_1 = self._regress(self.critic_1, inputs, target, self.config.critic_lr)
        self.critic_2, loss_2 = self._regress(self.critic_2, inputs, target, self.config.critic_lr)
        return loss_1 + loss_2

    def update_cost_critic(self, batch: Batch) -> float:
        target = self.cost_target(batch)
        inputs = self.state_action(batch.obs, batch.action)
        self.cost_critic, loss = self._regress(
            self.cost_critic, inputs, target, self.config.safe_critic_lr
        )
        return loss

    def update_risk_critic(self, batch: Batch, next_action: Optional[np.ndarray] = None) -> float:
        if self.risk_critic is None:
            raise RuntimeError("This agent core has no risk critic")
        target = self.risk_target(batch, next_action)
        inputs = self.state_action(batch.obs, batch.action)
        self.risk_critic, loss = self._regress(
            self.risk_critic, inputs, target, self.config.safe_critic_lr
        )
        return loss

    def critic_action_gradient(
        self, critic: NetParams, obs: np.ndarray, action: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Critic values at (s, a) and their gradient with respect to a, row by row."""
        inputs = self.state_action(obs, action)
        values = forward(critic, inputs)[:, 0]
        seed = np.ones((inputs.shape[0], 1))
        return values, backward(critic, inputs, seed).input_grad[:, self.obs_dim:]

    def actor_objective(
        self, actor: NetParams, obs: np.ndarray, penalty: Penalty = no_penalty
    ) -> Tuple[float, np.ndarray, np.ndarray, Gradient]:
        """Loss mean(-Q1(s, pi(s)) + penalty(Q_c(s, pi(s)))) and its actor gradient.

        The critics are frozen; only ``actor`` receives a gradient.

        Returns:
            ``(loss, q, qc, gradient)`` where ``q`` and ``qc`` are evaluated at pi(s)
        """
        n = obs.shape[0]
        action = forward(actor, obs)
        q, dq_da = self.critic_action_gradient(self.critic_1, obs, action)
        qc, dqc_da = self.critic_action_gradient(self.cost_critic, obs, action)

        penalty_value, penalty_slope = penalty(qc)
        loss = float(np.mean(-q + penalty_value))
        upstream = (-dq_da + penalty_slope[:, None] * dqc_da) / n
        return loss, q, qc, backward(actor, obs, upstream)

    def step_actor(self, obs: np.ndarray, penalty: Penalty = no_penalty) -> float:
        """One Adam step on the (optionally penalized) actor loss; returns the loss."""
        loss, _, _, grad = self.actor_objective(self.actor, obs, penalty)
        self.actor = adam_step(self.actor, grad, self.config.actor_lr)
        return loss

    def update_actor_unconstrained(self, batch: Batch) -> Optional[float]:
        """TD3 actor step on mean(-Q1(s, pi(s))) followed by target averaging.

        Nothing changes off the policy-delay schedule; the return value is then None.
        """
        if not self.policy_due():
            return None
        loss = self.step_actor(batch.obs)
        self.soft_update_targets()
        return loss

    def policy_due(self) -> bool:
        return self.updates % self.policy_delay == 0

    def soft_update_targets(self) -> None:
        self.actor_target = soft_update(self.actor_target, self.actor, self.tau)
        self.critic_1_target = soft_update(self.critic_1_target, self.critic_1, self.tau)
        self.critic_2_target = soft_update(self.critic_2_target, self.critic_2, self.tau)
        self.cost_critic_target = soft_update(self.cost_critic_target, self.cost_critic, self.tau)
        if self.risk_critic is not None and self.risk_critic_target is not None:
            self.risk_critic_target = soft_update(
                self.risk_critic_target, self.risk_critic, self.tau
            )


@dataclass(frozen=True)
class ActionChoice:
    """Executed action plus the task and recovery proposals stored with it."""

    executed: np.ndarray
    task: np.ndarray
    risk: np.ndarray


@dataclass
class StepInfo:
    reward: float
    cost: int
    done: bool
    losses: Dict[str, float] = field(default_factory=dict)


class OffPolicyAgent:
    """Unconstrained TD3 agent and base class of the safe algorithms.

    Subclasses override ``act``/``policy`` to change how actions are chosen,
    ``update_auxiliary`` to train extra models every step, ``actor_penalty``
    or ``update_policy`` to change the actor objective, and
    ``update_multipliers`` for dual variables.
    """

    name = "td3"
    uses_risk_critic = False

    def __init__(
        self, config: HyperConfig, obs_dim: int, act_dim: int, rng: np.random.Generator
    ) -> None:
        self.config = config
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.core = AgentCore(obs_dim, act_dim, config, rng, risk_critic=self.uses_risk_critic)

    def exploration_action(self, obs: np.ndarray, step: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform random during the first ``start_steps``, then pi(s) + noise."""
        if step < self.config.start_steps:
            return rng.uniform(-1.0, 1.0, size=self.act_dim)
        return self.core.select_action(obs, explore=True, rng=rng)

    def act(
        self, obs: np.ndarray, cost_prev: int, step: int, rng: np.random.Generator
    ) -> ActionChoice:
        action = self.exploration_action(obs, step, rng)
        return ActionChoice(executed=action, task=action, risk=action)

    def policy(self, obs: np.ndarray, cost_prev: int, step: int) -> np.ndarray:
        """Deterministic action used for evaluation."""
        return self.core.select_action(obs, explore=False)

    def actor_penalty(self, obs: np.ndarray) -> Penalty:
        return no_penalty

    def update_auxiliary(self, batch: Batch) -> Dict[str, float]:
        return {}

    def update_policy(self, batch: Batch) -> Dict[str, float]:
        return {"actor": self.core.step_actor(batch.obs, self.actor_penalty(batch.obs))}

    def update_multipliers(self, batch: Batch) -> Dict[str, float]:
        return {}

    def update(self, batch: Batch, rng: np.random.Generator) -> Dict[str, float]:
        """One training update: cost critic, reward critics, extras, delayed actor.

        Returns:
            Losses keyed by component name
        """
        losses = {"cost_critic": self.core.update_cost_critic(batch)}
        losses["critic"] = self.core.update_critics(batch, rng)
        losses.update(self.update_auxiliary(batch))
        self.core.updates += 1
        losses.update(self.delayed_update(batch))
        losses.update(self.update_multipliers(batch))
        return losses

    def delayed_update(self, batch: Batch) -> Dict[str, float]:
        """Actor step(s) and target averaging, on the policy-delay schedule only."""
        if not self.core.policy_due():
            return {}
        losses = self.update_policy(batch)
        self.core.soft_update_targets()
        return losses

    def diagnostics(self) -> Dict[str, float]:
        """Algorithm-specific counters and values for the run summary."""
        return {"updates": float(self.core.updates)}

    def invariant_breaches(self, rng: np.random.Generator) -> List[str]:
        """Descriptions of violated runtime invariants (empty when healthy)."""
        return []


class TD3Agent(OffPolicyAgent):
    """The unconstrained reference: TD3 with a cost critic trained for monitoring."""

    name = "td3"

    def delayed_update(self, batch: Batch) -> Dict[str, float]:
        loss = self.core.update_actor_unconstrained(batch)
        return {} if loss is None else {"actor": loss}


def train_step(
    agent: OffPolicyAgent,
    buffer: ReplayBuffer,
    rollout: Rollout,
    step: int,
    explore_rng: np.random.Generator,
    sample_rng: np.random.Generator,
) -> StepInfo:
    """Explore, apply, store, sample and update once.

    Updates start as soon as the buffer holds a full mini-batch.
    """
    choice = agent.act(rollout.obs, rollout.cost_prev, step, explore_rng)
    state, result = rollout.env.step(rollout.state, choice.executed)
    buffer.push(
        Transition(
            obs=rollout.obs,
            action=choice.executed,
            next_obs=result.next_obs,
            reward=result.reward,
            cost=result.cost,
            done=int(result.done),
            task_action=choice.task,
            risk_action=choice.risk,
            cost_prev=rollout.cost_prev,
        )
    )
    rollout.advance(state, result)

    losses: Dict[str, float] = {}
    if len(buffer) == agent.config.batch_size and agent.core.updates == 0:
        logger.debug(f"Replay buffer holds a full batch at step {step}; updates start")
    if len(buffer) >= agent.config.batch_size:
        batch = buffer.sample(agent.config.batch_size, sample_rng)
        losses = agent.update(batch, sample_rng)
    return StepInfo(reward=result.reward, cost=result.cost, done=result.done, losses=losses)
