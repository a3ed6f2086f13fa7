"""Speed-limited driving task on a kinematic bicycle model.

The car is rewarded for forward progress along +x, lightly penalized for
lateral offset, and receives a cost of exactly 1 on every step whose resulting
speed exceeds the speed limit. Episodes only end at the time limit.

The environment is functional: ``reset`` and ``step`` take and return an
immutable ``EnvState``, so one ``SpeedLimitEnv`` can serve any number of
independent trajectories.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

OBS_DIM = 4
ACT_DIM = 2


class EnvError(Exception):
    """Base exception for environment errors."""

    pass


class InvalidActionError(EnvError):
    """Raised when an action is malformed or non-finite."""

    pass


class EpisodeFinishedError(EnvError):
    """Raised when stepping a state that already reached the horizon."""

    pass


@dataclass(frozen=True)
class EnvConfig:
    """Physical and task constants of the speed-limit task."""

    dt: float = 0.05
    max_accel: float = 2.0
    max_speed: float = 3.0
    wheelbase: float = 0.3
    max_steer: float = 0.5
    horizon: int = 500
    speed_limit: float = 1.5
    lateral_penalty: float = 0.1
    initial_offset: float = 0.1


@dataclass(frozen=True)
class EnvState:
    """Kinematic car state: position [m], speed [m/s], yaw [rad], step count."""

    x: float
    y: float
    v: float
    psi: float
    step_index: int = 0


@dataclass(frozen=True)
class StepResult:
    next_obs: np.ndarray
    reward: float
    cost: int
    done: bool


class SpeedLimitEnv:
    """Kinematic car that must stay below the speed limit while driving forward."""

    obs_dim = OBS_DIM
    act_dim = ACT_DIM

    def __init__(self, config: Optional[EnvConfig] = None) -> None:
        self.config = config or EnvConfig()

    def horizon(self) -> int:
        return self.config.horizon

    @staticmethod
    def observe(state: EnvState) -> np.ndarray:
        """Observation ``[y, v, sin psi, cos psi]``; x is left out (translation invariant)."""
        return np.array(
            [state.y, state.v, math.sin(state.psi), math.cos(state.psi)], dtype=np.float64
        )

    def reset(self, seed: int) -> Tuple[EnvState, np.ndarray]:
        """Start an episode at rest with a small seeded lateral offset."""
        rng = np.random.default_rng(seed)
        offset = self.config.initial_offset
        y = float(rng.uniform(-offset, offset)) if offset > 0 else 0.0
        state = EnvState(x=0.0, y=y, v=0.0, psi=0.0, step_index=0)
        return state, self.observe(state)

    def step(self, state: EnvState, action: np.ndarray) -> Tuple[EnvState, StepResult]:
        """Advance one time step.

        Args:
            state: Current state (must not be at the horizon yet)
            action: ``(throttle, steering)``, each clipped to [-1, 1]

        Returns:
            The next state and the step result

        Raises:
            InvalidActionError: If the action is not two finite numbers
            EpisodeFinishedError: If ``state`` is already terminal
        """
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (ACT_DIM,):
            raise InvalidActionError(f"Action must have shape ({ACT_DIM},), got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidActionError(f"Action contains non-finite values: {a}")
        if state.step_index >= self.config.horizon:
            raise EpisodeFinishedError(
                f"Episode already finished at step {state.step_index}; call reset()"
            )

        cfg = self.config
        throttle, steering = np.clip(a, -1.0, 1.0)
        v_next = min(max(state.v + cfg.max_accel * float(throttle) * cfg.dt, 0.0), cfg.max_speed)
        psi_next = state.psi + (state.v / cfg.wheelbase) * math.tan(
            cfg.max_steer * float(steering)
        ) * cfg.dt
        x_next = state.x + state.v * math.cos(state.psi) * cfg.dt
        y_next = state.y + state.v * math.sin(state.psi) * cfg.dt

        next_state = EnvState(
            x=x_next, y=y_next, v=v_next, psi=psi_next, step_index=state.step_index + 1
        )
        reward = (x_next - state.x) - cfg.lateral_penalty * abs(y_next)
        # strict inequality: exactly at the limit is safe
        cost = 1 if v_next > cfg.speed_limit else 0
        done = next_state.step_index == cfg.horizon
        return next_state, StepResult(
            next_obs=self.observe(next_state), reward=reward, cost=cost, done=done
        )


class Rollout:
    """Episode bookkeeping for a training loop.

    Tracks the live state, the previous step's cost (needed by the safety
    layer) and running episode totals, and resets with a fresh seed drawn
    from ``seed_rng`` whenever an episode ends.
    """

    def __init__(self, env: SpeedLimitEnv, seed_rng: np.random.Generator) -> None:
        self.env = env
        self.seed_rng = seed_rng
        self.episodes = 0
        self.state, self.obs = env.reset(self._next_seed())
        self.cost_prev = 0
        self.episode_reward = 0.0
        self.episode_cost = 0

    def _next_seed(self) -> int:
        return int(self.seed_rng.integers(0, 2**31 - 1))

    def advance(self, state: EnvState, result: StepResult) -> None:
        """Move to ``state`` after ``result``; resets when the episode is done."""
        self.episode_reward += result.reward
        self.episode_cost += result.cost
        if result.done:
            self.episodes += 1
            self.state, self.obs = self.env.reset(self._next_seed())
            self.cost_prev = 0
            self.episode_reward = 0.0
            self.episode_cost = 0
        else:
            self.state = state
            self.obs = result.next_obs
            self.cost_prev = result.cost
