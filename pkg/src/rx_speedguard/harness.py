"""Experiment driver: seeding, training loop, evaluation, CSV output and sweeps."""

import csv
import logging
import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Type, Union

import numpy as np
from scipy.stats import norm

from .backbone import OffPolicyAgent, TD3Agent, train_step
from .buffer import ReplayBuffer, ReplayBufferError
from .config import FIELD_NAMES, HyperConfig, UnknownKeyError, defaults, format_value
from .env import EnvError, Rollout, SpeedLimitEnv
from .epo import EPOAgent
from .fac import FACAgent
from .lagrangian import LagrangianAgent
from .nn import NetParams, NetworkError, forward
from .recovery import RecoveryAgent
from .safety_layer import SafetyLayerAgent

logger = logging.getLogger(__name__)

CSV_HEADER = ("step", "eval_ep_reward", "eval_ep_cost", "train_cost_rate", "wall_seconds")

AGENTS: Dict[str, Type[OffPolicyAgent]] = {
    "td3": TD3Agent,
    "safety_layer": SafetyLayerAgent,
    "recovery": RecoveryAgent,
    "lagrangian": LagrangianAgent,
    "fac": FACAgent,
    "epo": EPOAgent,
}

# Order of the independent sub-streams spawned from the root seed.
STREAMS = ("init", "env", "explore", "sample", "eval")

# Number of trailing evaluation points averaged in run summaries.
FINAL_WINDOW = 5

Policy = Callable[[np.ndarray, int], np.ndarray]


class ExperimentError(Exception):
    """Raised when a component fails during a run; carries the step index."""

    def __init__(self, step: int, message: str) -> None:
        super().__init__(f"step {step}: {message}")
        self.step = step


class InvariantViolationError(ExperimentError):
    """Raised when a runtime invariant (cost rate, multiplier sign) is breached."""

    pass


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    eval_ep_reward: float
    eval_ep_cost: float
    train_cost_rate: float
    wall_seconds: float

    def as_row(self) -> List[str]:
        return [
            str(self.step),
            repr(float(self.eval_ep_reward)),
            repr(float(self.eval_ep_cost)),
            repr(float(self.train_cost_rate)),
            repr(float(self.wall_seconds)),
        ]


@dataclass
class SeedStreams:
    """Independent generators derived from one root seed."""

    seed: int
    init: np.random.Generator
    env: np.random.Generator
    explore: np.random.Generator
    sample: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "SeedStreams":
        children = np.random.SeedSequence(seed).spawn(len(STREAMS))
        gens = {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}
        return cls(
            seed=seed,
            init=gens["init"],
            env=gens["env"],
            explore=gens["explore"],
            sample=gens["sample"],
        )

    def eval_seed(self, step: int) -> int:
        """Seed of the evaluation point at ``step``; never touches the training streams."""
        eval_index = STREAMS.index("eval")
        return int(np.random.SeedSequence([self.seed, eval_index, step]).generate_state(1)[0])


def make_agent(cfg: HyperConfig, obs_dim: int, act_dim: int, rng: np.random.Generator) -> OffPolicyAgent:
    return AGENTS[cfg.algorithm](cfg, obs_dim, act_dim, rng)


def cost_rate(cum_cost: int, cum_steps: int) -> float:
    """Fraction of training steps that incurred a cost."""
    if cum_steps < 1:
        raise ValueError(f"cum_steps must be >= 1, got {cum_steps}")
    return cum_cost / cum_steps


def actor_policy(actor: NetParams) -> Policy:
    """Deterministic policy that ignores the previous cost."""

    def policy(obs: np.ndarray, cost_prev: int) -> np.ndarray:
        return np.clip(forward(actor, obs), -1.0, 1.0)

    return policy


def evaluate(policy: Policy, env: SpeedLimitEnv, n_episodes: int, seed: int) -> Tuple[float, float]:
    """Run ``n_episodes`` deterministic episodes from freshly seeded resets.

    Returns:
        Mean undiscounted episode reward and mean episode cost
    """
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    episode_seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, size=n_episodes)

    rewards, costs = [], []
    for episode_seed in episode_seeds:
        state, obs = env.reset(int(episode_seed))
        cost_prev = 0
        total_reward, total_cost = 0.0, 0
        done = False
        while not done:
            state, result = env.step(state, policy(obs, cost_prev))
            total_reward += result.reward
            total_cost += result.cost
            obs, cost_prev, done = result.next_obs, result.cost, result.done
        rewards.append(total_reward)
        costs.append(total_cost)
    return float(np.mean(rewards)), float(np.mean(costs))


class Experiment:
    """One training run of one algorithm under one configuration.

    Args:
        cfg: Validated configuration
    """

    def __init__(self, cfg: HyperConfig) -> None:
        cfg.validate()
        self.cfg = cfg
        self.streams = SeedStreams.from_seed(cfg.seed)
        self.env = SpeedLimitEnv(cfg.env_config())
        self.agent = make_agent(cfg, self.env.obs_dim, self.env.act_dim, self.streams.init)
        self.buffer = ReplayBuffer(
            min(cfg.buffer_capacity, cfg.total_steps), self.env.obs_dim, self.env.act_dim
        )
        self.rollout = Rollout(self.env, self.streams.env)
        self.records: List[MetricsRecord] = []
        self.cum_cost = 0
        self.elapsed = 0.0

    def _evaluation_point(self, step: int, started: float) -> MetricsRecord:
        seed = self.streams.eval_seed(step)
        agent = self.agent
        reward, cost = evaluate(
            lambda obs, cost_prev: agent.policy(obs, cost_prev, step),
            self.env,
            self.cfg.eval_episodes,
            seed,
        )
        rate = cost_rate(self.cum_cost, step) if step > 0 else 0.0
        if not 0.0 <= rate <= 1.0:
            raise InvariantViolationError(step, f"training cost rate {rate} outside [0, 1]")
        if not 0.0 <= cost <= self.env.horizon():
            raise InvariantViolationError(step, f"evaluation cost {cost} outside [0, horizon]")
        breaches = agent.invariant_breaches(np.random.default_rng(seed))
        if breaches:
            raise InvariantViolationError(step, "; ".join(breaches))

        wall = time.perf_counter() - started if self.cfg.record_wall_time else 0.0
        logger.info(
            f"[{self.cfg.algorithm} seed={self.cfg.seed}] step {step}: "
            f"reward {reward:.2f}  cost {cost:.2f}  cost rate {rate:.3f}"
        )
        return MetricsRecord(step, reward, cost, rate, wall)

    def run(self) -> List[MetricsRecord]:
        """Train for ``total_steps`` steps, evaluating at step 0 and every ``eval_interval``.

        Raises:
            ExperimentError: If any component fails; the message names the step
        """
        started = time.perf_counter()
        cfg = self.cfg
        self.records = [self._evaluation_point(0, started)]
        for step in range(cfg.total_steps):
            try:
                info = train_step(
                    self.agent,
                    self.buffer,
                    self.rollout,
                    step,
                    self.streams.explore,
                    self.streams.sample,
                )
            except (NetworkError, EnvError, ReplayBufferError, ValueError) as e:
                raise ExperimentError(step, f"{type(e).__name__}: {e}") from e
            self.cum_cost += info.cost
            done_steps = step + 1
            if done_steps % cfg.eval_interval == 0:
                self.records.append(self._evaluation_point(done_steps, started))
        self.elapsed = time.perf_counter() - started
        return self.records

    def diagnostics(self) -> Dict[str, float]:
        info = self.agent.diagnostics()
        info["episodes"] = float(self.rollout.episodes)
        info["elapsed_seconds"] = self.elapsed
        return info


def run_experiment(cfg: HyperConfig) -> List[MetricsRecord]:
    return Experiment(cfg).run()


def write_csv(records: Sequence[MetricsRecord], path: Union[str, Path]) -> Path:
    output = Path(path)
    output.parent.mkdir(parents=True, exist_ok=True)
    with open(output, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for record in records:
            writer.writerow(record.as_row())
    return output


def read_csv(path: Union[str, Path]) -> List[MetricsRecord]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            MetricsRecord(
                step=int(row["step"]),
                eval_ep_reward=float(row["eval_ep_reward"]),
                eval_ep_cost=float(row["eval_ep_cost"]),
                train_cost_rate=float(row["train_cost_rate"]),
                wall_seconds=float(row["wall_seconds"]),
            )
            for row in reader
        ]


def _slug(value: str) -> str:
    return re.sub(r"[^A-Za-z0-9.+-]+", "_", value).strip("_")


def run_name(cfg: HyperConfig, key: Optional[str] = None) -> str:
    if key is None or key == "seed":
        return f"{cfg.algorithm}_seed{cfg.seed}"
    return f"{cfg.algorithm}_{key}-{_slug(format_value(getattr(cfg, key)))}_seed{cfg.seed}"


def _train_to_csv(job: Tuple[HyperConfig, str]) -> Tuple[Path, Dict[str, float]]:
    cfg, path = job
    experiment = Experiment(cfg)
    experiment.run()
    return write_csv(experiment.records, path), experiment.diagnostics()


def train(cfg: HyperConfig, out_dir: Union[str, Path]) -> Tuple[Path, Dict[str, float]]:
    """Run one experiment and write ``<algorithm>_seed<seed>.csv`` under ``out_dir``."""
    return _train_to_csv((cfg, str(Path(out_dir) / f"{run_name(cfg)}.csv")))


def run_many(
    configs: Sequence[HyperConfig], paths: Sequence[Path], jobs: int = 1
) -> List[Tuple[Path, Dict[str, float]]]:
    """Run independent experiments, in worker processes when ``jobs`` > 1."""
    work = [(cfg, str(path)) for cfg, path in zip(configs, paths)]
    if jobs <= 1 or len(work) <= 1:
        return [_train_to_csv(job) for job in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_train_to_csv, work))


def sweep(
    base: HyperConfig,
    key: str,
    values: Sequence[str],
    out_dir: Union[str, Path],
    jobs: int = 1,
) -> List[Path]:
    """Run one experiment per value of ``key`` and write one suffixed CSV each.

    The seed is shared across runs unless ``key`` is ``seed`` itself.

    Raises:
        UnknownKeyError: If ``key`` is not a config key
    """
    if key not in FIELD_NAMES:
        raise UnknownKeyError(f"Unknown config key '{key}'")
    if not values:
        raise ValueError("A sweep needs at least one value")
    configs = [base.replace(**{key: value}) for value in values]
    paths = [Path(out_dir) / f"{run_name(cfg, key)}.csv" for cfg in configs]
    return [path for path, _ in run_many(configs, paths, jobs)]


def benchmark(
    base: HyperConfig,
    algorithms: Sequence[str],
    seeds: Sequence[int],
    out_dir: Union[str, Path],
    jobs: int = 1,
) -> List[Path]:
    """Run every algorithm under every seed with otherwise shared settings.

    An uncustomized cost limit follows each algorithm's own default (the
    safety layer's limit is instantaneous, the others bound Q_c).
    """
    custom_limit = base.cost_limit != defaults(base.algorithm).cost_limit
    configs = []
    for algorithm in algorithms:
        limit = base.cost_limit if custom_limit else defaults(algorithm).cost_limit
        for seed in seeds:
            configs.append(base.replace(algorithm=algorithm, seed=seed, cost_limit=limit))
    paths = [Path(out_dir) / f"{run_name(cfg)}.csv" for cfg in configs]
    return [path for path, _ in run_many(configs, paths, jobs)]


@dataclass(frozen=True)
class SummaryRow:
    """Final-window means over runs with a normal 95% confidence half-width."""

    name: str
    runs: int
    reward: Tuple[float, float]
    cost: Tuple[float, float]
    cost_rate: Tuple[float, float]


def mean_confidence(values: Sequence[float], confidence: float = 0.95) -> Tuple[float, float]:
    """Mean and normal-approximation confidence half-width (0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(np.mean(arr))
    if arr.size < 2:
        return mean, 0.0
    z = float(norm.ppf(0.5 + confidence / 2.0))
    return mean, z * float(np.std(arr, ddof=1)) / math.sqrt(arr.size)


def final_window(records: Sequence[MetricsRecord], window: int = FINAL_WINDOW) -> Tuple[float, float, float]:
    """Mean reward, cost and cost rate over the last ``window`` records."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    tail = list(records)[-window:]
    return (
        float(np.mean([r.eval_ep_reward for r in tail])),
        float(np.mean([r.eval_ep_cost for r in tail])),
        float(np.mean([r.train_cost_rate for r in tail])),
    )


def summarize(paths: Sequence[Union[str, Path]], window: int = FINAL_WINDOW) -> List[SummaryRow]:
    """Group run CSVs by name (seed suffix removed) and summarize each group."""
    groups: Dict[str, List[Tuple[float, float, float]]] = {}
    for path in sorted(Path(p) for p in paths):
        name = re.sub(r"_seed-?\d+$", "", path.stem)
        groups.setdefault(name, []).append(final_window(read_csv(path), window))
    rows = []
    for name, finals in groups.items():
        rewards, costs, rates = zip(*finals)
        rows.append(
            SummaryRow(
                name=name,
                runs=len(finals),
                reward=mean_confidence(rewards),
                cost=mean_confidence(costs),
                cost_rate=mean_confidence(rates),
            )
        )
    return rows


def format_summary(rows: Sequence[SummaryRow]) -> str:
    lines = [
        f"{'run':<36} {'n':>3} {'Ep-Reward':>22} {'Ep-Cost':>20} {'CostRate':>18}",
        "-" * 103,
    ]
    for row in rows:
        lines.append(
            f"{row.name:<36} {row.runs:>3} "
            f"{row.reward[0]:>12.2f} ± {row.reward[1]:<7.2f} "
            f"{row.cost[0]:>10.2f} ± {row.cost[1]:<7.2f} "
            f"{row.cost_rate[0]:>8.3f} ± {row.cost_rate[1]:<7.3f}"
        )
    return "\n".join(lines) + "\n"


def write_summary(rows: Sequence[SummaryRow], path: Union[str, Path]) -> Path:
    output = Path(path)
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_text(format_summary(rows), encoding="utf-8")
    return output


def print_run_report(cfg: HyperConfig, path: Path, diagnostics: Dict[str, float]) -> None:
    """Print the end-of-run banner."""
    print("=" * 50)
    print(f"RUN COMPLETE: {cfg.algorithm} (seed {cfg.seed})")
    print("=" * 50)
    records = read_csv(path)
    reward, cost, rate = final_window(records)
    print(f"✓ {len(records)} evaluation points written to {path}")
    print(f"✓ Final window: reward {reward:.2f}, cost {cost:.2f}, cost rate {rate:.3f}")
    print(f"✓ Elapsed: {diagnostics.get('elapsed_seconds', 0.0):.1f}s")
    extras = {k: v for k, v in diagnostics.items() if k != "elapsed_seconds"}
    for key in sorted(extras):
        print(f"  {key}: {format_value(extras[key])}")
