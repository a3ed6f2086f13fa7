"""Hyper-parameter configuration: defaults, key=value files and env overrides.

A config file is UTF-8 text with one ``key = value`` pair per line; ``#`` starts
a comment. Keys not present in the file keep the defaults of the selected
algorithm. Environment variables named ``RX_SPEEDGUARD_<KEY>`` override the
file, and explicit keyword overrides (the CLI flags) override both.
"""

import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Union

from .env import EnvConfig

logger = logging.getLogger(__name__)

ALGORITHMS = ("td3", "safety_layer", "recovery", "lagrangian", "fac", "epo")
DEFAULT_ALGORITHM = "epo"
ENV_PREFIX = "RX_SPEEDGUARD_"

# Fields that only some algorithms read; everything else is shared.
ALGORITHM_FIELDS: Dict[str, Tuple[str, ...]] = {
    "cost_limit": ("safety_layer", "recovery", "lagrangian", "fac", "epo"),
    "warmup_ratio": ("safety_layer", "recovery"),
    "safe_actor_lr": ("recovery",),
    "multiplier_lr": ("lagrangian", "fac"),
    "multiplier_init": ("lagrangian",),
    "multiplier_delay": ("fac",),
    "penalty_factor": ("epo",),
}


class ConfigError(Exception):
    """Base exception for configuration errors."""

    pass


class ConfigParseError(ConfigError):
    """Raised when a config file or value cannot be parsed."""

    pass


class UnknownKeyError(ConfigError):
    """Raised when a config key does not name a HyperConfig field."""

    pass


class InvalidValueError(ConfigError):
    """Raised when a value is outside its allowed range."""

    pass


def _help(text: str) -> Dict[str, str]:
    return {"help": text}


@dataclass(frozen=True)
class HyperConfig:
    """Every tunable of a training run."""

    algorithm: str = field(
        default=DEFAULT_ALGORITHM,
        metadata=_help("td3 | safety_layer | recovery | lagrangian | fac | epo"),
    )
    cost_limit: float = field(
        default=0.1,
        metadata=_help("Cost threshold (instantaneous for safety_layer, Q_c limit otherwise)"),
    )
    reward_discount: float = field(default=0.99, metadata=_help("Reward discount gamma"))
    cost_discount: float = field(default=0.99, metadata=_help("Cost discount gamma_c"))
    warmup_ratio: float = field(
        default=0.2,
        metadata=_help("Fraction of total_steps before safety machinery is applied"),
    )
    batch_size: int = field(default=256, metadata=_help("Mini-batch size"))
    critic_lr: float = field(default=3e-4, metadata=_help("Reward critic learning rate"))
    actor_lr: float = field(default=3e-4, metadata=_help("Actor learning rate"))
    safe_critic_lr: float = field(
        default=3e-4, metadata=_help("Cost / risk critic and cost model learning rate")
    )
    safe_actor_lr: float = field(default=3e-4, metadata=_help("Recovery actor learning rate"))
    multiplier_lr: float = field(
        default=1e-5, metadata=_help("Lagrange multiplier (or multiplier network) learning rate")
    )
    multiplier_init: float = field(default=0.0, metadata=_help("Initial scalar multiplier"))
    policy_delay: int = field(default=2, metadata=_help("Critic updates per actor update"))
    multiplier_delay: int = field(
        default=12, metadata=_help("Updates per multiplier-network update")
    )
    penalty_factor: float = field(default=5.0, metadata=_help("Exact penalty factor kappa"))
    total_steps: int = field(default=500_000, metadata=_help("Environment steps to train"))
    eval_interval: int = field(default=5_000, metadata=_help("Steps between evaluations"))
    eval_episodes: int = field(default=5, metadata=_help("Episodes per evaluation point"))
    seed: int = field(default=0, metadata=_help("Root seed for every random stream"))
    exploration_noise: float = field(default=0.1, metadata=_help("Exploration noise std sigma"))
    polyak_tau: float = field(default=0.005, metadata=_help("Target-network averaging rate"))
    target_noise: float = field(default=0.2, metadata=_help("Target policy smoothing std"))
    target_noise_clip: float = field(default=0.5, metadata=_help("Target policy smoothing clip"))
    start_steps: int = field(
        default=1_000, metadata=_help("Initial steps with uniform random actions")
    )
    buffer_capacity: int = field(default=1_000_000, metadata=_help("Replay buffer capacity"))
    hidden_sizes: Tuple[int, ...] = field(
        default=(256, 256), metadata=_help("Hidden layer widths of every network")
    )
    record_wall_time: bool = field(
        default=False,
        metadata=_help("Write elapsed seconds to the CSV (breaks byte-identical reruns)"),
    )
    env_dt: float = field(default=0.05, metadata=_help("Integration step [s]"))
    env_max_accel: float = field(default=2.0, metadata=_help("Maximum acceleration [m/s^2]"))
    env_max_speed: float = field(default=3.0, metadata=_help("Maximum speed [m/s]"))
    env_wheelbase: float = field(default=0.3, metadata=_help("Wheelbase [m]"))
    env_max_steer: float = field(default=0.5, metadata=_help("Maximum steering angle [rad]"))
    env_horizon: int = field(default=500, metadata=_help("Steps per episode"))
    env_speed_limit: float = field(default=1.5, metadata=_help("Speed above which cost is 1 [m/s]"))
    env_lateral_penalty: float = field(
        default=0.1, metadata=_help("Reward penalty per meter of lateral offset")
    )
    env_initial_offset: float = field(
        default=0.1, metadata=_help("Half-width of the initial lateral offset range [m]")
    )

    def validate(self) -> None:
        """Check every field against its allowed range.

        Raises:
            InvalidValueError: Naming the first offending field
        """
        if self.algorithm not in ALGORITHMS:
            raise InvalidValueError(
                f"algorithm must be one of {', '.join(ALGORITHMS)}, got '{self.algorithm}'"
            )
        for name in ("reward_discount", "cost_discount"):
            _check(name, getattr(self, name), 0.0 < getattr(self, name) < 1.0, "in (0, 1)")
        for name in (
            "critic_lr",
            "actor_lr",
            "safe_critic_lr",
            "safe_actor_lr",
            "multiplier_lr",
            "cost_limit",
            "polyak_tau",
            "env_dt",
            "env_max_accel",
            "env_max_speed",
            "env_wheelbase",
            "env_max_steer",
            "env_speed_limit",
        ):
            value = getattr(self, name)
            _check(name, value, math.isfinite(value) and value > 0.0, "> 0")
        _check("polyak_tau", self.polyak_tau, self.polyak_tau <= 1.0, "<= 1")
        _check("warmup_ratio", self.warmup_ratio, 0.0 <= self.warmup_ratio < 1.0, "in [0, 1)")
        for name in ("multiplier_init", "penalty_factor", "exploration_noise", "target_noise",
                     "target_noise_clip", "env_lateral_penalty", "env_initial_offset"):
            value = getattr(self, name)
            _check(name, value, math.isfinite(value) and value >= 0.0, ">= 0")
        for name in ("policy_delay", "multiplier_delay", "batch_size", "total_steps",
                     "eval_interval", "eval_episodes", "buffer_capacity", "env_horizon"):
            _check(name, getattr(self, name), getattr(self, name) >= 1, ">= 1")
        _check("start_steps", self.start_steps, self.start_steps >= 0, ">= 0")
        # a run whose buffer never holds one mini-batch would never update
        reachable = min(self.buffer_capacity, self.total_steps)
        _check(
            "batch_size",
            self.batch_size,
            self.batch_size <= reachable,
            f"<= min(buffer_capacity, total_steps) = {reachable}",
        )
        _check(
            "hidden_sizes",
            self.hidden_sizes,
            all(h >= 1 for h in self.hidden_sizes),
            "a list of positive widths",
        )

    @property
    def warmup_steps(self) -> int:
        """First step at which warm-up gated machinery is active (inclusive)."""
        return int(math.ceil(self.warmup_ratio * self.total_steps))

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            dt=self.env_dt,
            max_accel=self.env_max_accel,
            max_speed=self.env_max_speed,
            wheelbase=self.env_wheelbase,
            max_steer=self.env_max_steer,
            horizon=self.env_horizon,
            speed_limit=self.env_speed_limit,
            lateral_penalty=self.env_lateral_penalty,
            initial_offset=self.env_initial_offset,
        )

    def replace(self, **changes: Any) -> "HyperConfig":
        """Return a validated copy with ``changes`` applied (values may be strings)."""
        coerced = {name: coerce_value(name, value) for name, value in changes.items()}
        updated = dataclasses.replace(self, **coerced)
        updated.validate()
        return updated


FIELD_NAMES = tuple(f.name for f in dataclasses.fields(HyperConfig))
_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(HyperConfig)}


def _check(name: str, value: Any, ok: bool, expectation: str) -> None:
    if not ok:
        raise InvalidValueError(f"{name} must be {expectation}, got {value!r}")


def field_help(name: str) -> str:
    """One-line description of a config key."""
    for f in dataclasses.fields(HyperConfig):
        if f.name == name:
            return str(f.metadata.get("help", ""))
    raise UnknownKeyError(f"Unknown config key '{name}'")


def _parse_bool(name: str, text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigParseError(f"{name}: cannot parse '{text}' as a boolean")


def _parse_int(name: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError as e:
        raise ConfigParseError(f"{name}: cannot parse '{text}' as an integer") from e
    if not value.is_integer():
        raise ConfigParseError(f"{name}: '{text}' is not an integer")
    return int(value)


def coerce_value(name: str, value: Any) -> Any:
    """Convert ``value`` (string or already typed) to the type of field ``name``.

    Raises:
        UnknownKeyError: If ``name`` is not a config key
        ConfigParseError: If the value cannot be converted
    """
    if name not in _FIELD_TYPES:
        raise UnknownKeyError(f"Unknown config key '{name}'")
    kind = _FIELD_TYPES[name]

    if name == "hidden_sizes":
        if isinstance(value, str):
            parts = [p.strip() for p in value.replace("(", "").replace(")", "").split(",")]
            return tuple(_parse_int(name, p) for p in parts if p)
        return tuple(int(v) for v in value)

    if not isinstance(value, str):
        if kind is bool:
            return bool(value)
        if kind is int:
            return _parse_int(name, str(value))
        if kind is float:
            return float(value)
        return value

    text = value.strip()
    if kind is bool:
        return _parse_bool(name, text)
    if kind is int:
        return _parse_int(name, text)
    if kind is float:
        try:
            return float(text)
        except ValueError as e:
            raise ConfigParseError(f"{name}: cannot parse '{text}' as a number") from e
    return text


def defaults(algorithm: str = DEFAULT_ALGORITHM) -> HyperConfig:
    """Default configuration for one algorithm.

    The safety layer's cost limit is an instantaneous threshold (0.02); every
    other algorithm constrains the discounted cost value (0.1).
    """
    if algorithm not in ALGORITHMS:
        raise InvalidValueError(
            f"algorithm must be one of {', '.join(ALGORITHMS)}, got '{algorithm}'"
        )
    cfg = HyperConfig(algorithm=algorithm)
    if algorithm == "safety_layer":
        cfg = dataclasses.replace(cfg, cost_limit=0.02)
    cfg.validate()
    return cfg


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parse ``key = value`` lines into a raw string mapping.

    Raises:
        ConfigParseError: On malformed or duplicate lines
        UnknownKeyError: On keys that are not config fields
    """
    values: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        key, sep, value = content.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigParseError(f"{source}:{lineno}: expected 'key = value', got '{line.strip()}'")
        if key not in FIELD_NAMES:
            raise UnknownKeyError(f"{source}:{lineno}: unknown config key '{key}'")
        if key in values:
            raise ConfigParseError(f"{source}:{lineno}: duplicate key '{key}'")
        values[key] = value.strip()
    return values


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """Collect ``RX_SPEEDGUARD_<KEY>`` variables as raw config values."""
    source = os.environ if environ is None else environ
    values: Dict[str, str] = {}
    for name, value in source.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key not in FIELD_NAMES:
            raise UnknownKeyError(f"Environment variable {name} does not name a config key")
        values[key] = value
    return values


def load_config(
    path: Optional[Union[str, Path]] = None,
    environ: Optional[Mapping[str, str]] = None,
    **overrides: Any,
) -> HyperConfig:
    """Build a validated HyperConfig from file, environment and overrides.

    Args:
        path: Optional config file (``key = value`` lines)
        environ: Environment mapping (defaults to ``os.environ``)
        **overrides: Highest-precedence values; ``None`` entries are ignored

    Returns:
        Validated configuration

    Raises:
        ConfigError: If the file is missing or any value is unknown, malformed
            or out of range
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError as e:
            raise ConfigError(f"Config file not found: {path}") from e
        except UnicodeDecodeError as e:
            raise ConfigParseError(f"{path}: not valid UTF-8 ({e})") from e
        raw.update(parse_config_text(text, source=str(path)))
    raw.update(env_overrides(environ))
    for name, value in overrides.items():
        if value is None:
            continue
        if name not in FIELD_NAMES:
            raise UnknownKeyError(f"Unknown config key '{name}'")
        raw[name] = value

    algorithm = coerce_value("algorithm", raw.get("algorithm", DEFAULT_ALGORITHM))
    values = {name: coerce_value(name, value) for name, value in raw.items()}
    values["algorithm"] = algorithm
    cfg = dataclasses.replace(defaults(algorithm), **values)
    cfg.validate()
    _log_ignored_fields(cfg, raw.keys())
    return cfg


def _log_ignored_fields(cfg: HyperConfig, keys: Iterable[str]) -> None:
    for key in keys:
        users = ALGORITHM_FIELDS.get(key)
        if users is not None and cfg.algorithm not in users:
            logger.info(f"{key} is ignored by algorithm '{cfg.algorithm}'")


def format_value(value: Any) -> str:
    """Render a field value the way ``coerce_value`` reads it back."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(cfg: HyperConfig, with_help: bool = False) -> str:
    """Render every key of ``cfg`` as ``key = value`` lines in field order."""
    lines = []
    for f in dataclasses.fields(HyperConfig):
        if with_help:
            lines.append(f"# {f.metadata.get('help', '')}")
        lines.append(f"{f.name} = {format_value(getattr(cfg, f.name))}")
        if with_help:
            lines.append("")
    return "\n".join(lines) + "\n"


def save_config(cfg: HyperConfig, path: Union[str, Path]) -> Path:
    """Write ``cfg`` to ``path`` so that ``load_config(path)`` reproduces it."""
    path = Path(path)
    try:
        path.write_text(render_config(cfg), encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Error saving config: {e}") from e
    return path
