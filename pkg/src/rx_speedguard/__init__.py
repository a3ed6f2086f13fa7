"""RX Speedguard - Off-policy safe RL algorithms on a speed-limited driving task."""

__version__ = "0.1.0"
__author__ = "Aris Karatarakis"
__email__ = "aris@karatarakis.com"

from .config import HyperConfig, defaults, load_config
from .env import SpeedLimitEnv
from .harness import AGENTS, Experiment, run_experiment

__all__ = [
    "AGENTS",
    "Experiment",
    "HyperConfig",
    "SpeedLimitEnv",
    "defaults",
    "load_config",
    "run_experiment",
    "__version__",
]
