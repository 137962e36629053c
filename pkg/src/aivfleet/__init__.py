"""Agent-based simulation of an autonomous baggage-vehicle fleet with fuzzy task allocation."""

from .allocation import SCENARIOS, Strategy, strategy_for
from .config import SimConfig, burst_profile, load_config
from .metrics import EventLog, Metrics, compute_metrics
from .simulation import Simulation, run

__all__ = [
    "SCENARIOS",
    "Strategy",
    "strategy_for",
    "SimConfig",
    "burst_profile",
    "load_config",
    "EventLog",
    "Metrics",
    "compute_metrics",
    "Simulation",
    "run",
]
__version__ = "0.1.0"
