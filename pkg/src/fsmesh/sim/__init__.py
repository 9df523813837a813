"""Discrete-event simulation of fsmesh networks."""

from .config import ConfigError, ConvergingMovement, SimConfig, StaticMovement, TraceMovement, load_config
from .engine import MetricsTimeline, RunSummary, Simulator, aggregate, run, run_once

__all__ = [
    "ConfigError", "ConvergingMovement", "MetricsTimeline", "RunSummary", "SimConfig", "Simulator",
    "StaticMovement", "TraceMovement", "aggregate", "load_config", "run", "run_once",
]
