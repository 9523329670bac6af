"""Slot-level simulator of a learning OFDMA MAC: random exploration,
a carrier-sensing distributed auction and fixed or exponential epochs."""

from ._accel import BACKEND
from .allocators import exhaustive_optimum, greedy_stable, hungarian, random_allocation
from .auction import AuctionState, resolve_contention, run_auction
from .channel import ChannelParams, Network, draw_network, qos_matrix
from .core import UNASSIGNED, ContractViolation, ProtocolParams, UtilityMatrix, welfare
from .engine import EpochSchedule, RunLog, SetupConfig, efficiency, run_exponential, run_fixed
from .exploration import EstimationState, run_exploration
from .harness import Config, ConfigError, aggregate_cdf, load_config, run_experiment

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "UNASSIGNED", "AuctionState", "ChannelParams", "Config", "ConfigError", "ContractViolation",
    "EpochSchedule", "EstimationState", "Network", "ProtocolParams", "RunLog", "SetupConfig", "UtilityMatrix",
    "aggregate_cdf", "draw_network", "efficiency", "exhaustive_optimum", "greedy_stable", "hungarian",
    "load_config", "qos_matrix", "random_allocation", "resolve_contention", "run_auction", "run_experiment",
    "run_exploration", "run_exponential", "run_fixed", "welfare",
]
