"""Core-periphery banking network under an asset-price bubble: finite and
partial mean-field simulators plus burst-risk estimation."""

from .bubble import BubbleParams, BubblePath, BurstPolicy
from .finite_net import NetworkState, PathHistory, simulate_finite
from .meanfield import MeanFieldPath, OUSpec, PhiTable, ou_moments, phi, simulate_meanfield
from .params import FitnessFn, NetworkParams, eval_F, eval_fitness, estimate_lipschitz, validate_params
from .risk import LossSample, RiskReport, relative_shock, risk_alpha, run_scenario

__version__ = "0.1.0"

__all__ = [
    "BubbleParams",
    "BubblePath",
    "BurstPolicy",
    "FitnessFn",
    "LossSample",
    "MeanFieldPath",
    "NetworkParams",
    "NetworkState",
    "OUSpec",
    "PathHistory",
    "PhiTable",
    "RiskReport",
    "estimate_lipschitz",
    "eval_F",
    "eval_fitness",
    "ou_moments",
    "phi",
    "relative_shock",
    "risk_alpha",
    "run_scenario",
    "simulate_finite",
    "simulate_meanfield",
    "validate_params",
]
