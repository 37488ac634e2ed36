"""Station-keeping of a superpressure balloon with first-order model predictive control."""
from .dynamics import BalloonParams, BalloonState, FidelityLevel
from .fompc import ControlPlan, FompcConfig, FompcController
from .harness import AgentSpec, EpisodeConfig, run_benchmark, run_episode
from .windsim import NoiseField, SyntheticWindField, WindModelKind

__version__ = "0.1.0"

__all__ = [
    "AgentSpec", "BalloonParams", "BalloonState", "ControlPlan", "EpisodeConfig", "FidelityLevel",
    "FompcConfig", "FompcController", "NoiseField", "SyntheticWindField", "WindModelKind",
    "run_benchmark", "run_episode",
]
