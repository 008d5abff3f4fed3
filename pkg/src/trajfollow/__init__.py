"""Translate abstract plans into executable behaviour with trajectory-following RL."""
from .core import BOXPUSHER_DISSIMILARITY, COUCH_DISSIMILARITY, Dissimilarity, StateMap
from .exceptions import ConfigurationError, PlanningError, UnsupportedOperationError
from .reward import MatchTracker, RewardParams, combined_reward, r_dist, step_reward

__version__ = "0.1.0"

__all__ = [
    "BOXPUSHER_DISSIMILARITY", "COUCH_DISSIMILARITY", "ConfigurationError", "Dissimilarity",
    "MatchTracker", "PlanningError", "RewardParams", "StateMap", "UnsupportedOperationError",
    "combined_reward", "r_dist", "step_reward",
]
