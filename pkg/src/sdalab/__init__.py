"""Traffic-analysis lab for mix networks: statistical disclosure attacks,
their cloak-user refinement, an SG-Mix extension and a Sybil defense."""

from .attacks import (
    DisclosureState,
    NoBackgroundRounds,
    NoTargetRounds,
    TargetEstimate,
    improved_sda,
    rank_partners,
    required_observations,
    standard_sda,
)
from .core import GroundTruth, RoundRecord, SystemConfig, build_true_vector, make_ground_truth, uniform_vector
from .roundsim import Trace, generate_round, generate_trace, iter_blocks, iter_rounds

__version__ = "0.1.0"

__all__ = [
    "DisclosureState", "GroundTruth", "NoBackgroundRounds", "NoTargetRounds", "RoundRecord", "SystemConfig",
    "TargetEstimate", "Trace", "build_true_vector", "generate_round", "generate_trace", "improved_sda",
    "iter_blocks", "iter_rounds", "make_ground_truth", "rank_partners", "required_observations", "standard_sda",
    "uniform_vector",
]
