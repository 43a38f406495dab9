"""Task-model family, routing policy and MC-dropout uncertainty."""

from .policy import PolicyNet, build_state, grid_side, policy_forward
from .suite import ModelSuite, build_suite, cost_vector
from .uncertainty import EntropyMap, McPrediction, mc_entropy, predictive_entropy
from .unet import UNet, UNetSpec, predict

__all__ = [
    "EntropyMap",
    "McPrediction",
    "ModelSuite",
    "PolicyNet",
    "UNet",
    "UNetSpec",
    "build_state",
    "build_suite",
    "cost_vector",
    "grid_side",
    "mc_entropy",
    "policy_forward",
    "predict",
    "predictive_entropy",
]
