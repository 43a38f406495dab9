"""Comparison methods: the IDK cascade and the uniform random routing policy."""

from .idk import (
    CascadeConfig,
    CascadeResult,
    CascadeTrace,
    IouMatch,
    idk_infer,
    idk_loss,
    iou_match_tune,
    replay_cascade,
    threshold_grid,
    trace_cascade,
    tune_idk,
)
from .random_policy import random_policy_infer

__all__ = [
    "CascadeConfig",
    "CascadeResult",
    "CascadeTrace",
    "IouMatch",
    "idk_infer",
    "idk_loss",
    "iou_match_tune",
    "random_policy_infer",
    "replay_cascade",
    "threshold_grid",
    "trace_cascade",
    "tune_idk",
]
