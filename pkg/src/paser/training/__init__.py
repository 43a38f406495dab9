"""The staged training pipeline: pretraining, distillation, RL routing and fine-tuning."""

from .events import EventLog, TrainEvent, TrainHistory, detect_plateau, read_events
from .finetune import TvdResult, finetune, finetune_tvd
from .pretrain import kd_loss, pretrain_large, pretrain_small_kd, stitched_logits
from .reward import RewardBreakdown, batch_rewards, compute_reward
from .rl import (
    MovingBaseline,
    PatchOutcomeCache,
    Phase,
    ScheduleState,
    policy_gradient_step,
    reinforce_loss,
    sample_action,
    train_rl,
)

__all__ = [
    "EventLog",
    "MovingBaseline",
    "PatchOutcomeCache",
    "Phase",
    "RewardBreakdown",
    "ScheduleState",
    "TrainEvent",
    "TrainHistory",
    "TvdResult",
    "batch_rewards",
    "compute_reward",
    "detect_plateau",
    "finetune",
    "finetune_tvd",
    "kd_loss",
    "policy_gradient_step",
    "pretrain_large",
    "pretrain_small_kd",
    "read_events",
    "reinforce_loss",
    "sample_action",
    "stitched_logits",
    "train_rl",
]
