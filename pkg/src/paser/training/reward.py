"""Cost-aware per-image reward for a patch routing."""

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-patch accuracy gains and costs behind a reward total.

    ``total`` is accumulated left to right over patches in float64.
    """

    gains: np.ndarray
    costs: np.ndarray
    lam: float
    total: float

    @property
    def terms(self) -> np.ndarray:
        return (1.0 - self.lam) * self.gains - self.lam * self.costs


def compute_reward(
    action: np.ndarray, iou_table: np.ndarray, lam: float, costs: np.ndarray
) -> RewardBreakdown:
    """Sum over patches of (1 - lam) * (IoU of the routed model - IoU of f_0) - lam * C(routed).

    Args:
        action: Length-P model indices
        iou_table: ``(m+1) x P`` patch IoUs; row 0 is f_0, NaN where a model was not run
        lam: Cost weight in [0, 1]
        costs: Per-model cost vector of length m+1

    Raises:
        ValueError: If ``lam`` is out of range or a routed patch has no IoU
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"Cost weight lambda must be in [0, 1], got {lam}")
    action = np.asarray(action, dtype=np.intp)
    iou_table = np.asarray(iou_table, dtype=np.float64)
    costs = np.asarray(costs, dtype=np.float64)
    num_models, patches = iou_table.shape
    if action.shape != (patches,) or costs.shape != (num_models,):
        raise ShapeError(
            f"Action {action.shape}, IoU table {iou_table.shape} and costs {costs.shape} "
            "do not agree"
        )
    if action.size and (action.min() < 0 or action.max() >= num_models):
        raise ValueError(f"Actions must select one of {num_models} models")

    columns = np.arange(patches)
    routed = iou_table[action, columns]
    baseline = iou_table[0]
    if np.isnan(routed).any() or np.isnan(baseline).any():
        missing = columns[np.isnan(routed) | np.isnan(baseline)].tolist()
        raise ValueError(f"Missing IoU for routed patches {missing}")

    gains = routed - baseline
    patch_costs = costs[action]
    total = 0.0
    for p in range(patches):
        total += (1.0 - lam) * gains[p] - lam * patch_costs[p]
    return RewardBreakdown(gains, patch_costs, lam, float(total))


def batch_rewards(
    actions: np.ndarray, iou_tables: np.ndarray, lam: float, costs: np.ndarray
) -> np.ndarray:
    """Rewards of an ``N x P`` action batch against ``N x (m+1) x P`` IoU tables."""
    return np.array(
        [compute_reward(a, t, lam, costs).total for a, t in zip(actions, iou_tables, strict=True)]
    )
