"""REINFORCE training of the patch-routing policy."""

import logging
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from ..config import RlConfig
from ..data import SegSample, split_patches, stack_images, stack_labels
from ..errors import MissingStageError, NonFiniteError, TrainingDivergedError
from ..metrics import patch_ious
from ..models import ModelSuite, PolicyNet, predict
from ..models.policy import logits_to_patches
from ..pipeline import observe
from ..tensorkit import AdamState, Mode, RngStream, Tensor, ops, step_graph
from ..tensorkit.ops import softmax_array
from .events import EventLog, PlateauTracker, TrainEvent, TrainHistory
from .reward import batch_rewards

logger = logging.getLogger(__name__)


class Phase(StrEnum):
    RL_PRETRAIN = "rl-pretrain"
    FINETUNE = "finetune"


ALPHA_RANGES = {Phase.RL_PRETRAIN: (0.7, 0.95), Phase.FINETUNE: (0.95, 1.0)}


@dataclass(frozen=True)
class ScheduleState:
    """Exploit probability ``alpha`` at one epoch of a training phase."""

    alpha: float
    epoch: int
    phase: Phase

    @classmethod
    def at(
        cls,
        phase: Phase,
        epoch: int,
        epochs: int,
        start: float | None = None,
        end: float | None = None,
    ) -> "ScheduleState":
        """Linear ramp from ``start`` at epoch 0 to ``end`` at the last epoch."""
        low, high = ALPHA_RANGES[phase]
        low = low if start is None else start
        high = high if end is None else end
        fraction = epoch / (epochs - 1) if epochs > 1 else 0.0
        return cls(alpha=low + (high - low) * fraction, epoch=epoch, phase=phase)


def sample_action(probs: np.ndarray, alpha: float, rng: RngStream) -> np.ndarray:
    """Per patch: with probability ``alpha`` draw from the policy row, else uniformly.

    ``probs`` has shape ``... x (m+1)``; the result drops the last axis.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"Exploit probability alpha must be in [0, 1], got {alpha}")
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim < 1 or np.any(probs < 0) or np.any(np.abs(probs.sum(axis=-1) - 1) > 1e-6):
        raise ValueError("Policy rows must be non-negative and sum to 1")

    actions = probs.shape[-1]
    shape = probs.shape[:-1]
    exploit = rng.split("exploit").random(shape) < alpha
    draw = rng.split("policy").random(shape)
    from_policy = (draw[..., None] >= np.cumsum(probs, axis=-1)).sum(axis=-1)
    from_policy = np.minimum(from_policy, actions - 1)
    # a draw can land on a zero-probability trailing entry only through rounding
    empty = np.take_along_axis(probs, from_policy[..., None], axis=-1)[..., 0] == 0
    if empty.any():
        from_policy = np.where(empty, probs.argmax(axis=-1), from_policy)
    uniform = rng.split("explore").integers(0, actions, shape)
    return np.where(exploit, from_policy, uniform).astype(np.int64)


def reinforce_loss(logits: Tensor, actions: np.ndarray, weights: np.ndarray) -> Tensor:
    """(1/N) sum_n w_n * sum_p -log pi(a_np | s_n) for ``N x A x g x g`` policy logits."""
    n, _, g, _ = logits.shape
    nll = ops.cross_entropy(logits, np.asarray(actions).reshape(n, g, g), reduction="none")
    scale = np.broadcast_to(np.asarray(weights, dtype=logits.dtype)[:, None, None], nll.shape)
    return ops.sum_all(ops.mul(nll, Tensor(scale / n, dtype=logits.dtype)))


def policy_gradient_step(
    policy: PolicyNet,
    optimizer: AdamState,
    state: np.ndarray,
    actions: np.ndarray,
    weights: np.ndarray,
) -> float:
    """One REINFORCE ascent step; ``weights`` are rewards (or advantages) per image."""
    logits = policy(Tensor(np.asarray(state, dtype=policy.dtype)), Mode.TRAIN)
    return apply_policy_gradient(policy, optimizer, logits, actions, weights)


def apply_policy_gradient(
    policy: PolicyNet,
    optimizer: AdamState,
    logits: Tensor,
    actions: np.ndarray,
    weights: np.ndarray,
) -> float:
    loss = reinforce_loss(logits, actions, weights)
    loss.backward()
    step_graph(optimizer, policy)
    return loss.item()


@dataclass
class MovingBaseline:
    """Exponential moving average of batch rewards, subtracted to reduce variance."""

    momentum: float = 0.9
    value: float | None = None

    def advantages(self, rewards: np.ndarray) -> np.ndarray:
        mean = float(np.mean(rewards))
        reference = mean if self.value is None else self.value
        self.value = self.momentum * reference + (1.0 - self.momentum) * mean
        return rewards - reference


class PatchOutcomeCache:
    """Patch IoUs of frozen larger models over a fixed dataset, filled on first use."""

    def __init__(self, suite: ModelSuite, samples: list[SegSample], patches: int):
        self.suite = suite
        self.patches = patches
        self.tiles = split_patches(stack_images(samples), patches)
        self.truth = split_patches(stack_labels(samples), patches)
        self.table = np.full((len(samples), suite.num_models, patches), np.nan)
        self.evaluated = 0

    def lookup(self, indices: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """``N x (m+1) x P`` IoUs for routed patches of models >= 1; NaN elsewhere."""
        out = np.full((len(indices), self.suite.num_models, self.patches), np.nan)
        for model in range(1, self.suite.num_models):
            need = actions == model
            known = self.table[indices, model]
            missing = need & np.isnan(known)
            if missing.any():
                rows, cols = np.nonzero(missing)
                ids = indices[rows]
                labels, _ = predict(self.suite.models[model], self.tiles[ids, cols])
                ious = patch_ious(labels, self.truth[ids, cols], self.suite.num_classes, 1)
                self.table[ids, model, cols] = ious[:, 0]
                self.evaluated += len(rows)
            out[:, model][need] = self.table[indices, model][need]
        return out

    def invalidate(self, model: int) -> None:
        self.table[:, model] = np.nan


def check_trained(suite: ModelSuite) -> None:
    for index, model in enumerate(suite.models):
        if not model.trained:
            raise MissingStageError(f"Model f_{index} has not been pretrained", stage="pretrain")


@dataclass(frozen=True)
class EpochStats:
    loss: float
    reward: float
    actions: np.ndarray


def rl_epoch(
    policy: PolicyNet,
    optimizer: AdamState,
    suite: ModelSuite,
    samples: list[SegSample],
    outcomes: PatchOutcomeCache,
    lam: float,
    alpha: float,
    cfg: RlConfig,
    patches: int,
    rng: RngStream,
    baseline: MovingBaseline | None = None,
) -> EpochStats:
    """One pass over ``samples`` updating only the policy."""
    images = stack_images(samples)
    truth = stack_labels(samples)
    order = rng.split("order").permutation(len(samples))
    losses, rewards, taken = [], [], np.zeros((len(samples), patches), dtype=np.int64)
    for b, start in enumerate(range(0, len(order), cfg.batch_size)):
        idx = order[start : start + cfg.batch_size]
        stream = rng.split(b)
        obs = observe(suite, images[idx], cfg.samples, stream.split("mc"))
        logits = policy(Tensor(np.asarray(obs.state, dtype=policy.dtype)), Mode.TRAIN)
        probs = logits_to_patches(softmax_array(logits.data, axis=1))
        actions = sample_action(probs, alpha, stream.split("act"))

        table = outcomes.lookup(idx, actions)
        table[:, 0] = patch_ious(obs.labels, truth[idx], suite.num_classes, patches)
        batch_reward = batch_rewards(actions, table, lam, suite.costs)
        weights = batch_reward if baseline is None else baseline.advantages(batch_reward)

        losses.append(apply_policy_gradient(policy, optimizer, logits, actions, weights))
        rewards.append(float(batch_reward.mean()))
        taken[idx] = actions
        logger.debug(f"batch {b}: loss {losses[-1]:.5f}, reward {rewards[-1]:.5f}")
    return EpochStats(float(np.mean(losses)), float(np.mean(rewards)), taken)


def train_rl(
    policy: PolicyNet,
    suite: ModelSuite,
    samples: list[SegSample],
    cfg: RlConfig,
    patches: int,
    rng: RngStream,
    events: EventLog | None = None,
    outcomes: PatchOutcomeCache | None = None,
) -> TrainHistory:
    """Train ``policy`` in place with REINFORCE against the frozen suite."""
    if not samples:
        raise ValueError("RL training needs a non-empty dataset")
    check_trained(suite)
    outcomes = outcomes or PatchOutcomeCache(suite, samples, patches)
    optimizer = AdamState.for_graph(policy, lr=cfg.lr)
    baseline = MovingBaseline(cfg.baseline_momentum) if cfg.baseline else None
    tracker = PlateauTracker("train-rl", cfg.plateau_window, cfg.plateau_tolerance)
    history = TrainHistory()

    for epoch in range(cfg.epochs):
        schedule = ScheduleState.at(
            Phase.RL_PRETRAIN, epoch, cfg.epochs, cfg.alpha_start, cfg.alpha_end
        )
        try:
            stats = rl_epoch(
                policy,
                optimizer,
                suite,
                samples,
                outcomes,
                cfg.lam,
                schedule.alpha,
                cfg,
                patches,
                rng.split(epoch),
                baseline,
            )
        except NonFiniteError as e:
            raise TrainingDivergedError(f"RL training diverged: {e}", "train-rl", epoch) from e

        history.losses.append(stats.loss)
        history.rewards.append(stats.reward)
        history.alphas.append(schedule.alpha)
        plateau = tracker.update(epoch, stats.loss)
        logger.info(
            f"train-rl epoch {epoch}: loss {stats.loss:.5f}, reward {stats.reward:.5f}, "
            f"alpha {schedule.alpha:.3f}, lambda {cfg.lam}"
        )
        if events is not None:
            events.append(
                TrainEvent(
                    stage="train-rl",
                    epoch=epoch,
                    loss=stats.loss,
                    reward=stats.reward,
                    alpha=schedule.alpha,
                    lam=cfg.lam,
                    plateau=plateau,
                )
            )
        if plateau and cfg.early_stop:
            history.stopped_early = True
            break

    history.plateau_epoch = tracker.epoch
    policy.trained = True
    logger.debug(f"Evaluated {outcomes.evaluated} large-model patches")
    return history
