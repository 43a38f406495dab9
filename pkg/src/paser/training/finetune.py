"""Joint fine-tuning of the larger models and the policy, and TVD-bounded lambda ramping."""

import logging
from dataclasses import dataclass, field

import numpy as np

from ..config import FinetuneConfig, RlConfig, TvdConfig
from ..data import SegSample, split_patches, stack_images, stack_labels
from ..errors import MissingStageError, NonFiniteError, TrainingDivergedError
from ..metrics import marginal_assignment, patch_ious, tvd
from ..models import ModelSuite, PolicyNet
from ..models.policy import logits_to_patches
from ..pipeline import greedy_actions, observe
from ..tensorkit import AdamState, Mode, RngStream, Tensor, ops, step_graph
from ..tensorkit.ops import softmax_array
from .events import EventLog, TrainEvent, TrainHistory
from .pretrain import epoch_batches
from .reward import batch_rewards
from .rl import (
    PatchOutcomeCache,
    Phase,
    ScheduleState,
    apply_policy_gradient,
    check_trained,
    rl_epoch,
    sample_action,
)

logger = logging.getLogger(__name__)


def check_policy(policy: PolicyNet) -> None:
    if not policy.trained:
        raise MissingStageError("The routing policy has not been trained", stage="train-rl")


def finetune(
    suite: ModelSuite,
    policy: PolicyNet,
    samples: list[SegSample],
    ft: FinetuneConfig,
    rl: RlConfig,
    patches: int,
    rng: RngStream,
    events: EventLog | None = None,
) -> TrainHistory:
    """Per batch: route with the policy, train each larger model on the patches it received,
    then take a policy-gradient step. f_0 stays frozen."""
    if not samples:
        raise ValueError("Fine-tuning needs a non-empty dataset")
    check_trained(suite)
    check_policy(policy)
    images = stack_images(samples)
    labels = stack_labels(samples)
    model_opts = {
        i: AdamState.for_graph(suite.models[i], lr=ft.lr) for i in range(1, suite.num_models)
    }
    policy_opt = AdamState.for_graph(policy, lr=ft.policy_lr)
    history = TrainHistory()

    for epoch in range(ft.epochs):
        schedule = ScheduleState.at(Phase.FINETUNE, epoch, ft.epochs, ft.alpha_start, ft.alpha_end)
        stream = rng.split(epoch)
        policy_losses, rewards = [], []
        model_losses: dict[int, list[float]] = {i: [] for i in model_opts}
        try:
            for b, idx in enumerate(epoch_batches(len(samples), ft.batch_size, stream)):
                batch_rng = stream.split(b)
                obs = observe(suite, images[idx], rl.samples, batch_rng.split("mc"))
                logits = policy(Tensor(np.asarray(obs.state, dtype=policy.dtype)), Mode.TRAIN)
                probs = logits_to_patches(softmax_array(logits.data, axis=1))
                actions = sample_action(probs, schedule.alpha, batch_rng.split("act"))

                table = np.full((len(idx), suite.num_models, patches), np.nan)
                table[:, 0] = patch_ious(obs.labels, labels[idx], suite.num_classes, patches)
                tiles = split_patches(images[idx], patches)
                truth = split_patches(labels[idx], patches)
                for i, optimizer in model_opts.items():
                    mask = actions == i
                    if not mask.any():
                        continue
                    model = suite.models[i]
                    out = model(Tensor(np.asarray(tiles[mask], dtype=model.dtype)), Mode.TRAIN)
                    loss = ops.cross_entropy(out, truth[mask])
                    loss.backward()
                    step_graph(optimizer, model)
                    model_losses[i].append(loss.item())
                    routed = out.data.argmax(axis=1)
                    table[:, i][mask] = patch_ious(
                        routed, truth[mask], suite.num_classes, 1
                    )[:, 0]

                batch_reward = batch_rewards(actions, table, rl.lam, suite.costs)
                policy_losses.append(
                    apply_policy_gradient(policy, policy_opt, logits, actions, batch_reward)
                )
                rewards.append(float(batch_reward.mean()))
        except NonFiniteError as e:
            raise TrainingDivergedError(f"Fine-tuning diverged: {e}", "finetune", epoch) from e

        loss = float(np.mean(policy_losses))
        reward = float(np.mean(rewards))
        history.losses.append(loss)
        history.rewards.append(reward)
        history.alphas.append(schedule.alpha)
        extra = {f"f{i}_loss": float(np.mean(v)) for i, v in model_losses.items() if v}
        logger.info(
            f"finetune epoch {epoch}: policy loss {loss:.5f}, reward {reward:.5f}, "
            f"alpha {schedule.alpha:.3f}, lambda {rl.lam}"
        )
        if events is not None:
            events.append(
                TrainEvent(
                    stage="finetune",
                    epoch=epoch,
                    loss=loss,
                    reward=reward,
                    alpha=schedule.alpha,
                    lam=rl.lam,
                    extra=extra,
                )
            )
    return history


@dataclass
class TvdResult:
    """Outcome of a TVD-bounded fine-tuning run."""

    reference: np.ndarray
    distances: list[float] = field(default_factory=list)
    lams: list[float] = field(default_factory=list)
    history: TrainHistory = field(default_factory=TrainHistory)
    stopped: bool = False

    @property
    def final_lam(self) -> float | None:
        return self.lams[-1] if self.lams else None


def finetune_tvd(
    policy: PolicyNet,
    suite: ModelSuite,
    samples: list[SegSample],
    val_samples: list[SegSample],
    cfg: TvdConfig,
    rl: RlConfig,
    patches: int,
    rng: RngStream,
    events: EventLog | None = None,
) -> TvdResult:
    """Ramp lambda linearly per epoch until the policy's marginal assignment over
    ``val_samples`` drifts ``threshold`` (TVD) away from where it started.

    The policy is left at its last state whose TVD was below the threshold; when the
    threshold is 0 that is the starting policy.
    """
    if not 0.0 <= cfg.threshold <= 1.0:
        raise ValueError(f"TVD threshold must be in [0, 1], got {cfg.threshold}")
    if not samples or not val_samples:
        raise ValueError("TVD fine-tuning needs non-empty fine-tuning and validation sets")
    check_trained(suite)
    check_policy(policy)

    val_obs = observe(suite, stack_images(val_samples), rl.samples, rng.split("val"))

    def marginal() -> np.ndarray:
        return marginal_assignment(greedy_actions(policy, val_obs.state), suite.num_models)

    result = TvdResult(reference=marginal())
    outcomes = PatchOutcomeCache(suite, samples, patches)
    optimizer = AdamState.for_graph(policy, lr=rl.lr)
    snapshot = policy.state_dict()

    for epoch in range(cfg.max_epochs + 1):
        distance = tvd(marginal(), result.reference)
        result.distances.append(distance)
        if distance >= cfg.threshold:
            policy.load_state_dict(snapshot)
            result.stopped = True
            logger.info(f"TVD {distance:.4f} reached threshold {cfg.threshold} at epoch {epoch}")
            break
        snapshot = policy.state_dict()
        if epoch == cfg.max_epochs:
            logger.warning(
                f"TVD fine-tuning hit the {cfg.max_epochs}-epoch cap at TVD {distance:.4f} "
                f"without reaching threshold {cfg.threshold}"
            )
            break

        lam = min(cfg.lam_start + cfg.lam_step * epoch, 1.0)
        schedule = ScheduleState.at(Phase.FINETUNE, epoch, cfg.max_epochs)
        try:
            stats = rl_epoch(
                policy,
                optimizer,
                suite,
                samples,
                outcomes,
                lam,
                schedule.alpha,
                rl,
                patches,
                rng.split(epoch),
            )
        except NonFiniteError as e:
            raise TrainingDivergedError(
                f"TVD fine-tuning diverged: {e}", "finetune-tvd", epoch
            ) from e

        result.lams.append(lam)
        result.history.losses.append(stats.loss)
        result.history.rewards.append(stats.reward)
        result.history.alphas.append(schedule.alpha)
        logger.info(
            f"finetune-tvd epoch {epoch}: loss {stats.loss:.5f}, reward {stats.reward:.5f}, "
            f"lambda {lam:.3f}, tvd {distance:.4f}"
        )
        if events is not None:
            events.append(
                TrainEvent(
                    stage="finetune-tvd",
                    epoch=epoch,
                    loss=stats.loss,
                    reward=stats.reward,
                    alpha=schedule.alpha,
                    lam=lam,
                    tvd=distance,
                )
            )
    return result
