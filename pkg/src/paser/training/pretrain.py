"""Supervised pretraining of the task models: per-patch cross-entropy for f_1..f_m and
full-image cross-entropy plus logit distillation for f_0."""

import logging
from collections.abc import Iterator

import numpy as np

from ..config import PretrainConfig
from ..data import SegSample, merge_patches, split_patches, stack_images, stack_labels
from ..errors import MissingStageError, NonFiniteError, TrainingDivergedError
from ..models import UNet, predict
from ..tensorkit import AdamState, Mode, RngStream, Tensor, ops, step_graph
from .events import EventLog, TrainEvent, TrainHistory

logger = logging.getLogger(__name__)


def epoch_batches(n: int, batch_size: int, rng: RngStream) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def to_patch_batch(
    images: np.ndarray, labels: np.ndarray, patches: int
) -> tuple[np.ndarray, np.ndarray]:
    """``N x C x H x W`` images and ``N x H x W`` labels -> (N*P) patch batches."""
    tiles = split_patches(images, patches)
    truth = split_patches(labels, patches)
    return tiles.reshape(-1, *tiles.shape[2:]), truth.reshape(-1, *truth.shape[2:])


def pretrain_large(
    model: UNet,
    samples: list[SegSample],
    cfg: PretrainConfig,
    patches: int,
    rng: RngStream,
    events: EventLog | None = None,
    stage: str = "pretrain",
) -> TrainHistory:
    """Train ``model`` in place on the patches of ``samples`` with Adam."""
    if not samples:
        raise ValueError("Pretraining needs a non-empty dataset")
    images = stack_images(samples)
    labels = stack_labels(samples)
    optimizer = AdamState.for_graph(model, lr=cfg.lr)
    history = TrainHistory()

    for epoch in range(cfg.epochs):
        losses = []
        try:
            for idx in epoch_batches(len(samples), cfg.batch_size, rng.split(epoch)):
                tiles, truth = to_patch_batch(images[idx], labels[idx], patches)
                logits = model(Tensor(np.asarray(tiles, dtype=model.dtype)), Mode.TRAIN)
                loss = ops.cross_entropy(logits, truth)
                loss.backward()
                step_graph(optimizer, model)
                losses.append(loss.item())
        except NonFiniteError as e:
            raise TrainingDivergedError(f"{stage} diverged: {e}", stage, epoch) from e

        mean_loss = float(np.mean(losses))
        history.losses.append(mean_loss)
        logger.info(f"{stage} epoch {epoch}: loss {mean_loss:.5f}")
        if events is not None:
            events.append(TrainEvent(stage=stage, epoch=epoch, loss=mean_loss))

    model.trained = True
    return history


def kd_loss(z_small: Tensor, z_large: Tensor | np.ndarray) -> Tensor:
    """Mean squared difference between student and teacher logits."""
    target = z_large if isinstance(z_large, Tensor) else Tensor(z_large, dtype=z_small.dtype)
    return ops.mse(z_small, target)


def stitched_logits(
    model: UNet, images: np.ndarray, patches: int, chunk: int = 64
) -> np.ndarray:
    """Run ``model`` on every patch and reassemble full-resolution ``N x K x H x W`` logits."""
    outputs = []
    for start in range(0, len(images), chunk):
        tiles = split_patches(images[start : start + chunk], patches)
        n, p = tiles.shape[:2]
        _, logits = predict(model, tiles.reshape(n * p, *tiles.shape[2:]))
        outputs.append(merge_patches(logits.reshape(n, p, *logits.shape[1:])))
    return np.concatenate(outputs)


def pretrain_small_kd(
    small: UNet,
    large: UNet,
    samples: list[SegSample],
    cfg: PretrainConfig,
    patches: int,
    rng: RngStream,
    events: EventLog | None = None,
    stage: str = "pretrain-kd",
) -> TrainHistory:
    """Train f_0 on full images with cross-entropy plus ``beta`` times the KD loss.

    Raises:
        MissingStageError: If the teacher ``large`` has not been pretrained
    """
    if not large.trained:
        raise MissingStageError("The distillation teacher f_m is untrained", stage="pretrain")
    if not samples:
        raise ValueError("Pretraining needs a non-empty dataset")
    images = stack_images(samples)
    labels = stack_labels(samples)
    teacher = stitched_logits(large, images, patches)
    optimizer = AdamState.for_graph(small, lr=cfg.lr)
    history = TrainHistory()

    for epoch in range(cfg.epochs):
        losses, kd_values = [], []
        stream = rng.split(epoch)
        try:
            for b, idx in enumerate(epoch_batches(len(samples), cfg.batch_size, stream)):
                x = Tensor(np.asarray(images[idx], dtype=small.dtype))
                logits = small(x, Mode.TRAIN, stream.split(f"dropout{b}"))
                ce = ops.cross_entropy(logits, labels[idx])
                kd = kd_loss(logits, teacher[idx])
                loss = ce + kd * cfg.beta if cfg.beta else ce
                loss.backward()
                step_graph(optimizer, small)
                losses.append(loss.item())
                kd_values.append(kd.item())
        except NonFiniteError as e:
            raise TrainingDivergedError(f"{stage} diverged: {e}", stage, epoch) from e

        mean_loss = float(np.mean(losses))
        mean_kd = float(np.mean(kd_values))
        history.losses.append(mean_loss)
        logger.info(f"{stage} epoch {epoch}: loss {mean_loss:.5f}, kd {mean_kd:.5f}")
        if events is not None:
            events.append(
                TrainEvent(stage=stage, epoch=epoch, loss=mean_loss, extra={"kd": mean_kd})
            )

    small.trained = True
    return history
