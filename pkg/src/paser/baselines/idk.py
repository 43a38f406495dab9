"""IDK cascade: query models in order of size until a patch is confident enough."""

import itertools
import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..config import IdkConfig
from ..data import SegSample, merge_patches, split_patches, stack_images, stack_labels
from ..metrics import dataset_iou
from ..models import ModelSuite, predict, predictive_entropy
from ..pipeline import FlopRecord, observe, patch_flops, run_on_patches, small_flops
from ..tensorkit import RngStream
from ..tensorkit.ops import PROB_FLOOR, softmax_array

logger = logging.getLogger(__name__)


class CascadeConfig(BaseModel):
    """One entropy threshold (nats) per non-final model, plus the IDK cost weight.

    A patch moves on from model k while its mean entropy is at least ``thresholds[k]``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid", ser_json_inf_nan="constants")

    thresholds: list[float] = Field(min_length=1)
    lam_idk: float = Field(0.01, ge=0.0)

    @field_validator("thresholds")
    @classmethod
    def _non_negative(cls, value: list[float]) -> list[float]:
        if any(not t >= 0 for t in value):
            raise ValueError(f"Cascade thresholds must be >= 0, got {value}")
        return value

    @property
    def alpha_f0(self) -> float:
        return self.thresholds[0]

    @property
    def alpha_f1(self) -> float | None:
        return self.thresholds[1] if len(self.thresholds) > 1 else None

    @classmethod
    def scaled(
        cls, scale: float, num_classes: int, stages: int, lam_idk: float = 0.01
    ) -> "CascadeConfig":
        """Every threshold at ``scale * ln K``."""
        return cls(thresholds=[scale * float(np.log(num_classes))] * stages, lam_idk=lam_idk)


def patch_mean_entropy(probs: np.ndarray) -> np.ndarray:
    """Mean per-pixel predictive entropy of ``... x K x h x w`` probabilities."""
    return predictive_entropy(probs, axis=-3).mean(axis=(-2, -1))


@dataclass(frozen=True, eq=False)
class CascadeResult:
    labels: np.ndarray
    probs: np.ndarray
    assignment: np.ndarray
    flops: list[FlopRecord]

    @property
    def total_flops(self) -> int:
        return sum(record.total for record in self.flops)


def _check_stages(suite: ModelSuite, config: CascadeConfig) -> None:
    if len(config.thresholds) != suite.m:
        raise ValueError(
            f"A suite of {suite.num_models} models needs {suite.m} cascade thresholds, "
            f"got {len(config.thresholds)}"
        )


def idk_infer(
    suite: ModelSuite,
    config: CascadeConfig,
    images: np.ndarray,
    samples: int,
    rng: RngStream,
    patches: int,
    offset: int = 0,
) -> CascadeResult:
    """Cascade inference on an ``N x C x H x W`` batch.

    f_0's stage reuses the MC-dropout mean prediction; later models run only on patches that
    are still escalating and judge confidence from their plain softmax.
    """
    _check_stages(suite, config)
    obs = observe(suite, images, samples, rng)
    patch_probs = split_patches(obs.prediction.mean_probs, patches).copy()
    patch_labels = split_patches(obs.labels, patches).copy()
    entropy = split_patches(obs.entropy, patches).mean(axis=(-2, -1))
    stage = np.zeros(entropy.shape, dtype=np.int64)
    active = np.ones(entropy.shape, dtype=bool)
    reached = np.zeros((len(images), suite.m), dtype=np.int64)

    for k, threshold in enumerate(config.thresholds):
        active &= entropy >= threshold
        if not active.any():
            break
        labels, logits = run_on_patches(suite, k + 1, images, active, patches)
        probs = softmax_array(logits, axis=1)
        patch_labels[active] = labels
        patch_probs[active] = probs
        entropy[active] = patch_mean_entropy(probs)
        stage[active] = k + 1
        reached[:, k] = active.sum(axis=1)

    per_patch = patch_flops(suite, images, patches)
    small = small_flops(suite, images, samples)
    records = [
        FlopRecord(
            image=offset + n,
            small=small,
            policy=0,
            routed=[int(reached[n, k]) * per_patch[k + 1] for k in range(suite.m)],
        )
        for n in range(len(images))
    ]
    return CascadeResult(merge_patches(patch_labels), merge_patches(patch_probs), stage, records)


def idk_loss(
    probs: np.ndarray, labels: np.ndarray, index: int, lam_idk: float, costs: np.ndarray
) -> float:
    """Cross-entropy of class probabilities ``N x K x ...`` plus ``lam_idk * C(f_index)``."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    num_classes = probs.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"Labels must lie in [0, {num_classes})")
    picked = np.take_along_axis(probs, labels[:, None], axis=1)
    ce = float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())
    return ce + lam_idk * float(costs[index])


@dataclass(frozen=True, eq=False)
class CascadeTrace:
    """Every model's output on every patch of a fixed labelled set.

    Cascade outcomes for any thresholds are then a selection, which makes grid search and
    bisection cheap.
    """

    probs: np.ndarray
    entropy: np.ndarray
    truth: np.ndarray
    costs: np.ndarray

    @property
    def num_models(self) -> int:
        return self.probs.shape[0]

    def stops(self, thresholds: Sequence[float]) -> np.ndarray:
        stage = np.zeros(self.entropy.shape[1:], dtype=np.int64)
        active = np.ones(stage.shape, dtype=bool)
        for k, threshold in enumerate(thresholds):
            active &= self.entropy[k] >= threshold
            stage[active] = k + 1
        return stage

    def selected_probs(self, thresholds: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
        stage = self.stops(thresholds)
        n, p = np.indices(stage.shape)
        return stage, self.probs[stage, n, p]

    def loss(self, config: CascadeConfig) -> float:
        """Mean over patches of the IDK loss of the model that answered the patch."""
        stage, probs = self.selected_probs(config.thresholds)
        picked = np.take_along_axis(probs, self.truth[:, :, None], axis=2)[:, :, 0]
        ce = -np.log(np.maximum(picked, PROB_FLOOR)).mean(axis=(-2, -1))
        return float(np.mean(ce + config.lam_idk * self.costs[stage]))

    def iou(self, thresholds: Sequence[float]) -> float:
        _, probs = self.selected_probs(thresholds)
        labels = merge_patches(probs.argmax(axis=2))
        return dataset_iou(labels, merge_patches(self.truth), self.probs.shape[3])


def trace_cascade(
    suite: ModelSuite, samples: list[SegSample], mc_samples: int, rng: RngStream, patches: int
) -> CascadeTrace:
    images = stack_images(samples)
    obs = observe(suite, images, mc_samples, rng)
    tiles = split_patches(images, patches)
    n, p = tiles.shape[:2]
    flat = tiles.reshape(n * p, *tiles.shape[2:])

    probs = [split_patches(obs.prediction.mean_probs, patches)]
    entropy = [split_patches(obs.entropy, patches).mean(axis=(-2, -1))]
    for model in suite.models[1:]:
        _, logits = predict(model, flat)
        model_probs = softmax_array(logits, axis=1).reshape(n, p, *logits.shape[1:])
        probs.append(model_probs)
        entropy.append(patch_mean_entropy(model_probs))
    return CascadeTrace(
        probs=np.stack(probs),
        entropy=np.stack(entropy),
        truth=split_patches(stack_labels(samples), patches).astype(np.intp),
        costs=suite.costs,
    )


def replay_cascade(
    suite: ModelSuite,
    trace: CascadeTrace,
    config: CascadeConfig,
    images: np.ndarray,
    samples: int,
    patches: int,
    offset: int = 0,
) -> CascadeResult:
    """Cascade outcome for ``config`` read off a trace built on ``images``.

    Labels, assignments and flops are exactly what the trace scores, so thresholds tuned on
    the trace report the IoU they were tuned to.
    """
    _check_stages(suite, config)
    stage, probs = trace.selected_probs(config.thresholds)
    per_patch = patch_flops(suite, images, patches)
    small = small_flops(suite, images, samples)
    records = [
        FlopRecord(
            image=offset + n,
            small=small,
            policy=0,
            routed=[int((stage[n] > k).sum()) * per_patch[k + 1] for k in range(suite.m)],
        )
        for n in range(len(images))
    ]
    return CascadeResult(merge_patches(probs.argmax(axis=2)), merge_patches(probs), stage, records)


def threshold_grid(trace: CascadeTrace, points: int) -> list[np.ndarray]:
    """Per non-final model: ``points`` thresholds spanning one std around its mean entropy."""
    grid = []
    for k in range(trace.num_models - 1):
        mu = float(trace.entropy[k].mean())
        sigma = float(trace.entropy[k].std())
        grid.append(np.linspace(max(mu - sigma, 0.0), mu + sigma, points))
    return grid


def tune_idk(
    suite: ModelSuite,
    samples: list[SegSample],
    cfg: IdkConfig,
    mc_samples: int,
    rng: RngStream,
    patches: int,
    grid: Sequence[Sequence[float]] | None = None,
    trace: CascadeTrace | None = None,
) -> CascadeConfig:
    """Grid search the thresholds minimising mean IDK loss on ``samples``."""
    if not samples and trace is None:
        raise ValueError("Cascade tuning needs a non-empty validation set")
    trace = trace or trace_cascade(suite, samples, mc_samples, rng, patches)
    grid = grid if grid is not None else threshold_grid(trace, cfg.grid_points)
    if len(grid) != suite.m or any(len(axis) == 0 for axis in grid):
        raise ValueError("Cascade threshold grid is empty")
    for k, axis in enumerate(grid):
        logger.info(f"IDK grid for f_{k}: [{min(axis):.4f}, {max(axis):.4f}] ({len(axis)} points)")

    best: CascadeConfig | None = None
    best_loss = np.inf
    for point in itertools.product(*grid):
        config = CascadeConfig(thresholds=[float(t) for t in point], lam_idk=cfg.lam_idk)
        loss = trace.loss(config)
        if loss < best_loss:
            best, best_loss = config, loss
    assert best is not None
    logger.info(f"Tuned IDK thresholds {best.thresholds} with loss {best_loss:.5f}")
    return best


@dataclass(frozen=True)
class IouMatch:
    config: CascadeConfig
    iou: float
    scale: float
    reachable: bool


def iou_match_tune(
    suite: ModelSuite,
    target_iou: float,
    samples: list[SegSample],
    cfg: IdkConfig,
    mc_samples: int,
    rng: RngStream,
    patches: int,
    trace: CascadeTrace | None = None,
) -> IouMatch:
    """Bisect a shared threshold scale ``t`` (thresholds ``t * ln K``) for the cheapest
    cascade whose IoU on ``samples`` still reaches ``target_iou``."""
    trace = trace or trace_cascade(suite, samples, mc_samples, rng, patches)

    def config(scale: float) -> CascadeConfig:
        return CascadeConfig.scaled(scale, suite.num_classes, suite.m, cfg.lam_idk)

    def iou(scale: float) -> float:
        return trace.iou(config(scale).thresholds)

    top = iou(0.0)
    if top < target_iou:
        logger.warning(
            f"Target IoU {target_iou:.4f} is unreachable; the full cascade reaches {top:.4f}"
        )
        return IouMatch(config(0.0), top, 0.0, reachable=False)
    bottom = iou(1.0)
    if bottom >= target_iou:
        return IouMatch(config(1.0), bottom, 1.0, reachable=True)

    low, high = 0.0, 1.0
    for _ in range(60):
        if high - low < 1e-7:
            break
        mid = (low + high) / 2
        if iou(mid) >= target_iou:
            low = mid
        else:
            high = mid
    matched = iou(low)
    if matched - target_iou > cfg.tolerance:
        logger.info(
            f"Closest cascade IoU above target is {matched:.4f} "
            f"(target {target_iou:.4f}, tolerance {cfg.tolerance})"
        )
    return IouMatch(config(low), matched, low, reachable=True)
