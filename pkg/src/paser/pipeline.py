"""Routed inference shared by PaSeR, the random policy and the IDK cascade.

f_0 always runs on the full image with MC dropout; its mean prediction is sliced for every
patch the router keeps on f_0, and larger models only ever see their routed patches.
"""

import logging
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel

from .data.patches import merge_patches, split_patches
from .models import McPrediction, ModelSuite, PolicyNet, build_state, mc_entropy, predict
from .models.policy import logits_to_patches
from .tensorkit import Mode, RngStream, Tensor, count_flops, no_grad
from .tensorkit.ops import softmax_array

logger = logging.getLogger(__name__)


class FlopRecord(BaseModel):
    """Analytic flops spent on one image, split by where they were spent."""

    image: int
    small: int
    policy: int
    routed: list[int]

    @property
    def total(self) -> int:
        return self.small + self.policy + sum(self.routed)


@dataclass(frozen=True, eq=False)
class Observation:
    """f_0's MC-dropout view of a batch and the policy state built from it."""

    prediction: McPrediction
    state: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        return self.prediction.labels

    @property
    def entropy(self) -> np.ndarray:
        return self.prediction.entropy.values


@dataclass(frozen=True, eq=False)
class RoutedResult:
    """Segmentations, per-patch model assignments and per-image flops for a batch."""

    labels: np.ndarray
    actions: np.ndarray
    flops: list[FlopRecord]

    @property
    def total_flops(self) -> int:
        return sum(record.total for record in self.flops)


def observe(suite: ModelSuite, images: np.ndarray, samples: int, rng: RngStream) -> Observation:
    """Run f_0 ``samples`` times with dropout and build the (K+1)-channel policy state."""
    batch = images[None] if images.ndim == 3 else images
    prediction = mc_entropy(suite.small, batch, samples, rng)
    return Observation(prediction, build_state(prediction.mean_probs, prediction.entropy.values))


def greedy_actions(policy: PolicyNet, state: np.ndarray) -> np.ndarray:
    """Argmax action per patch, ``N x P``; ties go to the cheaper model."""
    with no_grad():
        logits = policy(Tensor(np.asarray(state, dtype=policy.dtype)), Mode.EVAL).data
    return logits_to_patches(softmax_array(logits, axis=1)).argmax(axis=-1)


def run_on_patches(
    suite: ModelSuite, index: int, images: np.ndarray, mask: np.ndarray, patches: int
) -> tuple[np.ndarray, np.ndarray]:
    """Run model ``index`` on the patches where ``mask`` (``N x P``) is set.

    Returns:
        Labels (``M x h x w``) and logits (``M x K x h x w``) in row-major (image, patch) order
    """
    tiles = split_patches(images, patches)[mask]
    if tiles.shape[0] == 0:
        h, w = tiles.shape[-2:]
        return np.zeros((0, h, w), dtype=np.int64), np.zeros((0, suite.num_classes, h, w))
    return predict(suite.models[index], tiles)


def route_patches(
    suite: ModelSuite,
    images: np.ndarray,
    actions: np.ndarray,
    base_labels: np.ndarray,
    patches: int,
) -> np.ndarray:
    """Assemble full label maps: f_0's labels where ``actions == 0``, model outputs elsewhere."""
    patch_labels = split_patches(base_labels, patches).copy()
    for index in range(1, suite.num_models):
        mask = actions == index
        if mask.any():
            patch_labels[mask] = run_on_patches(suite, index, images, mask, patches)[0]
    return merge_patches(patch_labels)


def patch_flops(suite: ModelSuite, images: np.ndarray, patches: int) -> list[int]:
    """Flops of one patch-sized forward of each model (f_0's entry is 0; it is never re-run)."""
    _, channels, height, width = images.shape
    side = int(np.sqrt(patches))
    shape = (1, channels, height // side, width // side)
    return [0] + [suite.flops(i, shape) for i in range(1, suite.num_models)]


def small_flops(suite: ModelSuite, images: np.ndarray, samples: int) -> int:
    return samples * suite.flops(0, (1, *images.shape[1:]), Mode.MC_DROPOUT)


def flop_records(
    suite: ModelSuite,
    images: np.ndarray,
    actions: np.ndarray,
    samples: int,
    patches: int,
    policy_flops: int,
    offset: int = 0,
) -> list[FlopRecord]:
    per_patch = patch_flops(suite, images, patches)
    small = small_flops(suite, images, samples)
    records = []
    for n, row in enumerate(actions):
        counts = np.bincount(row, minlength=suite.num_models)
        routed = [int(counts[i]) * per_patch[i] for i in range(1, suite.num_models)]
        records.append(
            FlopRecord(image=offset + n, small=small, policy=policy_flops, routed=routed)
        )
    return records


def paser_infer(
    suite: ModelSuite,
    policy: PolicyNet,
    images: np.ndarray,
    samples: int,
    rng: RngStream,
    patches: int,
    offset: int = 0,
) -> RoutedResult:
    """Greedy PaSeR inference on an ``N x C x H x W`` batch."""
    obs = observe(suite, images, samples, rng)
    actions = greedy_actions(policy, obs.state)
    labels = route_patches(suite, images, actions, obs.labels, patches)
    policy_cost = count_flops(policy, (1, *obs.state.shape[1:]))
    records = flop_records(suite, images, actions, samples, patches, policy_cost, offset)
    return RoutedResult(labels, actions, records)
