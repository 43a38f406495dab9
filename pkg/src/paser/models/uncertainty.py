"""Monte Carlo dropout predictive entropy for the small model."""

from dataclasses import dataclass

import numpy as np

from ..tensorkit import Mode, RngStream, Tensor, no_grad
from ..tensorkit.ops import softmax_array
from .unet import UNet


@dataclass(frozen=True, eq=False)
class EntropyMap:
    """Per-pixel predictive entropy (nats) estimated from ``samples`` forwards."""

    values: np.ndarray
    samples: int


@dataclass(frozen=True, eq=False)
class McPrediction:
    """Mean softmax, its argmax labels and entropy for one image or a batch."""

    mean_probs: np.ndarray
    labels: np.ndarray
    entropy: EntropyMap


def predictive_entropy(probs: np.ndarray, axis: int = 1) -> np.ndarray:
    """-sum_k p_k ln p_k along ``axis``, clipped to [0, ln K]."""
    num_classes = probs.shape[axis]
    safe = np.where(probs > 0, probs, 1.0)
    entropy = -(probs * np.log(safe)).sum(axis=axis)
    return np.clip(entropy, 0.0, np.log(num_classes))


def mc_entropy(model: UNet, images: np.ndarray, samples: int, rng: RngStream) -> McPrediction:
    """Average ``samples`` stochastic forwards of ``model`` with dropout active.

    Sample ``s`` draws its dropout masks from ``rng.split(s)``.
    """
    if samples < 2:
        raise ValueError(f"MC dropout needs at least 2 samples, got {samples}")
    if model.spec.dropout_rate <= 0:
        raise ValueError("MC dropout needs a model with dropout_rate > 0")

    single = images.ndim == 3
    batch = np.asarray(images[None] if single else images, dtype=model.dtype)
    x = Tensor(batch)
    total: np.ndarray | None = None
    with no_grad():
        for s in range(samples):
            probs = softmax_array(model(x, Mode.MC_DROPOUT, rng.split(s)).data, axis=1)
            total = probs if total is None else total + probs
    assert total is not None
    mean = total / samples
    labels = mean.argmax(axis=1)
    entropy = predictive_entropy(mean, axis=1)
    if single:
        mean, labels, entropy = mean[0], labels[0], entropy[0]
    return McPrediction(mean, labels, EntropyMap(entropy, samples))
