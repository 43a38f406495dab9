"""Patch-routing policy network f_RL."""

import math

import numpy as np

from ..data.patches import grid_side
from ..errors import ShapeError
from ..tensorkit import Graph, Mode, RngStream, Tensor, no_grad, ops
from ..tensorkit.ops import softmax_array


class PolicyNet(Graph):
    """Strided 3x3 convs halve the state until it matches the patch grid; a 1x1 conv then
    emits one logit per model for every grid cell."""

    input_names = ("state",)
    output_names = ("logits",)

    def __init__(
        self,
        num_classes: int,
        num_models: int,
        image_size: tuple[int, int],
        patches: int,
        rng: RngStream,
        width: int = 24,
        zero_head: bool = True,
        dtype: np.dtype | type | None = None,
    ):
        super().__init__(dtype)
        self.num_classes = num_classes
        self.num_models = num_models
        self.image_size = image_size
        self.grid = grid_side(patches)

        height, width_px = image_size
        if height % self.grid or width_px % self.grid:
            raise ShapeError(
                f"Image {image_size} does not tile into a {self.grid}x{self.grid} grid"
            )
        ratio = height // self.grid
        if width_px // self.grid != ratio or ratio & (ratio - 1):
            raise ShapeError(
                f"Policy needs equal power-of-two patch sides, got {height // self.grid}x"
                f"{width_px // self.grid}"
            )
        self.downsamples = int(math.log2(ratio))

        cin = num_classes + 1
        for i in range(max(self.downsamples, 1)):
            self.add_conv(f"down{i}", cin, width, 3, rng.split(f"down{i}"))
            cin = width
        self.add_conv("head", cin, num_models, 1, rng.split("head"))
        if zero_head:
            self.params["head.weight"].data[...] = 0
            self.params["head.bias"].data[...] = 0

    def check_input(self, shape: tuple[int, ...]) -> None:
        expected = (self.num_classes + 1, *self.image_size)
        if len(shape) != 4 or tuple(shape[1:]) != expected:
            raise ShapeError(
                f"Policy expects N x {expected[0]} x {expected[1]} x {expected[2]} state, "
                f"got {shape}",
                expected=expected,
                actual=shape,
            )

    def forward(self, x: Tensor, mode: Mode = Mode.EVAL, rng: RngStream | None = None) -> Tensor:
        h = x
        for i in range(max(self.downsamples, 1)):
            h = ops.relu(self.conv(f"down{i}", h, stride=2 if self.downsamples else 1))
        return self.conv("head", h, padding=0)


def build_state(mean_probs: np.ndarray, entropy: np.ndarray) -> np.ndarray:
    """Stack the K-channel mean softmax and the entropy map into a (K+1)-channel state."""
    if mean_probs.ndim == 3:
        mean_probs, entropy = mean_probs[None], entropy[None]
    if entropy.shape != (mean_probs.shape[0], *mean_probs.shape[2:]):
        raise ShapeError(
            f"Entropy map {entropy.shape} does not match probabilities {mean_probs.shape}"
        )
    return np.concatenate([mean_probs, entropy[:, None]], axis=1)


def logits_to_patches(logits: np.ndarray) -> np.ndarray:
    """``N x A x g x g`` grid -> ``N x P x A`` in row-major patch order."""
    n, actions, g, _ = logits.shape
    return logits.transpose(0, 2, 3, 1).reshape(n, g * g, actions)


def policy_forward(policy: PolicyNet, state: np.ndarray) -> np.ndarray:
    """Per-patch action probabilities, shape ``N x P x (m+1)``; rows sum to 1."""
    batch = state[None] if state.ndim == 3 else state
    with no_grad():
        logits = policy(Tensor(np.asarray(batch, dtype=policy.dtype)), Mode.EVAL).data
    probs = logits_to_patches(softmax_array(logits, axis=1))
    return probs[0] if state.ndim == 3 else probs
