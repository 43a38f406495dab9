"""UNet task models f_0..f_m."""

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..errors import ShapeError
from ..tensorkit import Graph, Mode, RngStream, Tensor, no_grad, ops


class UNetSpec(BaseModel):
    """Architecture of one UNet in the suite."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    depth: int = Field(2, ge=1, le=6)
    base_channels: int = Field(8, ge=1)
    in_channels: int = Field(1, ge=1)
    num_classes: int = Field(3, ge=2)
    dropout_rate: float = Field(0.0, ge=0.0, lt=1.0)


class UNet(Graph):
    """Encoder/decoder with skip connections.

    Each level applies two 3x3 conv + ReLU blocks; levels are joined by 2x2 max-pooling on
    the way down and nearest 2x upsampling plus channel concat on the way up. Channels double
    per level. Dropout (when ``dropout_rate > 0``) follows the bottleneck and precedes the 1x1
    classification head.
    """

    def __init__(self, spec: UNetSpec, rng: RngStream, dtype: np.dtype | type | None = None):
        super().__init__(dtype)
        self.spec = spec
        widths = [spec.base_channels * 2**level for level in range(spec.depth + 1)]
        self.widths = widths

        cin = spec.in_channels
        for level in range(spec.depth):
            self.add_conv(f"enc{level}.conv1", cin, widths[level], 3, rng.split(f"enc{level}.1"))
            self.add_conv(
                f"enc{level}.conv2", widths[level], widths[level], 3, rng.split(f"enc{level}.2")
            )
            cin = widths[level]
        bottom = widths[spec.depth]
        self.add_conv("bottleneck.conv1", cin, bottom, 3, rng.split("bottleneck.1"))
        self.add_conv("bottleneck.conv2", bottom, bottom, 3, rng.split("bottleneck.2"))
        for level in reversed(range(spec.depth)):
            self.add_conv(
                f"dec{level}.conv1",
                widths[level + 1] + widths[level],
                widths[level],
                3,
                rng.split(f"dec{level}.1"),
            )
            self.add_conv(
                f"dec{level}.conv2", widths[level], widths[level], 3, rng.split(f"dec{level}.2")
            )
        self.add_conv("head", widths[0], spec.num_classes, 1, rng.split("head"))

    def check_input(self, shape: tuple[int, ...]) -> None:
        if len(shape) != 4 or shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"UNet expects N x {self.spec.in_channels} x H x W input, got {shape}",
                expected=self.spec.in_channels,
                actual=shape,
            )
        multiple = 2**self.spec.depth
        if shape[2] % multiple or shape[3] % multiple:
            raise ShapeError(
                f"UNet of depth {self.spec.depth} needs H and W divisible by {multiple}, "
                f"got {shape[2]}x{shape[3]}"
            )

    def _block(self, name: str, h: Tensor) -> Tensor:
        h = ops.relu(self.conv(f"{name}.conv1", h))
        return ops.relu(self.conv(f"{name}.conv2", h))

    def _dropout(self, h: Tensor, mode: Mode, rng: RngStream | None, site: str) -> Tensor:
        stream = rng.split(site) if rng is not None else None
        return ops.dropout(h, self.spec.dropout_rate, stream, mode.dropout_active)

    def forward(self, x: Tensor, mode: Mode = Mode.EVAL, rng: RngStream | None = None) -> Tensor:
        skips: list[Tensor] = []
        h = x
        for level in range(self.spec.depth):
            h = self._block(f"enc{level}", h)
            skips.append(h)
            h = ops.max_pool2x2(h)
        h = self._dropout(self._block("bottleneck", h), mode, rng, "bottleneck")
        for level in reversed(range(self.spec.depth)):
            h = ops.concat([ops.upsample2x(h), skips[level]], axis=1)
            h = self._block(f"dec{level}", h)
        h = self._dropout(h, mode, rng, "head")
        return self.conv("head", h, padding=0)


def predict(model: Graph, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel argmax labels and logits in eval mode.

    Accepts a single ``C x H x W`` image or an ``N x C x H x W`` batch. ``np.argmax`` returns
    the first maximum, so exact ties resolve to the smallest class index.
    """
    batch = images[None] if images.ndim == 3 else images
    with no_grad():
        logits = model(Tensor(np.asarray(batch, dtype=model.dtype)), Mode.EVAL).data
    labels = logits.argmax(axis=1)
    if images.ndim == 3:
        return labels[0], logits[0]
    return labels, logits
