from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError


@dataclass(frozen=True, eq=False)
class SegSample:
    """One image (C x H x W, values in [0, 1]) with its H x W integer label map."""

    image: np.ndarray
    labels: np.ndarray
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.image.ndim != 3 or self.labels.ndim != 2:
            raise ShapeError(
                f"SegSample needs a C x H x W image and H x W labels, got "
                f"{self.image.shape} and {self.labels.shape}"
            )
        if self.image.shape[1:] != self.labels.shape:
            raise ShapeError(
                f"Image {self.image.shape} and labels {self.labels.shape} differ spatially"
            )

    @property
    def noise(self) -> str:
        return self.meta.get("noise", "clean")

    def with_image(self, image: np.ndarray, **meta: str) -> "SegSample":
        return SegSample(image=image, labels=self.labels, meta={**self.meta, **meta})


def stack_images(samples: list[SegSample]) -> np.ndarray:
    return np.stack([s.image for s in samples])


def stack_labels(samples: list[SegSample]) -> np.ndarray:
    return np.stack([s.labels for s in samples]).astype(np.int64)
