"""Blur kernels and salt-and-pepper corruption."""

import logging
from enum import StrEnum

import numpy as np
from scipy import ndimage

from ..tensorkit import RngStream
from .sample import SegSample

logger = logging.getLogger(__name__)


class BlurType(StrEnum):
    GAUSS_R1 = "gauss_r1"
    GAUSS_R2 = "gauss_r2"
    BOX = "box"

    @classmethod
    def parse(cls, value: str) -> "BlurType":
        try:
            return cls(value)
        except ValueError as e:
            choices = ", ".join(member.value for member in cls)
            raise ValueError(f"Unknown noise type '{value}' (choose from {choices})") from e


def gaussian_kernel(radius: float) -> np.ndarray:
    """Normalised discrete Gaussian with sigma = radius / 1.5, truncated at 3 sigma."""
    sigma = radius / 1.5
    half = int(np.ceil(3 * sigma))
    x = np.arange(-half, half + 1, dtype=np.float64)
    line = np.exp(-(x**2) / (2 * sigma**2))
    kernel = np.outer(line, line)
    return kernel / kernel.sum()


def box_kernel() -> np.ndarray:
    return np.full((3, 3), 1.0 / 9.0)


def blur_kernel(noise_type: str | BlurType) -> np.ndarray:
    match BlurType.parse(noise_type):
        case BlurType.GAUSS_R1:
            return gaussian_kernel(1.0)
        case BlurType.GAUSS_R2:
            return gaussian_kernel(2.0)
        case BlurType.BOX:
            return box_kernel()


def blur(image: np.ndarray, noise_type: str | BlurType) -> np.ndarray:
    """Blur every channel of an ``H x W`` or ``C x H x W`` image with zero padding."""
    kernel = blur_kernel(noise_type)
    if image.ndim == 2:
        return ndimage.convolve(image, kernel, mode="constant", cval=0.0)
    return np.stack(
        [ndimage.convolve(channel, kernel, mode="constant", cval=0.0) for channel in image]
    )


def inject_salt_pepper(image: np.ndarray, rate: float, rng: RngStream) -> np.ndarray:
    """Set ``round(rate * H * W)`` distinct pixels to 0 or 1 (all channels alike)."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"Salt-and-pepper rate must be in [0, 1], got {rate}")
    out = np.array(image, copy=True)
    height, width = out.shape[-2:]
    count = int(np.floor(rate * height * width + 0.5))
    if count == 0:
        return out
    flat = rng.choice(height * width, count, replace=False)
    values = rng.integers(0, 2, count).astype(out.dtype)
    rows, cols = np.unravel_index(flat, (height, width))
    out[..., rows, cols] = values
    return out


def corrupt_samples(samples: list[SegSample], rate: float, rng: RngStream) -> list[SegSample]:
    """Salt-and-pepper copies of ``samples``; sample ``i`` uses ``rng.split(i)``."""
    logger.debug(f"Injecting salt-and-pepper noise at rate {rate} into {len(samples)} images")
    return [
        s.with_image(inject_salt_pepper(s.image, rate, rng.split(i)), noise="salt-pepper")
        for i, s in enumerate(samples)
    ]
