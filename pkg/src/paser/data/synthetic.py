"""Synthetic datasets: 3-phase material textures and blurred glyph masks.

All generators are deterministic in ``seed``; sample ``i`` draws from its own derived stream
so datasets can be generated in any order or in parallel.
"""

import logging
from collections.abc import Sequence

import numpy as np
from scipy import ndimage

from ..tensorkit import RngStream
from .idx import read_idx
from .noise import BlurType, blur
from .sample import SegSample

logger = logging.getLogger(__name__)

PHASE_TEXTURE = "phase-texture"
GLYPHS = "glyphs"


def validate_balance(class_balance: Sequence[float]) -> np.ndarray:
    balance = np.asarray(class_balance, dtype=np.float64)
    if balance.ndim != 1 or balance.size < 2:
        raise ValueError(f"Class balance needs at least two entries, got {class_balance}")
    if np.any(balance < 0) or abs(balance.sum() - 1.0) > 1e-6:
        raise ValueError(f"Class balance must be a probability partition, got {class_balance}")
    return balance


def gen_phase_texture(
    n: int,
    seed: int,
    class_balance: Sequence[float] = (0.2, 0.2, 0.6),
    size: int = 64,
    smoothness: float = 3.0,
    noise_std: float = 0.08,
) -> list[SegSample]:
    """Label maps from a thresholded smoothed random field, rendered to noisy grayscale.

    Thresholds are the field's own quantiles, so every image matches ``class_balance`` up to
    a pixel. Class k renders at an evenly spaced gray level, then the rendering is softened
    and spatially correlated noise is added.
    """
    if n <= 0:
        raise ValueError(f"Number of samples must be positive, got {n}")
    balance = validate_balance(class_balance)
    levels = np.linspace(0.15, 0.85, balance.size)
    cut_points = np.cumsum(balance)[:-1]

    root = RngStream(seed).split(PHASE_TEXTURE)
    samples = []
    for i in range(n):
        rng = root.split(i)
        field = ndimage.gaussian_filter(rng.normal((size, size)), smoothness, mode="wrap")
        labels = np.searchsorted(np.quantile(field, cut_points), field, side="right")

        grain = ndimage.gaussian_filter(rng.normal((size, size)), 1.0, mode="wrap")
        grain *= noise_std / max(float(grain.std()), 1e-12)
        image = ndimage.gaussian_filter(levels[labels], 0.7, mode="nearest") + grain
        samples.append(
            SegSample(
                image=np.clip(image, 0.0, 1.0).astype(np.float32)[None],
                labels=labels.astype(np.uint8),
                meta={"generator": PHASE_TEXTURE, "noise": "clean"},
            )
        )
    return samples


def _segment_distance(
    rows: np.ndarray, cols: np.ndarray, start: np.ndarray, end: np.ndarray
) -> np.ndarray:
    delta = end - start
    length2 = float(delta @ delta)
    if length2 == 0.0:
        t = np.zeros_like(rows)
    else:
        t = ((rows - start[0]) * delta[0] + (cols - start[1]) * delta[1]) / length2
        t = np.clip(t, 0.0, 1.0)
    return np.hypot(rows - (start[0] + t * delta[0]), cols - (start[1] + t * delta[1]))


def draw_glyph(
    rng: RngStream, size: int = 32, min_fraction: float = 0.05, max_fraction: float = 0.5
) -> np.ndarray:
    """Boolean mask of 2-4 thick random strokes covering (min, max) of the canvas."""
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    margin = size / 8
    for attempt in range(1000):
        stream = rng.split(attempt)
        mask = np.zeros((size, size), dtype=bool)
        for stroke in range(int(stream.integers(2, 5))):
            points = stream.split(stroke).random(5)
            start = margin + points[:2] * (size - 2 * margin)
            end = margin + points[2:4] * (size - 2 * margin)
            thickness = 1.0 + 1.5 * points[4]
            mask |= _segment_distance(rows, cols, start, end) <= thickness
        if min_fraction < mask.mean() < max_fraction:
            return mask
    raise RuntimeError(f"Could not draw a glyph within ({min_fraction}, {max_fraction})")


def gen_blurred_glyphs(
    n: int, noise_type: str | BlurType, seed: int, size: int = 32
) -> list[SegSample]:
    """Binary glyph masks (K=2) blurred by ``noise_type``; ground truth is the sharp mask."""
    if n <= 0:
        raise ValueError(f"Number of samples must be positive, got {n}")
    noise = BlurType.parse(noise_type)
    root = RngStream(seed).split(GLYPHS)
    samples = []
    for i in range(n):
        mask = draw_glyph(root.split(i), size)
        samples.append(
            SegSample(
                image=blur(mask.astype(np.float32), noise)[None].astype(np.float32),
                labels=mask.astype(np.uint8),
                meta={"generator": GLYPHS, "noise": noise.value},
            )
        )
    return samples


def gen_glyph_mix(
    n: int,
    seed: int,
    size: int = 32,
    noise_types: Sequence[str] = tuple(BlurType),
) -> list[SegSample]:
    """Equal shares of each blur type, interleaved so any prefix stays balanced."""
    if n <= 0:
        raise ValueError(f"Number of samples must be positive, got {n}")
    kinds = [BlurType.parse(t) for t in noise_types]
    root = RngStream(seed).split(f"{GLYPHS}-mix")
    samples = []
    for i in range(n):
        noise = kinds[i % len(kinds)]
        mask = draw_glyph(root.split(i), size)
        samples.append(
            SegSample(
                image=blur(mask.astype(np.float32), noise)[None].astype(np.float32),
                labels=mask.astype(np.uint8),
                meta={"generator": f"{GLYPHS}-mix", "noise": noise.value},
            )
        )
    return samples


def load_idx_glyphs(
    path: str, noise_type: str | BlurType, limit: int | None = None, canvas: int = 32
) -> list[SegSample]:
    """Real MNIST digits from an IDX image file as blurred foreground masks.

    Digits are zero-padded (centred) to ``canvas`` and thresholded at 0.5.
    """
    noise = BlurType.parse(noise_type)
    digits = read_idx(path)
    if digits.ndim != 3:
        raise ValueError(f"Expected an IDX image file, got array of shape {digits.shape}")
    if limit is not None:
        digits = digits[:limit]
    pad_h = canvas - digits.shape[1]
    pad_w = canvas - digits.shape[2]
    if pad_h < 0 or pad_w < 0:
        raise ValueError(f"Digits {digits.shape[1:]} do not fit a {canvas} canvas")
    padded = np.pad(
        digits, ((0, 0), (pad_h // 2, pad_h - pad_h // 2), (pad_w // 2, pad_w - pad_w // 2))
    )
    logger.info(f"Loaded {len(padded)} digits from {path}")
    samples = []
    for digit in padded:
        mask = digit > 0.5
        samples.append(
            SegSample(
                image=blur(mask.astype(np.float32), noise)[None].astype(np.float32),
                labels=mask.astype(np.uint8),
                meta={"generator": "idx", "noise": noise.value},
            )
        )
    return samples
