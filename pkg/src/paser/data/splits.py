from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from ..tensorkit import RngStream
from .sample import SegSample

SPLIT_NAMES = ("pt", "rl", "ft", "val", "test")


@dataclass(frozen=True, eq=False)
class SplitSet:
    """Disjoint pretraining, RL, fine-tuning, validation and test subsets."""

    pt: list[SegSample]
    rl: list[SegSample]
    ft: list[SegSample]
    val: list[SegSample]
    test: list[SegSample]

    def items(self) -> list[tuple[str, list[SegSample]]]:
        return [(name, getattr(self, name)) for name in SPLIT_NAMES]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(part) for _, part in self.items())


def allocate(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder rounding of ``n * ratios``; ties go to the earlier split."""
    quotas = np.asarray(ratios, dtype=np.float64) * n
    sizes = np.floor(quotas + 1e-9).astype(int)
    remainder = n - int(sizes.sum())
    fractions = quotas - sizes
    order = sorted(range(len(ratios)), key=lambda i: (-round(fractions[i], 9), i))
    for i in order[:remainder]:
        sizes[i] += 1
    return sizes.tolist()


def split_dataset(samples: Sequence[SegSample], ratios: Sequence[float], seed: int) -> SplitSet:
    """Seeded shuffle followed by a contiguous partition.

    ``ratios`` lists (pt, rl, ft[, val[, test]]); omitted trailing splits are empty.
    """
    if not 1 <= len(ratios) <= len(SPLIT_NAMES):
        raise ValueError(f"Expected 1-{len(SPLIT_NAMES)} split ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-6:
        raise ValueError(f"Split ratios must be non-negative and sum to 1, got {list(ratios)}")
    padded = [*ratios, *([0.0] * (len(SPLIT_NAMES) - len(ratios)))]
    sizes = allocate(len(samples), padded)

    order = RngStream(seed).split("split").permutation(len(samples))
    shuffled = [samples[i] for i in order]
    parts = []
    start = 0
    for size in sizes:
        parts.append(shuffled[start : start + size])
        start += size
    return SplitSet(*parts)
