"""Named, splittable random streams.

Every stochastic operation in paser draws from an explicitly passed ``RngStream``. Streams are
backed by numpy's counter-based Philox bit generator and split by *name*: a child stream
depends only on the root seed and the path of names leading to it, never on how many numbers
the parent has already produced.
"""

import zlib

import numpy as np


def _key(name: str | int) -> int:
    if isinstance(name, int):
        if name < 0:
            raise ValueError(f"Stream index must be non-negative, got {name}")
        return name
    return zlib.crc32(name.encode("utf-8"))


class RngStream:
    """A reproducible random stream identified by (seed, path)."""

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if seed < 0:
            raise ValueError(f"Seed must be non-negative, got {seed}")
        self.seed = seed
        self.path = path
        sequence = np.random.SeedSequence(seed, spawn_key=path)
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def split(self, name: str | int) -> "RngStream":
        """Derive an independent child stream."""
        return RngStream(self.seed, (*self.path, _key(name)))

    def random(self, size: int | tuple[int, ...] | None = None) -> np.ndarray:
        return self.generator.random(size)

    def normal(self, size: int | tuple[int, ...], scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size)

    def integers(
        self, low: int, high: int, size: int | tuple[int, ...] | None = None
    ) -> np.ndarray:
        return self.generator.integers(low, high, size)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def __repr__(self) -> str:
        return f"<RngStream(seed={self.seed}, path={self.path})>"
