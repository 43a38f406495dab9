"""Non-overlapping square tiling of images into P patches (row-major order)."""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError


def grid_side(patches: int) -> int:
    """Side length of the square patch grid; ``patches`` must be a perfect square."""
    side = math.isqrt(patches)
    if patches < 1 or side * side != patches:
        raise ValueError(f"Patch count must be a positive perfect square, got {patches}")
    return side


@dataclass(frozen=True, eq=False)
class PatchGrid:
    """``patches`` has shape ``P x ... x h x w``; ``source_shape`` is the tiled array's shape."""

    patches: np.ndarray
    grid: int
    source_shape: tuple[int, ...]

    @property
    def count(self) -> int:
        return self.grid * self.grid


def patchify(image: np.ndarray, patches: int) -> PatchGrid:
    """Tile the last two axes of ``image`` into a ``sqrt(P) x sqrt(P)`` grid."""
    g = grid_side(patches)
    height, width = image.shape[-2:]
    if height % g or width % g:
        raise ShapeError(f"{height}x{width} does not divide into a {g}x{g} patch grid")
    lead = image.shape[:-2]
    nlead = len(lead)
    ph, pw = height // g, width // g
    tiles = image.reshape(*lead, g, ph, g, pw)
    tiles = tiles.transpose(nlead, nlead + 2, *range(nlead), nlead + 1, nlead + 3)
    return PatchGrid(tiles.reshape(g * g, *lead, ph, pw), g, tuple(image.shape))


def departchify(grid: PatchGrid) -> np.ndarray:
    """Exact inverse of :func:`patchify`."""
    g = grid.grid
    count, *lead, ph, pw = grid.patches.shape
    if count != g * g:
        raise ShapeError(f"Expected {g * g} patches, got {count}")
    nlead = len(lead)
    tiles = grid.patches.reshape(g, g, *lead, ph, pw)
    tiles = tiles.transpose(*range(2, 2 + nlead), 0, 2 + nlead, 1, 3 + nlead)
    return tiles.reshape(*lead, g * ph, g * pw)


def split_patches(batch: np.ndarray, patches: int) -> np.ndarray:
    """``N x ... x H x W`` -> ``N x P x ... x h x w``."""
    return np.moveaxis(patchify(batch, patches).patches, 0, 1)


def merge_patches(batch_patches: np.ndarray) -> np.ndarray:
    """``N x P x ... x h x w`` -> ``N x ... x H x W``."""
    count = batch_patches.shape[1]
    tiles = np.moveaxis(batch_patches, 1, 0)
    g = grid_side(count)
    h, w = tiles.shape[-2:]
    source = (*tiles.shape[1:-2], g * h, g * w)
    return departchify(PatchGrid(tiles, g, source))
