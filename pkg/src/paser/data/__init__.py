"""Synthetic data generation, noise injection, patchification, splits and file formats."""

from .container import read_dataset, write_dataset
from .idx import read_idx
from .noise import BlurType, blur, corrupt_samples, inject_salt_pepper
from .patches import PatchGrid, departchify, grid_side, merge_patches, patchify, split_patches
from .sample import SegSample, stack_images, stack_labels
from .splits import SplitSet, split_dataset
from .synthetic import gen_blurred_glyphs, gen_glyph_mix, gen_phase_texture, load_idx_glyphs

__all__ = [
    "BlurType",
    "PatchGrid",
    "SegSample",
    "SplitSet",
    "blur",
    "corrupt_samples",
    "departchify",
    "gen_blurred_glyphs",
    "gen_glyph_mix",
    "gen_phase_texture",
    "grid_side",
    "inject_salt_pepper",
    "load_idx_glyphs",
    "merge_patches",
    "patchify",
    "read_dataset",
    "read_idx",
    "split_dataset",
    "split_patches",
    "stack_images",
    "stack_labels",
    "write_dataset",
]
