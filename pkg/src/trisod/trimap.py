"""Trimap generation from masks and from predicted saliency maps.

A trimap splits the raster into definite background (0), an uncertain band
around object boundaries (1) and definite salient (2). Training targets are
built by eroding and dilating the binary ground truth with a square element
whose side is drawn from TRAIN_KERNELS.
"""

from __future__ import annotations

import numpy as np

from .rasters import (
    TRIMAP_SALIENT,
    TRIMAP_UNCERTAIN,
    dilate,
    erode,
    validate_mask,
    validate_saliency,
)

TRAIN_KERNELS = (5, 7, 9, 11, 13)


def trimap_from_mask(mask: np.ndarray, kernel: int) -> np.ndarray:
    """Label eroded mask 2, complement of dilated mask 0, the band between 1."""
    mask = validate_mask(mask)
    inner = erode(mask, kernel)
    outer = dilate(mask, kernel)
    trimap = np.zeros(mask.shape, dtype=np.uint8)
    trimap[outer == 1] = TRIMAP_UNCERTAIN
    trimap[inner == 1] = TRIMAP_SALIENT
    return trimap


def random_trimap_from_mask(mask: np.ndarray, seed: int) -> np.ndarray:
    """trimap_from_mask with the kernel drawn uniformly from TRAIN_KERNELS."""
    kernel = draw_kernel(seed)
    return trimap_from_mask(mask, kernel)


def draw_kernel(seed: int) -> int:
    rng = np.random.default_rng(seed)
    return int(rng.choice(TRAIN_KERNELS))


def trimap_from_saliency(
    saliency: np.ndarray, threshold: float, kernel: int
) -> np.ndarray:
    """Binarize a saliency map at threshold (>= is foreground), then band it."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    saliency = validate_saliency(saliency)
    mask = (saliency >= threshold).astype(np.uint8)
    return trimap_from_mask(mask, kernel)
