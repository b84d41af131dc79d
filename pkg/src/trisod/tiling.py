"""High-resolution inference: canonical resize, 2x2 split, refine, stitch.

The image and trimap are resized to a canonical square, cut into four
disjoint quadrant tiles, refined tile by tile, and placed back without
blending; the stitched map is finally resized to the original resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hrrn as hrrn_mod
from .lrscn import Lrscn, lrscn_forward, predict_trimap
from .rasters import resize_bilinear, resize_nearest, validate_trimap

QUADRANTS = ("tl", "tr", "bl", "br")


@dataclass
class TileLayout:
    canonical_size: int = 256
    original_size: tuple[int, int] | None = None
    network_depth: int = 4

    def __post_init__(self):
        if self.canonical_size % 2:
            raise ValueError(f"canonical size must be even, got {self.canonical_size}")
        if self.tile_size % 2**self.network_depth:
            raise ValueError(
                f"tile size {self.tile_size} must be divisible by "
                f"2^{self.network_depth}"
            )

    @property
    def tile_size(self) -> int:
        return self.canonical_size // 2

    def slices(self):
        t = self.tile_size
        return [
            (slice(0, t), slice(0, t)),
            (slice(0, t), slice(t, 2 * t)),
            (slice(t, 2 * t), slice(0, t)),
            (slice(t, 2 * t), slice(t, 2 * t)),
        ]


def prepare(image: np.ndarray, trimap: np.ndarray, layout: TileLayout):
    """Resize to canonical (bilinear image, nearest trimap), slice quadrants.

    Returns four (tile_image, tile_trimap) pairs in TL, TR, BL, BR order.
    """
    if min(image.shape[:2]) < 8 or min(trimap.shape) < 8:
        raise ValueError("inputs must be at least 8 pixels on each side")
    c = layout.canonical_size
    img_c = np.clip(resize_bilinear(image, (c, c)), 0.0, 1.0)
    tri_c = resize_nearest(validate_trimap(trimap), (c, c))
    return [(img_c[sy, sx], tri_c[sy, sx]) for sy, sx in layout.slices()]


def stitch(tiles, layout: TileLayout, original_size=None) -> np.ndarray:
    """Place four quadrant tiles back onto the canonical canvas.

    Tiles are disjoint, so no blending happens. If original_size (or the
    layout's) is given, the canvas is bilinearly resized to it.
    """
    if len(tiles) != 4:
        raise ValueError(f"expected 4 tiles, got {len(tiles)}")
    t = layout.tile_size
    canvas = np.empty((layout.canonical_size, layout.canonical_size), dtype=np.float64)
    for tile, (sy, sx) in zip(tiles, layout.slices()):
        if tile.shape != (t, t):
            raise ValueError(f"tile shape {tile.shape} does not match {(t, t)}")
        canvas[sy, sx] = tile
    target = original_size or layout.original_size
    if target is not None and tuple(target) != canvas.shape:
        canvas = np.clip(resize_bilinear(canvas, tuple(target)), 0.0, 1.0)
    return canvas


def seam_gradient_ratio(canvas: np.ndarray) -> float:
    """Mean |gradient| across the two stitch seams over the mean elsewhere.

    A diagnostic for stitching artifacts; values near 1 mean the seams are
    no sharper than the rest of the map.
    """
    gy = np.abs(np.diff(canvas, axis=0))
    gx = np.abs(np.diff(canvas, axis=1))
    mid = canvas.shape[0] // 2
    seam = np.concatenate([gy[mid - 1, :], gx[:, mid - 1]])
    inland = np.concatenate(
        [np.delete(gy, mid - 1, axis=0).ravel(), np.delete(gx, mid - 1, axis=1).ravel()]
    )
    return float(seam.mean() / max(inland.mean(), 1e-12))


@dataclass
class PipelineResult:
    saliency: np.ndarray  # at the original resolution
    saliency_canonical: np.ndarray
    logvar_canonical: np.ndarray
    trimap_canonical: np.ndarray
    coarse_saliency: np.ndarray  # the first stage's finest map


def run_pipeline_detailed(
    image: np.ndarray, lrscn: Lrscn, hrrn_model, layout: TileLayout | None = None
) -> PipelineResult:
    layout = layout or TileLayout()
    original = image.shape[:2]
    size = lrscn.config.input_size
    low = np.clip(resize_bilinear(image, (size, size)), 0.0, 1.0)
    coarse = lrscn_forward(lrscn, low)
    trimap = predict_trimap(coarse, (layout.canonical_size, layout.canonical_size))

    tiles = prepare(image, trimap, layout)
    batch = np.stack([hrrn_mod.hrrn_input(img, tri) for img, tri in tiles])
    refined = hrrn_mod.hrrn_forward_batch(hrrn_model, batch)
    sal_c = stitch(list(refined.saliency), layout)
    logvar_c = np.empty_like(sal_c)
    for tile, (sy, sx) in zip(refined.logvar, layout.slices()):
        logvar_c[sy, sx] = tile
    saliency = sal_c
    if tuple(original) != sal_c.shape:
        saliency = np.clip(resize_bilinear(sal_c, tuple(original)), 0.0, 1.0)
    return PipelineResult(
        saliency=saliency,
        saliency_canonical=sal_c,
        logvar_canonical=logvar_c,
        trimap_canonical=trimap,
        coarse_saliency=coarse.refined_saliency,
    )


def run_pipeline(
    image: np.ndarray, lrscn: Lrscn, hrrn_model, layout: TileLayout | None = None
) -> np.ndarray:
    """Full two-stage inference; returns saliency at the input resolution."""
    return run_pipeline_detailed(image, lrscn, hrrn_model, layout).saliency
