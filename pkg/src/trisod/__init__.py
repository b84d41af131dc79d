"""Two-stage salient object detection at desk scale.

A low-resolution classification stage predicts multi-level saliency maps
and a background/uncertain/salient trimap; a high-resolution refinement
stage with an aleatoric-uncertainty head sharpens the boundary band on
image tiles. Includes the full loss stack, tiled inference, boundary
evaluation metrics, training loops, and a noise-robustness ablation.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    checkpoint,
    cli,
    hrrn,
    losses,
    lrscn,
    metrics,
    rasters,
    tiling,
    training,
    trimap,
)
