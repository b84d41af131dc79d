"""Core raster types, PNG codecs, synthetic scenes and annotation corruption.

Rasters are plain numpy arrays with fixed conventions:

* image:     (H, W, 3) float64 in [0, 1]
* mask:      (H, W) uint8 in {0, 1}
* saliency:  (H, W) float64 in [0, 1]
* trimap:    (H, W) uint8 in {0, 1, 2}  (background / uncertain / salient)
* logvar:    (H, W) float64, unconstrained (log of the per-pixel variance)
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PilImage
from scipy.ndimage import maximum_filter, minimum_filter

TRIMAP_BACKGROUND = 0
TRIMAP_UNCERTAIN = 1
TRIMAP_SALIENT = 2

# gray levels used by the trimap codec
_TRIMAP_GRAY = np.array([0, 128, 255], dtype=np.uint8)


class CodecError(Exception):
    """A PNG file exists but is not in the supported 8-bit format."""


class RasterShapeError(ValueError):
    """An array does not satisfy the raster conventions above."""


def _open_png(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return PilImage.open(path)


def load_image(path) -> np.ndarray:
    """Load an 8-bit RGB PNG as a float image with values raw/255."""
    img = _open_png(path)
    if img.mode != "RGB":
        raise CodecError(
            f"{path}: expected 8-bit 3-channel PNG, got mode {img.mode!r}"
        )
    arr = np.asarray(img, dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def save_image(image: np.ndarray, path) -> None:
    image = validate_image(image)
    raw = np.rint(image * 255.0).astype(np.uint8)
    PilImage.fromarray(raw, mode="RGB").save(path)


def load_mask(path) -> np.ndarray:
    """Load a grayscale 8-bit PNG as binary: values >= 128 become 1."""
    img = _open_png(path)
    if img.mode != "L":
        raise CodecError(
            f"{path}: expected single-channel 8-bit PNG, got mode {img.mode!r}"
        )
    raw = np.asarray(img, dtype=np.uint8)
    return (raw >= 128).astype(np.uint8)


def save_mask(mask: np.ndarray, path) -> None:
    mask = validate_mask(mask)
    PilImage.fromarray(mask * np.uint8(255), mode="L").save(path)


def load_saliency(path) -> np.ndarray:
    """Load a grayscale 8-bit PNG as a real-valued map raw/255."""
    img = _open_png(path)
    if img.mode != "L":
        raise CodecError(
            f"{path}: expected single-channel 8-bit PNG, got mode {img.mode!r}"
        )
    return np.asarray(img, dtype=np.uint8).astype(np.float64) / 255.0


def save_saliency(saliency: np.ndarray, path) -> None:
    saliency = validate_saliency(saliency)
    raw = np.rint(saliency * 255.0).astype(np.uint8)
    PilImage.fromarray(raw, mode="L").save(path)


def encode_trimap(trimap: np.ndarray, path) -> None:
    """Write trimap labels {0,1,2} as gray values {0,128,255}."""
    trimap = validate_trimap(trimap)
    PilImage.fromarray(_TRIMAP_GRAY[trimap], mode="L").save(path)


def decode_trimap(path) -> np.ndarray:
    """Read a trimap PNG, bucketing gray into [0,64)->0, [64,192)->1, rest->2."""
    img = _open_png(path)
    if img.mode != "L":
        raise CodecError(
            f"{path}: expected single-channel 8-bit PNG, got mode {img.mode!r}"
        )
    raw = np.asarray(img, dtype=np.uint8)
    labels = np.ones_like(raw, dtype=np.uint8)
    labels[raw < 64] = TRIMAP_BACKGROUND
    labels[raw >= 192] = TRIMAP_SALIENT
    return labels


def validate_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise RasterShapeError(f"image must be (H, W, 3), got {image.shape}")
    if image.shape[0] < 8 or image.shape[1] < 8:
        raise RasterShapeError(f"image sides must be >= 8, got {image.shape}")
    if not np.isfinite(image).all():
        raise RasterShapeError("image contains non-finite values")
    if image.min() < 0.0 or image.max() > 1.0:
        raise RasterShapeError("image values must lie in [0, 1]")
    return image


def validate_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise RasterShapeError(f"mask must be 2-D, got shape {mask.shape}")
    uniq = np.unique(mask)
    if not np.isin(uniq, (0, 1)).all():
        raise RasterShapeError(f"mask values must be 0/1, got {uniq}")
    return mask.astype(np.uint8)


def validate_saliency(saliency: np.ndarray) -> np.ndarray:
    saliency = np.asarray(saliency, dtype=np.float64)
    if saliency.ndim != 2:
        raise RasterShapeError(f"saliency must be 2-D, got {saliency.shape}")
    if not np.isfinite(saliency).all():
        raise RasterShapeError("saliency contains non-finite values")
    if saliency.min() < 0.0 or saliency.max() > 1.0:
        raise RasterShapeError("saliency values must lie in [0, 1]")
    return saliency


def validate_trimap(trimap: np.ndarray) -> np.ndarray:
    trimap = np.asarray(trimap)
    if trimap.ndim != 2:
        raise RasterShapeError(f"trimap must be 2-D, got {trimap.shape}")
    uniq = np.unique(trimap)
    if not np.isin(uniq, (0, 1, 2)).all():
        raise RasterShapeError(f"trimap labels must be 0/1/2, got {uniq}")
    return trimap.astype(np.uint8)


@dataclass
class DatasetRecord:
    """One training/evaluation sample: image plus its annotation."""

    image: np.ndarray
    mask: np.ndarray
    identifier: str
    noisy_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise RasterShapeError(
                f"{self.identifier}: image {self.image.shape[:2]} and mask "
                f"{self.mask.shape} dimensions differ"
            )


# ---------------------------------------------------------------------------
# resizing helpers shared by the pipeline and the metrics
# ---------------------------------------------------------------------------


def resize_nearest(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize of a 2-D raster; preserves the value set.

    Uses source index floor(i * src / dst), so an integer upscale is exact
    block replication.
    """
    h, w = arr.shape[:2]
    th, tw = size
    rows = (np.arange(th) * h) // th
    cols = (np.arange(tw) * w) // tw
    return arr[np.ix_(rows, cols)]


def resize_bilinear(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an (H, W) or (H, W, C) float raster."""
    import torch
    import torch.nn.functional as F

    squeeze = arr.ndim == 2
    a = arr[:, :, None] if squeeze else arr
    t = torch.from_numpy(np.ascontiguousarray(a, dtype=np.float64))
    t = t.permute(2, 0, 1).unsqueeze(0)
    out = F.interpolate(t, size=size, mode="bilinear", align_corners=False)
    out = out.squeeze(0).permute(1, 2, 0).numpy()
    return out[:, :, 0] if squeeze else out


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------


def _star_polygon(rng, center, radius, n_vertices):
    """Star-convex polygon: boundary radius interpolated over vertex angles."""
    angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, n_vertices))
    radii = radius * rng.uniform(0.55, 1.0, n_vertices)
    return center, angles, radii


def _fill_star(shape, center, angles, radii):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    dy = yy - center[0]
    dx = xx - center[1]
    theta = np.arctan2(dy, dx) % (2.0 * np.pi)
    r = np.hypot(dy, dx)
    # periodic linear interpolation of boundary radius over angle
    ang = np.concatenate([angles, angles[:1] + 2.0 * np.pi])
    rad = np.concatenate([radii, radii[:1]])
    r_bound = np.interp(theta, ang, rad, period=2.0 * np.pi)
    return r <= r_bound


def _fill_ellipse(shape, center, axes, theta):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    dy = yy - center[0]
    dx = xx - center[1]
    c, s = np.cos(theta), np.sin(theta)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / axes[0]) ** 2 + (v / axes[1]) ** 2 <= 1.0


def _render_mask(rng, size, n_shapes):
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(n_shapes):
        center = rng.uniform(0.2 * size, 0.8 * size, 2)
        radius = rng.uniform(0.12 * size, 0.28 * size)
        if rng.random() < 0.5:
            axes = radius * rng.uniform(0.5, 1.0, 2)
            mask |= _fill_ellipse((size, size), center, axes, rng.uniform(0, np.pi))
        else:
            mask |= _fill_star(
                (size, size), *_star_polygon(rng, center, radius, rng.integers(5, 9))
            )
    return mask


def _low_frequency_field(rng, size, cells=8):
    coarse = rng.normal(0.0, 1.0, (cells + 1, cells + 1))
    return resize_bilinear(coarse, (size, size))


def gen_synthetic_scene(seed: int, size: int, n_shapes: int = 3):
    """Render a deterministic scene: contrasting blobs on a textured ground.

    Returns (image, mask). The foreground fraction is kept inside
    [0.05, 0.60] by redrawing shapes from the same stream, so the output is
    still a pure function of (seed, size, n_shapes).
    """
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    if n_shapes < 1:
        raise ValueError(f"n_shapes must be >= 1, got {n_shapes}")
    rng = np.random.default_rng([seed, size, n_shapes])

    for _ in range(64):
        mask = _render_mask(rng, size, n_shapes)
        frac = mask.mean()
        if 0.05 <= frac <= 0.60:
            break
    else:  # pragma: no cover - generator parameters keep this unreachable
        raise RuntimeError("could not render a mask with 5-60% foreground")

    bg_color = rng.uniform(0.05, 0.35, 3)
    fg_color = rng.uniform(0.60, 0.95, 3)
    image = np.empty((size, size, 3))
    image[:] = bg_color
    texture = 0.08 * _low_frequency_field(rng, size)
    image += texture[:, :, None] * ~mask[:, :, None]
    image[mask] = fg_color
    image += rng.normal(0.0, 0.05, image.shape)
    np.clip(image, 0.0, 1.0, out=image)
    return image, mask.astype(np.uint8)


# ---------------------------------------------------------------------------
# morphology and annotation corruption
# ---------------------------------------------------------------------------


def _check_kernel(kernel: int) -> int:
    kernel = int(kernel)
    if kernel < 3 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 3, got {kernel}")
    return kernel


def erode(mask: np.ndarray, kernel: int) -> np.ndarray:
    """Binary erosion with a square element and replicate border padding."""
    mask = validate_mask(mask)
    return minimum_filter(mask, size=_check_kernel(kernel), mode="nearest")


def dilate(mask: np.ndarray, kernel: int) -> np.ndarray:
    """Binary dilation with a square element and replicate border padding."""
    mask = validate_mask(mask)
    return maximum_filter(mask, size=_check_kernel(kernel), mode="nearest")


def corrupt_mask(mask: np.ndarray, kernel: int, mode: str, seed: int = 0) -> np.ndarray:
    """Corrupt an annotation at the object boundary by erosion or dilation.

    mode is "erode", "dilate", or "random" (an even coin on the two, drawn
    from seed). The deterministic modes ignore seed.
    """
    if mode == "random":
        rng = np.random.default_rng(seed)
        mode = "erode" if rng.random() < 0.5 else "dilate"
    if mode == "erode":
        return erode(mask, kernel)
    if mode == "dilate":
        return dilate(mask, kernel)
    raise ValueError(f"mode must be 'erode', 'dilate' or 'random', got {mode!r}")


# ---------------------------------------------------------------------------
# dataset directories: images/*.png + masks/*.png matched by stem
# ---------------------------------------------------------------------------


def list_pairs(data_dir) -> list[tuple[str, Path, Path]]:
    """Matched (stem, image_path, mask_path) triples, sorted by stem."""
    data_dir = Path(data_dir)
    img_dir = data_dir / "images"
    mask_dir = data_dir / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise FileNotFoundError(
            f"{data_dir} must contain images/ and masks/ subdirectories"
        )
    images = {p.stem: p for p in img_dir.glob("*.png")}
    masks = {p.stem: p for p in mask_dir.glob("*.png")}
    stems = sorted(images.keys() & masks.keys())
    return [(s, images[s], masks[s]) for s in stems]


def load_dataset(data_dir) -> list[DatasetRecord]:
    records = []
    for stem, img_path, mask_path in list_pairs(data_dir):
        records.append(
            DatasetRecord(
                image=load_image(img_path),
                mask=load_mask(mask_path),
                identifier=stem,
            )
        )
    if not records:
        raise FileNotFoundError(f"no matched image/mask pairs under {data_dir}")
    return records


def set_thread_cap() -> None:
    """Apply the DISENT_SOD_THREADS cap to torch's intra-op pool."""
    cap = os.environ.get("DISENT_SOD_THREADS")
    if cap:
        import torch

        torch.set_num_threads(max(1, int(cap)))
