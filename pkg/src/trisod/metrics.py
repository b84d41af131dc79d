"""Evaluation suite: MAE, F-measure, PR curves, boundary displacement and
edge-alignment scores with a Canny front end.

Boundary displacement averages, for each boundary set, the Euclidean
distance to the nearest pixel of the other set. The edge-alignment score
is 1 - 2*sum(gs*gy)/sum(gs^2 + gy^2) over binary Canny edge maps.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .rasters import (
    load_mask,
    load_saliency,
    resize_bilinear,
    validate_mask,
    validate_saliency,
)

FBETA_SQ = 0.3
PR_LEVELS = 256
CSV_HEADER = ["id", "mae", "f_beta", "f_beta_max", "bde", "b_mu"]
AGGREGATE_ID = "__mean__"


class EmptyBoundaryError(ValueError):
    """Boundary displacement is undefined when either boundary set is empty."""


def _check_pair(s, g):
    if s.shape != g.shape:
        raise ValueError(f"shapes differ: {s.shape} vs {g.shape}")


def mae(s: np.ndarray, g: np.ndarray) -> float:
    s = validate_saliency(s)
    g = validate_mask(g)
    _check_pair(s, g)
    return float(np.abs(s - g).mean())


@dataclass
class PrCurve:
    thresholds: np.ndarray  # k/255 for k = 0..255
    precision: np.ndarray
    recall: np.ndarray


def _binary_prf(pred: np.ndarray, g: np.ndarray):
    tp = float(np.logical_and(pred, g).sum())
    pp = float(pred.sum())
    gp = float(g.sum())
    precision = tp / pp if pp > 0 else 1.0
    recall = tp / gp
    return precision, recall


def _f_from_pr(precision: float, recall: float) -> float:
    denom = FBETA_SQ * precision + recall
    if denom == 0:
        return 0.0
    return (1.0 + FBETA_SQ) * precision * recall / denom


def pr_curve(s: np.ndarray, g: np.ndarray) -> PrCurve:
    """Precision/recall of (s >= k/255) for all 256 levels."""
    s = validate_saliency(s)
    g = validate_mask(g)
    _check_pair(s, g)
    if g.sum() == 0:
        raise ValueError("ground truth mask is empty")
    thresholds = np.arange(PR_LEVELS) / 255.0
    precision = np.empty(PR_LEVELS)
    recall = np.empty(PR_LEVELS)
    # one histogram pass instead of 256 thresholded scans
    bins = np.minimum((s * 255.0 + 1e-9).astype(np.int64), 255)
    tp_hist = np.bincount(bins[g == 1], minlength=256)
    pp_hist = np.bincount(bins.ravel(), minlength=256)
    tp_tail = np.cumsum(tp_hist[::-1])[::-1].astype(np.float64)
    pp_tail = np.cumsum(pp_hist[::-1])[::-1].astype(np.float64)
    gp = float(g.sum())
    for k in range(PR_LEVELS):
        tp, pp = tp_tail[k], pp_tail[k]
        precision[k] = tp / pp if pp > 0 else 1.0
        recall[k] = tp / gp
    return PrCurve(thresholds, precision, recall)


def f_beta(s: np.ndarray, g: np.ndarray, mode: str = "adaptive") -> float:
    """F-measure, either at the adaptive 2*mean threshold or maxed over 256."""
    s = validate_saliency(s)
    g = validate_mask(g)
    _check_pair(s, g)
    if g.sum() == 0:
        raise ValueError("ground truth mask is empty")
    if mode == "adaptive":
        thr = min(2.0 * float(s.mean()), 1.0 - 1e-6)
        return _f_from_pr(*_binary_prf(s >= thr, g))
    if mode == "max":
        curve = pr_curve(s, g)
        return max(
            _f_from_pr(p, r) for p, r in zip(curve.precision, curve.recall)
        )
    raise ValueError(f"mode must be 'adaptive' or 'max', got {mode!r}")


@dataclass
class BoundarySet:
    coords: np.ndarray  # (N, 2) of (row, col)

    @property
    def count(self) -> int:
        return len(self.coords)


def extract_boundary(mask: np.ndarray) -> BoundarySet:
    """Foreground pixels with a 4-neighbor in background (borders count as 0)."""
    mask = validate_mask(mask).astype(bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    boundary = mask & ~interior
    return BoundarySet(np.argwhere(boundary))


def bde(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    """Symmetric mean nearest-boundary displacement in pixels.

    Uses exact Euclidean distance transforms; both boundary sets must be
    nonempty.
    """
    bx = extract_boundary(pred_mask)
    by = extract_boundary(gt_mask)
    if bx.count == 0 or by.count == 0:
        raise EmptyBoundaryError("boundary displacement needs nonempty boundaries")
    shape = np.asarray(pred_mask).shape

    def mean_min_dist(source: BoundarySet, target: BoundarySet) -> float:
        target_img = np.ones(shape, dtype=bool)
        target_img[tuple(target.coords.T)] = False
        dist = ndimage.distance_transform_edt(target_img)
        return float(dist[tuple(source.coords.T)].mean())

    return 0.5 * mean_min_dist(bx, by) + 0.5 * mean_min_dist(by, bx)


# ---------------------------------------------------------------------------
# Canny edges and the edge-alignment score
# ---------------------------------------------------------------------------


def _gaussian_kernel(size: int = 5, sigma: float = 1.4) -> np.ndarray:
    ax = np.arange(size) - size // 2
    xx, yy = np.meshgrid(ax, ax)
    k = np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2))
    return k / k.sum()


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T


def canny_edges(
    raster: np.ndarray, low: float = 0.1, high: float = 0.2
) -> np.ndarray:
    """Classic Canny: blur, Sobel, non-maximum suppression, hysteresis.

    Thresholds are relative to the maximum gradient magnitude; the result
    is a binary edge map.
    """
    x = np.asarray(raster, dtype=np.float64)
    x = ndimage.convolve(x, _gaussian_kernel(), mode="nearest")
    gx = ndimage.convolve(x, _SOBEL_X, mode="nearest")
    gy = ndimage.convolve(x, _SOBEL_Y, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 1e-12:  # constant raster up to float rounding
        return np.zeros_like(mag, dtype=np.uint8)

    # quantize gradient direction to 0/45/90/135 degrees
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = ((angle + 22.5) // 45).astype(int) % 4
    offsets = {0: (0, 1), 1: (-1, 1), 2: (-1, 0), 3: (-1, -1)}
    padded = np.pad(mag, 1, constant_values=0.0)
    keep = np.zeros_like(mag, dtype=bool)
    for s, (dy, dx) in offsets.items():
        ahead = padded[1 + dy : padded.shape[0] - 1 + dy, 1 + dx : padded.shape[1] - 1 + dx]
        behind = padded[1 - dy : padded.shape[0] - 1 - dy, 1 - dx : padded.shape[1] - 1 - dx]
        sel = sector == s
        keep[sel] = (mag[sel] >= ahead[sel]) & (mag[sel] >= behind[sel])

    strong = keep & (mag >= high * peak)
    weak = keep & (mag >= low * peak)
    # hysteresis: keep weak components touching a strong pixel (8-connected)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return np.zeros_like(mag, dtype=np.uint8)
    strong_labels = np.unique(labels[strong])
    strong_labels = strong_labels[strong_labels > 0]
    return np.isin(labels, strong_labels).astype(np.uint8)


def b_mu(s: np.ndarray, g: np.ndarray) -> float:
    """Edge-map misalignment in [0, 1]; 0 for identical, 1 for disjoint."""
    gs = canny_edges(np.asarray(s, dtype=np.float64))
    gy = canny_edges(np.asarray(g, dtype=np.float64))
    return b_mu_from_edges(gs, gy)


def b_mu_from_edges(gs: np.ndarray, gy: np.ndarray) -> float:
    gs = np.asarray(gs, dtype=np.float64)
    gy = np.asarray(gy, dtype=np.float64)
    denom = float((gs**2 + gy**2).sum())
    if denom == 0:
        return 0.0
    return 1.0 - 2.0 * float((gs * gy).sum()) / denom


# ---------------------------------------------------------------------------
# directory-level evaluation
# ---------------------------------------------------------------------------


def _metric_row(stem: str, s: np.ndarray, g: np.ndarray) -> dict:
    row = {
        "id": stem,
        "mae": mae(s, g),
        "f_beta": f_beta(s, g, "adaptive"),
        "f_beta_max": f_beta(s, g, "max"),
        "b_mu": b_mu(s, g),
    }
    try:
        row["bde"] = bde((s >= 0.5).astype(np.uint8), g)
    except EmptyBoundaryError:
        warnings.warn(f"{stem}: empty boundary, recording bde as NaN")
        row["bde"] = float("nan")
    return row


def evaluate_directory(
    pred_dir,
    gt_dir,
    out_csv=None,
    pr_out=None,
    jsonl_out=None,
) -> list[dict]:
    """Per-image metrics plus an aggregate-mean row over matched stems.

    Predictions are bilinearly resized to the ground-truth size when the
    dimensions differ. Unmatched stems are reported with a warning, not an
    error. A NaN bde (blank prediction or mask) is excluded from the
    aggregate.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = {p.stem: p for p in sorted(pred_dir.glob("*.png"))}
    gts = {p.stem: p for p in sorted(gt_dir.glob("*.png"))}
    stems = sorted(preds.keys() & gts.keys())
    for missing in sorted(preds.keys() ^ gts.keys()):
        warnings.warn(f"unmatched stem skipped: {missing}")
    if not stems:
        raise FileNotFoundError(f"no matched stems between {pred_dir} and {gt_dir}")

    rows = []
    pr_acc = np.zeros((2, PR_LEVELS))
    for stem in stems:
        s = load_saliency(preds[stem])
        g = load_mask(gts[stem])
        if s.shape != g.shape:
            s = np.clip(resize_bilinear(s, g.shape), 0.0, 1.0)
        rows.append(_metric_row(stem, s, g))
        if pr_out is not None:
            curve = pr_curve(s, g)
            pr_acc[0] += curve.precision
            pr_acc[1] += curve.recall

    agg = {"id": AGGREGATE_ID}
    for key in CSV_HEADER[1:]:
        vals = np.array([r[key] for r in rows])
        agg[key] = float(np.nanmean(vals)) if np.isfinite(vals).any() else float("nan")
    rows.append(agg)

    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_HEADER)
            writer.writeheader()
            writer.writerows(rows)
    if jsonl_out is not None:
        with open(jsonl_out, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    if pr_out is not None:
        n = len(stems)
        with open(pr_out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "precision", "recall"])
            for k in range(PR_LEVELS):
                writer.writerow(
                    [f"{k / 255.0:.8f}", f"{pr_acc[0][k] / n:.8f}", f"{pr_acc[1][k] / n:.8f}"]
                )
    return rows
