"""Training objectives for both stages, plus a finite-difference checker.

All losses are means over contributing pixels, reduced in row-major order,
and come back as a LossValue carrying both the float and the torch scalar
(so training code can backpropagate through `.tensor`). Inputs may be numpy
arrays or torch tensors; tensors keep their autograd graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .rasters import TRIMAP_UNCERTAIN, resize_nearest

BCE_CLAMP = 1e-7
FMEASURE_BETA_SQ = 0.3
FMEASURE_EPS = 1e-7
LEVEL_WEIGHTS = (1.0, 0.5, 0.25, 0.125)


@dataclass
class LossValue:
    """A scalar loss plus the number of pixels that contributed to it."""

    value: float
    pixel_count: int
    tensor: torch.Tensor = field(repr=False, default=None)

    def __post_init__(self):
        if self.tensor is None:
            self.tensor = torch.tensor(float(self.value))
        if not np.isfinite(self.value):
            raise FloatingPointError(f"non-finite loss value {self.value}")


@dataclass
class SsimConfig:
    """Sliding-window setup for the region similarity loss.

    Defaults follow the canonical structural-similarity constants for unit
    dynamic range; windows tile the raster (stride = window) and partial
    edge windows are dropped.
    """

    window: int = 11
    stride: int | None = None
    c1: float = 1e-4
    c2: float = 9e-4

    def __post_init__(self):
        if self.stride is None:
            self.stride = self.window
        if self.window < 2:
            raise ValueError(f"window must be >= 2, got {self.window}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("c1 and c2 must be positive")

    @staticmethod
    def fitted(height: int, width: int) -> "SsimConfig":
        """Default config with the window shrunk to fit a small raster."""
        return SsimConfig(window=min(11, height, width))


def _as_tensor(x, dtype=None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    t = torch.as_tensor(np.asarray(x))
    if dtype is not None:
        t = t.to(dtype)
    elif not t.is_floating_point():
        t = t.double()
    return t


def _check_same_shape(a, b, what="inputs"):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"{what} must share a shape: {tuple(a.shape)} vs {tuple(b.shape)}")


def _finish(tensor: torch.Tensor, pixel_count: int) -> LossValue:
    return LossValue(value=float(tensor.detach()), pixel_count=int(pixel_count), tensor=tensor)


# ---------------------------------------------------------------------------
# batched cores; public wrappers below
# ---------------------------------------------------------------------------


def bce_core(s: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    s = s.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
    return -(g * torch.log(s) + (1.0 - g) * torch.log(1.0 - s)).mean()


def ssim_windows(x: torch.Tensor, window: int, stride: int) -> torch.Tensor:
    """(..., nH, nW, window*window) view of tiled windows, edges dropped."""
    if x.shape[-2] < window or x.shape[-1] < window:
        raise ValueError(
            f"raster {tuple(x.shape[-2:])} is smaller than the {window}-pixel window"
        )
    wins = x.unfold(-2, window, stride).unfold(-2, window, stride)
    return wins.reshape(*wins.shape[:-2], window * window)


def ssim_core(s: torch.Tensor, g: torch.Tensor, cfg: SsimConfig) -> torch.Tensor:
    ws = ssim_windows(s, cfg.window, cfg.stride)
    wg = ssim_windows(g, cfg.window, cfg.stride)
    mu_s = ws.mean(-1)
    mu_g = wg.mean(-1)
    var_s = ((ws - mu_s.unsqueeze(-1)) ** 2).mean(-1)
    var_g = ((wg - mu_g.unsqueeze(-1)) ** 2).mean(-1)
    cov = ((ws - mu_s.unsqueeze(-1)) * (wg - mu_g.unsqueeze(-1))).mean(-1)
    ssd = ((2 * mu_s * mu_g + cfg.c1) * (2 * cov + cfg.c2)) / (
        (mu_s**2 + mu_g**2 + cfg.c1) * (var_s + var_g + cfg.c2)
    )
    return 1.0 - ssd.mean()


def fmeasure_core(s: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """1 - F_beta with per-sample precision/recall over the last two dims.

    The zero-prediction/zero-truth corner (precision = recall = 0) takes
    F = 0; the clamp floor must stay well above sqrt(float64 tiny) or the
    quotient rule underflows in backward.
    """
    tp = (s * g).sum((-2, -1))
    precision = tp / (s.sum((-2, -1)) + FMEASURE_EPS)
    recall = tp / (g.sum((-2, -1)) + FMEASURE_EPS)
    denom = FMEASURE_BETA_SQ * precision + recall
    f = (1.0 + FMEASURE_BETA_SQ) * precision * recall / denom.clamp_min(1e-12)
    return 1.0 - f.mean()


def trimap_ce_core(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """logits (..., 3, H, W) against integer labels (..., H, W)."""
    logp = torch.log_softmax(logits, dim=-3)
    picked = torch.gather(logp, -3, labels.long().unsqueeze(-3)).squeeze(-3)
    return -picked.mean()


def masked_l1_core(s, g, keep) -> tuple[torch.Tensor, int]:
    n = int(keep.sum())
    if n == 0:
        return torch.zeros((), dtype=s.dtype), 0
    diff = (s - g).abs()
    return (diff * keep).sum() / n, n


def uncertainty_core(s, g, logvar, keep) -> tuple[torch.Tensor, int]:
    n = int(keep.sum())
    if n == 0:
        return torch.zeros((), dtype=s.dtype), 0
    r = (s - g) ** 2
    per_pixel = 0.5 * r * torch.exp(-logvar) + 0.5 * logvar
    return (per_pixel * keep).sum() / n, n


# ---------------------------------------------------------------------------
# public single-raster losses
# ---------------------------------------------------------------------------


def bce_pixel_loss(s, g) -> LossValue:
    """Mean binary cross-entropy with predictions clamped away from {0, 1}."""
    s = _as_tensor(s)
    g = _as_tensor(g, s.dtype)
    _check_same_shape(s, g)
    return _finish(bce_core(s, g), s.numel())


def ssim_region_loss(s, g, cfg: SsimConfig | None = None) -> LossValue:
    """1 minus the mean windowed structural similarity."""
    cfg = cfg or SsimConfig()
    s = _as_tensor(s)
    g = _as_tensor(g, s.dtype)
    _check_same_shape(s, g)
    n_h = max(0, (s.shape[-2] - cfg.window) // cfg.stride + 1)
    n_w = max(0, (s.shape[-1] - cfg.window) // cfg.stride + 1)
    return _finish(ssim_core(s, g, cfg), n_h * n_w * cfg.window**2)


def fmeasure_loss(s, g) -> LossValue:
    s = _as_tensor(s)
    g = _as_tensor(g, s.dtype)
    _check_same_shape(s, g)
    return _finish(fmeasure_core(s, g), s.numel())


def saliency_loss(levels, ssim_cfg: SsimConfig | None = None) -> LossValue:
    """Sum of halving-weighted per-level (object + region + pixel) losses.

    levels runs finest first, 1 to 4 entries of (saliency, ground truth);
    a ground truth larger than its map is nearest-downsampled to match.
    Without an explicit ssim_cfg the window shrinks to fit each level.
    """
    if not 1 <= len(levels) <= 4:
        raise ValueError(f"expected 1-4 levels, got {len(levels)}")
    total = None
    pixels = 0
    for weight, (s, g) in zip(LEVEL_WEIGHTS, levels):
        s = _as_tensor(s)
        if isinstance(g, np.ndarray) and g.shape != tuple(s.shape[-2:]):
            g = resize_nearest(g, tuple(s.shape[-2:]))
        g = _as_tensor(g, s.dtype)
        _check_same_shape(s, g, "level map and ground truth")
        cfg = ssim_cfg or SsimConfig.fitted(s.shape[-2], s.shape[-1])
        level = bce_core(s, g) + ssim_core(s, g, cfg) + fmeasure_core(s, g)
        total = weight * level if total is None else total + weight * level
        pixels += s.numel()
    return _finish(total, pixels)


def trimap_ce_loss(logits, t) -> LossValue:
    """Mean softmax cross-entropy of 3-channel logits against trimap labels."""
    logits = _as_tensor(logits)
    t = _as_tensor(t).long()
    if logits.shape[-3] != 3:
        raise ValueError(f"logits must have 3 channels, got {logits.shape}")
    if tuple(logits.shape[-2:]) != tuple(t.shape[-2:]):
        raise ValueError(
            f"logits {tuple(logits.shape[-2:])} and trimap {tuple(t.shape[-2:])} "
            "spatial dims differ"
        )
    return _finish(trimap_ce_core(logits, t), t.numel())


def l1_definite_loss(s_h, g_h, t) -> LossValue:
    """Mean absolute error over pixels the trimap marks definite (0 or 2)."""
    s_h = _as_tensor(s_h)
    g_h = _as_tensor(g_h, s_h.dtype)
    t = _as_tensor(t).long()
    _check_same_shape(s_h, g_h)
    _check_same_shape(s_h, t)
    keep = (t != TRIMAP_UNCERTAIN).to(s_h.dtype)
    tensor, n = masked_l1_core(s_h, g_h, keep)
    return _finish(tensor, n)


def uncertainty_loss(s_h, g_h, logvar, t) -> LossValue:
    """Gaussian-likelihood loss over uncertain pixels.

    Per pixel: 0.5 * (s - g)^2 * exp(-logvar) + 0.5 * logvar, averaged over
    trimap label-1 pixels; zero when the uncertain set is empty.
    """
    s_h = _as_tensor(s_h)
    g_h = _as_tensor(g_h, s_h.dtype)
    logvar = _as_tensor(logvar, s_h.dtype)
    t = _as_tensor(t).long()
    _check_same_shape(s_h, g_h)
    _check_same_shape(s_h, logvar)
    _check_same_shape(s_h, t)
    if not torch.isfinite(logvar).all():
        raise FloatingPointError("logvar contains non-finite values")
    keep = (t == TRIMAP_UNCERTAIN).to(s_h.dtype)
    tensor, n = uncertainty_core(s_h, g_h, logvar, keep)
    return _finish(tensor, n)


def hrrn_loss(s_h, g_h, logvar, t) -> LossValue:
    unc = uncertainty_loss(s_h, g_h, logvar, t)
    l1 = l1_definite_loss(s_h, g_h, t)
    return _finish(unc.tensor + l1.tensor, unc.pixel_count + l1.pixel_count)


def lrscn_loss(levels, logits, t_gt, ssim_cfg: SsimConfig | None = None) -> LossValue:
    """Multi-level saliency supervision plus trimap cross-entropy.

    A ground-truth trimap larger than the logits is nearest-downsampled;
    the trimap term applies at the finest level only.
    """
    sal = saliency_loss(levels, ssim_cfg)
    logits_t = _as_tensor(logits)
    if isinstance(t_gt, np.ndarray) and t_gt.shape != tuple(logits_t.shape[-2:]):
        t_gt = resize_nearest(t_gt, tuple(logits_t.shape[-2:]))
    tri = trimap_ce_loss(logits_t, t_gt)
    return _finish(sal.tensor + tri.tensor, sal.pixel_count + tri.pixel_count)


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


def _loss_scalar(out) -> torch.Tensor:
    return out.tensor if isinstance(out, LossValue) else out


def grad_check(loss_fn, inputs, epsilon: float = 1e-5, wrt=None) -> float:
    """Max relative error between autograd and central differences.

    inputs is a sequence of arrays; wrt selects which are differentiated
    (default: every floating-point input). Everything is evaluated at
    double precision.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-6, 1e-3], got {epsilon}")
    tensors = []
    for x in inputs:
        t = torch.as_tensor(np.asarray(x))
        tensors.append(t.double() if t.is_floating_point() else t.clone())
    if wrt is None:
        wrt = [i for i, t in enumerate(tensors) if t.is_floating_point()]
    for i in wrt:
        tensors[i].requires_grad_(True)

    out = _loss_scalar(loss_fn(*tensors))
    if not torch.isfinite(out):
        raise FloatingPointError("loss is not finite at the given inputs")
    grads = torch.autograd.grad(out, [tensors[i] for i in wrt], allow_unused=True)

    max_err = 0.0
    with torch.no_grad():
        for grad, i in zip(grads, wrt):
            base = tensors[i]
            analytic = (
                torch.zeros_like(base) if grad is None else grad
            ).reshape(-1)
            flat = base.reshape(-1)
            for j in range(flat.numel()):
                orig = flat[j].item()
                flat[j] = orig + epsilon
                up = float(_loss_scalar(loss_fn(*tensors)))
                flat[j] = orig - epsilon
                down = float(_loss_scalar(loss_fn(*tensors)))
                flat[j] = orig
                numeric = (up - down) / (2.0 * epsilon)
                a = float(analytic[j])
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                max_err = max(max_err, err)
    return max_err
