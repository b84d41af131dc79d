"""High-resolution refinement network.

U-shaped encoder-decoder over a 6-channel input (RGB plus one-hot trimap).
Every convolution is spectrally normalized by power iteration; the decoder
fuses each encoder feature through a two-layer shortcut block before the
corresponding upsample, the raw input re-enters ahead of the last
convolution through its own shortcut block, and two heads emit a sigmoid
saliency map and an unconstrained log-variance map at input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .lrscn import channel_norm

SIGMA_FLOOR = 1e-12


@dataclass
class SpectralState:
    """Running left-singular-vector estimate for one weight matrix."""

    u: torch.Tensor
    power_iterations: int = 1

    def __post_init__(self):
        # renormalize in place so callers can alias a module buffer
        with torch.no_grad():
            norm = self.u.norm()
            if norm > 0:
                self.u.div_(norm)


def _unit(x: torch.Tensor):
    norm = x.norm()
    if norm < SIGMA_FLOOR:
        return None
    return x / norm


def spectral_normalize(weight: torch.Tensor, state: SpectralState) -> torch.Tensor:
    """One power-iteration update of (u, v), then weight / sigma.

    weight is the (out_channels x rest) matrix view of a kernel. sigma is
    u^T W v with u, v held constant in the autograd graph, and is floored
    at 1e-12 so a zero matrix maps to zero.
    """
    with torch.no_grad():
        v = _unit(weight.t() @ state.u)
        if v is not None:
            u = _unit(weight @ v)
            if u is not None:
                state.u.copy_(u)
        v = _unit(weight.detach().t() @ state.u)
    if v is None:
        v = torch.zeros(weight.shape[1], dtype=weight.dtype, device=weight.device)
    sigma = torch.dot(state.u, torch.mv(weight, v)).clamp_min(SIGMA_FLOOR)
    return weight / sigma


class SnConv2d(nn.Conv2d):
    """Conv2d whose weight is divided by its estimated top singular value.

    The power iteration advances only in training mode, so evaluation is a
    pure function of (weights, input) and gradient checks can hold u fixed.
    """

    def __init__(self, *args, power_iterations: int = 1, **kwargs):
        super().__init__(*args, **kwargs)
        self.power_iterations = power_iterations
        # orthogonal start: every singular value equal, so the power-iteration
        # estimate is exact from the first step and drifts only with training
        nn.init.orthogonal_(self.weight)
        self.register_buffer("u", F.normalize(torch.randn(self.out_channels), dim=0))

    def normalized_weight(self) -> torch.Tensor:
        w_mat = self.weight.view(self.out_channels, -1)
        if self.training:
            state = SpectralState(self.u, self.power_iterations)
            normed = w_mat
            for _ in range(self.power_iterations):
                normed = spectral_normalize(w_mat, state)
            return normed.view(self.weight.shape)
        # evaluation: no u update, sigma from the stored u
        with torch.no_grad():
            v = _unit(w_mat.detach().t() @ self.u)
        if v is None:
            v = torch.zeros(w_mat.shape[1], dtype=w_mat.dtype, device=w_mat.device)
        sigma = torch.dot(self.u, torch.mv(w_mat, v)).clamp_min(SIGMA_FLOOR)
        return self.weight / sigma

    def forward(self, x):
        return self._conv_forward(x, self.normalized_weight(), self.bias)


class SnConvBlock(nn.Sequential):
    def __init__(self, c_in, c_out, kernel=3, stride=1):
        super().__init__(
            SnConv2d(c_in, c_out, kernel, stride=stride, padding=kernel // 2),
            channel_norm(c_out),
            nn.ReLU(inplace=True),
        )


class ShortcutBlock(nn.Sequential):
    """Two-layer channel-aligning block used on skip and raw-input paths."""

    def __init__(self, c_in, c_out):
        super().__init__(SnConvBlock(c_in, c_out), SnConvBlock(c_out, c_out))


@dataclass
class HrrnConfig:
    base_width: int = 32
    max_width: int = 256
    depth: int = 4
    in_channels: int = 6

    def widths(self):
        return [min(self.base_width * 2**i, self.max_width) for i in range(self.depth + 1)]


class HrrnTensors:
    def __init__(self, saliency, logvar):
        self.saliency = saliency
        self.logvar = logvar


class Hrrn(nn.Module):
    def __init__(self, config: HrrnConfig | None = None):
        super().__init__()
        self.config = config or HrrnConfig()
        w0, w1, w2, w3, w4 = self.config.widths()
        cin = self.config.in_channels
        self.enc0 = SnConvBlock(cin, w0)
        self.enc1 = nn.Sequential(SnConvBlock(w0, w1, stride=2), SnConvBlock(w1, w1))
        self.enc2 = nn.Sequential(SnConvBlock(w1, w2, stride=2), SnConvBlock(w2, w2))
        self.enc3 = nn.Sequential(SnConvBlock(w2, w3, stride=2), SnConvBlock(w3, w3))
        self.enc4 = nn.Sequential(SnConvBlock(w3, w4, stride=2), SnConvBlock(w4, w4))

        self.bottleneck = SnConvBlock(w4, w4)
        self.skip4 = ShortcutBlock(w4, w4)
        self.skip3 = ShortcutBlock(w3, w3)
        self.skip2 = ShortcutBlock(w2, w2)
        self.skip1 = ShortcutBlock(w1, w1)
        self.skip0 = ShortcutBlock(w0, w0)
        self.fuse4 = SnConvBlock(w4 + w4, w3)
        self.fuse3 = SnConvBlock(w3 + w3, w2)
        self.fuse2 = SnConvBlock(w2 + w2, w1)
        self.fuse1 = SnConvBlock(w1 + w1, w0)

        self.raw_shortcut = ShortcutBlock(cin, w0)
        self.final = SnConvBlock(w0 + w0 + w0, w0)
        self.saliency_head = SnConv2d(w0, 1, 3, padding=1)
        self.logvar_head = SnConv2d(w0, 1, 3, padding=1)

    @staticmethod
    def _up2(x):
        return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)

    def forward(self, x: torch.Tensor) -> HrrnTensors:
        div = 2**self.config.depth
        if x.shape[-1] % div or x.shape[-2] % div:
            raise ValueError(
                f"input spatial dims must be divisible by {div}, got {tuple(x.shape[-2:])}"
            )
        e0 = self.enc0(x)
        e1 = self.enc1(e0)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        e4 = self.enc4(e3)

        d = self.bottleneck(e4)
        d = self._up2(self.fuse4(torch.cat([d, self.skip4(e4)], dim=1)))
        d = self._up2(self.fuse3(torch.cat([d, self.skip3(e3)], dim=1)))
        d = self._up2(self.fuse2(torch.cat([d, self.skip2(e2)], dim=1)))
        d = self._up2(self.fuse1(torch.cat([d, self.skip1(e1)], dim=1)))

        raw = self.raw_shortcut(x)
        d = self.final(torch.cat([d, self.skip0(e0), raw], dim=1))
        return HrrnTensors(torch.sigmoid(self.saliency_head(d)), self.logvar_head(d))


@dataclass
class HrrnOutput:
    saliency: np.ndarray
    logvar: np.ndarray


def one_hot_trimap(trimap: np.ndarray) -> np.ndarray:
    """(3, H, W) indicator channels in label order background/uncertain/salient."""
    return np.stack([(trimap == label) for label in (0, 1, 2)]).astype(np.float64)


def hrrn_input(image: np.ndarray, trimap: np.ndarray) -> np.ndarray:
    if image.shape[:2] != trimap.shape:
        raise ValueError(
            f"image {image.shape[:2]} and trimap {trimap.shape} dimensions differ"
        )
    return np.concatenate([image.transpose(2, 0, 1), one_hot_trimap(trimap)])


def hrrn_forward_batch(model: Hrrn, batch: np.ndarray) -> HrrnOutput:
    """Run a (N, 6, H, W) batch; returns stacked (N, H, W) numpy maps."""
    dtype = next(model.parameters()).dtype
    x = torch.from_numpy(np.ascontiguousarray(batch)).to(dtype)
    with torch.no_grad():
        out = model(x)
    return HrrnOutput(
        saliency=out.saliency[:, 0].double().numpy(),
        logvar=out.logvar[:, 0].double().numpy(),
    )


def refine(image: np.ndarray, trimap: np.ndarray, model: Hrrn) -> HrrnOutput:
    """One-hot encode the trimap and refine a single image."""
    out = hrrn_forward_batch(model, hrrn_input(image, trimap)[None])
    return HrrnOutput(saliency=out.saliency[0], logvar=out.logvar[0])
