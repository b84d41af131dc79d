"""Low-resolution saliency classification network.

A small four-stage convolutional backbone feeds multi-scale bridge modules
(channel split into a large-kernel context path and a cross-level fusion
path), a bottom-up decoder with per-level sigmoid saliency heads, and a
saliency-guided attention head on the finest stage that emits 3-channel
trimap logits aligned with the saliency map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .rasters import resize_nearest

DEFAULT_GCN_KERNELS = {3: (7, 11, 15), 4: (7, 11, 15), 5: (7, 11), 6: (7,)}


@dataclass
class BackboneConfig:
    """Channel/stride layout of the four-stage feature pyramid."""

    stage_channels: tuple[int, int, int, int] = (32, 64, 128, 128)
    input_size: int = 128
    stage_strides: tuple[int, int, int, int] = (4, 8, 16, 32)

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.stage_strides = tuple(int(s) for s in self.stage_strides)
        if len(self.stage_channels) != 4 or len(self.stage_strides) != 4:
            raise ValueError("expected 4 stage channels and 4 stage strides")
        if any(c < 2 or c % 2 for c in self.stage_channels):
            raise ValueError(
                f"stage channels must be even (the bridge splits them in "
                f"half), got {self.stage_channels}"
            )
        for a, b in zip(self.stage_strides, self.stage_strides[1:]):
            if b != 2 * a:
                raise ValueError(f"strides must double per stage, got {self.stage_strides}")


@dataclass
class GcnSchedule:
    """Large-kernel sizes applied per pyramid level (3 = finest)."""

    kernels_per_level: dict = field(
        default_factory=lambda: dict(DEFAULT_GCN_KERNELS)
    )

    def __post_init__(self):
        for level, kernels in self.kernels_per_level.items():
            if any(k % 2 == 0 for k in kernels):
                raise ValueError(f"level {level} kernels must be odd, got {kernels}")

    def kernels(self, level: int):
        return self.kernels_per_level[level]


class ChannelNorm(nn.Module):
    """Per-channel spatial normalization with affine parameters.

    Batch-independent and stat-free, so inference is a pure function of
    (weights, input). A 1x1 feature map normalizes to its bias.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        mu = x.mean((-2, -1), keepdim=True)
        var = x.var((-2, -1), unbiased=False, keepdim=True)
        xh = (x - mu) / torch.sqrt(var + self.eps)
        return xh * self.weight[:, None, None] + self.bias[:, None, None]


def channel_norm(channels: int) -> ChannelNorm:
    return ChannelNorm(channels)


class ConvBlock(nn.Sequential):
    def __init__(self, c_in, c_out, kernel=3, stride=1):
        super().__init__(
            nn.Conv2d(c_in, c_out, kernel, stride=stride, padding=kernel // 2),
            channel_norm(c_out),
            nn.ReLU(inplace=True),
        )


class Backbone(nn.Module):
    """Conv pyramid emitting features at 1/4, 1/8, 1/16 and 1/32 scale."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        c3, c4, c5, c6 = config.stage_channels
        self.stem = nn.Sequential(
            ConvBlock(3, max(c3 // 2, 8), stride=2),
            ConvBlock(max(c3 // 2, 8), c3, stride=2),
        )
        self.stage4 = nn.Sequential(ConvBlock(c3, c4, stride=2), ConvBlock(c4, c4))
        self.stage5 = nn.Sequential(ConvBlock(c4, c5, stride=2), ConvBlock(c5, c5))
        self.stage6 = nn.Sequential(ConvBlock(c5, c6, stride=2), ConvBlock(c6, c6))

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.shape[-1] % 32 or x.shape[-2] % 32:
            raise ValueError(
                f"input spatial dims must be divisible by 32, got {tuple(x.shape[-2:])}"
            )
        f3 = self.stem(x)
        f4 = self.stage4(f3)
        f5 = self.stage5(f4)
        f6 = self.stage6(f5)
        return [f3, f4, f5, f6]


class GcnBlock(nn.Module):
    """Summed k x 1 / 1 x k separable convolution pair, then norm + relu."""

    def __init__(self, channels: int, k: int):
        super().__init__()
        pad = k // 2
        self.row_col = nn.Sequential(
            nn.Conv2d(channels, channels, (k, 1), padding=(pad, 0)),
            nn.Conv2d(channels, channels, (1, k), padding=(0, pad)),
        )
        self.col_row = nn.Sequential(
            nn.Conv2d(channels, channels, (1, k), padding=(0, pad)),
            nn.Conv2d(channels, channels, (k, 1), padding=(pad, 0)),
        )
        self.post = nn.Sequential(channel_norm(channels), nn.ReLU(inplace=True))

    def forward(self, x):
        return self.post(self.row_col(x) + self.col_row(x))


class Mecf(nn.Module):
    """Bridge module: channel split into context and fusion pathways.

    The first half goes through a pooled residual and a stack of
    large-kernel blocks; the second half is compressed, transformed and
    fused with the (upsampled, channel-aligned) second half of the
    highest-level feature. Outputs concatenate back to the input width.
    """

    def __init__(self, channels: int, high_channels: int, kernels):
        super().__init__()
        if channels % 2:
            raise ValueError(f"bridge input channels must be even, got {channels}")
        half = channels // 2
        self.half = half
        self.high_half = high_channels // 2
        self.me_down = ConvBlock(half, half)
        self.gcns = nn.Sequential(*[GcnBlock(half, k) for k in kernels])
        self.cf_compress = ConvBlock(half, half, kernel=1)
        self.cf_transform = nn.Sequential(ConvBlock(half, half), ConvBlock(half, half))
        self.cf_high = ConvBlock(self.high_half, half, kernel=1)

    def forward(self, f_l: torch.Tensor, f_h: torch.Tensor) -> torch.Tensor:
        f1, f2 = f_l[:, : self.half], f_l[:, self.half :]
        down = self.me_down(F.avg_pool2d(f1, 2))
        me = f1 + F.interpolate(
            down, size=f1.shape[-2:], mode="bilinear", align_corners=False
        )
        me = self.gcns(me)

        cf = self.cf_transform(self.cf_compress(f2))
        high = self.cf_high(f_h[:, self.high_half :])
        high = F.interpolate(
            high, size=cf.shape[-2:], mode="bilinear", align_corners=False
        )
        cf = cf + high
        return torch.cat([me, cf], dim=1)


class Decoder(nn.Module):
    """Bottom-up fusion of bridge outputs, one sigmoid saliency head each."""

    def __init__(self, stage_channels):
        super().__init__()
        c3, c4, c5, c6 = stage_channels
        self.fuse6 = ConvBlock(c6, c6)
        self.fuse5 = ConvBlock(c5 + c6, c5)
        self.fuse4 = ConvBlock(c4 + c5, c4)
        self.fuse3 = ConvBlock(c3 + c4, c3)
        self.heads = nn.ModuleList(
            [nn.Conv2d(c, 1, 3, padding=1) for c in (c3, c4, c5, c6)]
        )

    @staticmethod
    def _up(x, like):
        return F.interpolate(x, size=like.shape[-2:], mode="bilinear", align_corners=False)

    def forward(self, feats):
        m3, m4, m5, m6 = feats
        d6 = self.fuse6(m6)
        d5 = self.fuse5(torch.cat([m5, self._up(d6, m5)], dim=1))
        d4 = self.fuse4(torch.cat([m4, self._up(d5, m4)], dim=1))
        d3 = self.fuse3(torch.cat([m3, self._up(d4, m3)], dim=1))
        features = [d3, d4, d5, d6]
        saliencies = [
            torch.sigmoid(head(d)) for head, d in zip(self.heads, features)
        ]
        return features, saliencies


class Sga(nn.Module):
    """Saliency-guided attention: the predicted map reweights the feature.

    The residual form (feature * map + feature) keeps the zero-weight case
    analyzable and cannot suppress the input; 3-channel trimap logits come
    off the reweighted feature at the same resolution as the map.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.saliency_conv = nn.Conv2d(channels, 1, 3, padding=1)
        self.trimap_conv = nn.Conv2d(channels, 3, 3, padding=1)

    def forward(self, d3: torch.Tensor):
        s = torch.sigmoid(self.saliency_conv(d3))
        refined = d3 * s + d3
        logits = self.trimap_conv(refined)
        return s, logits


class LrscnTensors(NamedTuple):
    saliency_levels: list[torch.Tensor]  # (B, 1, h, w) finest first
    trimap_logits: torch.Tensor  # (B, 3, h3, w3)
    refined_saliency: torch.Tensor  # (B, 1, h3, w3)


class Lrscn(nn.Module):
    def __init__(self, config: BackboneConfig | None = None,
                 schedule: GcnSchedule | None = None):
        super().__init__()
        self.config = config or BackboneConfig()
        self.schedule = schedule or GcnSchedule()
        channels = self.config.stage_channels
        self.backbone = Backbone(self.config)
        high = channels[3]
        self.bridges = nn.ModuleList(
            [
                Mecf(channels[i], high if level < 6 else channels[i],
                     self.schedule.kernels(level))
                for i, level in enumerate((3, 4, 5, 6))
            ]
        )
        self.decoder = Decoder(channels)
        self.sga = Sga(channels[0])

    def forward(self, x: torch.Tensor) -> LrscnTensors:
        feats = self.backbone(x)
        f_h = feats[3]
        bridged = [
            bridge(f, f_h if level < 6 else f)
            for bridge, f, level in zip(self.bridges, feats, (3, 4, 5, 6))
        ]
        dec_feats, saliencies = self.decoder(bridged)
        sga_s, logits = self.sga(dec_feats[0])
        levels = [sga_s] + saliencies[1:]
        return LrscnTensors(levels, logits, sga_s)


@dataclass
class LrscnOutput:
    """Numpy view of a single-image forward pass."""

    saliency_levels: list[np.ndarray]
    trimap_logits: np.ndarray  # (3, h, w)
    refined_saliency: np.ndarray


def lrscn_forward(model: Lrscn, image: np.ndarray) -> LrscnOutput:
    """Run one (H, W, 3) image through the network."""
    dtype = next(model.parameters()).dtype
    x = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))[None]).to(dtype)
    with torch.no_grad():
        out = model(x)
    return LrscnOutput(
        saliency_levels=[lvl[0, 0].double().numpy() for lvl in out.saliency_levels],
        trimap_logits=out.trimap_logits[0].double().numpy(),
        refined_saliency=out.refined_saliency[0, 0].double().numpy(),
    )


def argmax_trimap(logits: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over 3 logits; ties involving label 1 pick label 1."""
    reordered = logits[[1, 0, 2]]
    idx = np.argmax(reordered, axis=0)
    return np.array([1, 0, 2], dtype=np.uint8)[idx]


def predict_trimap(output: LrscnOutput, target_size: tuple[int, int]) -> np.ndarray:
    """Argmax the trimap logits and nearest-upsample to target_size."""
    labels = argmax_trimap(output.trimap_logits)
    th, tw = target_size
    if th < labels.shape[0] or tw < labels.shape[1]:
        raise ValueError(
            f"target size {target_size} is smaller than the logits {labels.shape}"
        )
    return resize_nearest(labels, (th, tw))
