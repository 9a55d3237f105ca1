"""Spatial feature calibration for cross-layer fusion: displacement fields
warp grouped feature streams into alignment and a bounded gate blends them
on top of a residual."""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ConfigError
from .layers import ConvBlock


def grouped_warp(x, offsets):
    """Resample ``x`` per channel group at (col + dx, row + dy) with bilinear
    interpolation and border clamping.

    offsets: (batch, groups, 2, H, W) holding (dx, dy) in feature-cell units.
    Zero offsets reproduce ``x`` bit-exactly.
    """
    b, c, h, w = x.shape
    groups = offsets.shape[1]
    if c % groups != 0:
        raise ConfigError(f"groups {groups} must divide channels {c}")
    gc = c // groups
    xs = x.reshape(b, groups, gc, h, w)

    cols = torch.arange(w, dtype=x.dtype, device=x.device).view(1, 1, 1, w)
    rows = torch.arange(h, dtype=x.dtype, device=x.device).view(1, 1, h, 1)
    sx = (cols + offsets[:, :, 0]).clamp(0, w - 1)
    sy = (rows + offsets[:, :, 1]).clamp(0, h - 1)

    x0 = sx.floor().clamp(0, w - 1)
    y0 = sy.floor().clamp(0, h - 1)
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    fx = (sx - x0).unsqueeze(2)
    fy = (sy - y0).unsqueeze(2)

    def gather(ix, iy):
        idx = (iy.long() * w + ix.long()).unsqueeze(2).expand(b, groups, gc, h, w)
        return xs.flatten(3).gather(3, idx.flatten(3)).reshape(b, groups, gc, h, w)

    top = gather(x0, y0) * (1 - fx) + gather(x1, y0) * fx
    bot = gather(x0, y1) * (1 - fx) + gather(x1, y1) * fx
    out = top * (1 - fy) + bot * fy
    return out.reshape(b, c, h, w)


def gated_fuse(a, b, gate, residual):
    """residual + gate * a + (1 - gate) * b, gate broadcast over channels."""
    if a.shape != b.shape or a.shape != residual.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape} vs {residual.shape}")
    return residual + gate * a + (1 - gate) * b


class AlignStreams(nn.Module):
    """Project both streams to a common width and upsample the high-level
    stream x2 (nearest) onto the low-level grid."""

    def __init__(self, high_channels, low_channels, out_channels):
        super().__init__()
        self.proj_high = ConvBlock(high_channels, out_channels, 1, 1)
        self.proj_low = ConvBlock(low_channels, out_channels, 1, 1)

    def forward(self, high, low):
        if high.shape[2] * 2 != low.shape[2] or high.shape[3] * 2 != low.shape[3]:
            raise ConfigError(
                f"high stream must be exactly half the low stream's resolution, "
                f"got {tuple(high.shape[2:])} vs {tuple(low.shape[2:])}"
            )
        h = F.interpolate(self.proj_high(high), scale_factor=2, mode="nearest")
        return h, self.proj_low(low)


class DisplacementPredictor(nn.Module):
    """Small conv stack over the concatenated streams producing one (dx, dy)
    field per group per stream.  The final layer is zero-initialized so the
    module starts as an identity warp."""

    def __init__(self, channels, groups=4):
        super().__init__()
        if channels % groups != 0:
            raise ConfigError(f"groups {groups} must divide channels {channels}")
        self.groups = groups
        self.stem = ConvBlock(2 * channels, channels, 3, 1)
        self.head = nn.Conv2d(channels, 2 * groups * 2, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, a, b):
        if a.shape != b.shape:
            raise ConfigError(f"streams must share a shape, got {a.shape} vs {b.shape}")
        n, _, h, w = a.shape
        off = self.head(self.stem(torch.cat([a, b], dim=1)))
        off = off.reshape(n, 2, self.groups, 2, h, w)
        return off[:, 0], off[:, 1]


class SpatialFusion(nn.Module):
    """Full fusion junction: align, predict displacements, warp each stream
    with its own field, then gate-blend over a residual copy of the low
    stream.  Output lives on the low stream's grid at ``out_channels``."""

    def __init__(self, high_channels, low_channels, out_channels, groups=4):
        super().__init__()
        self.align = AlignStreams(high_channels, low_channels, out_channels)
        self.disp = DisplacementPredictor(out_channels, groups)
        self.gate_conv = nn.Conv2d(2 * out_channels, 1, 1)
        nn.init.zeros_(self.gate_conv.weight)
        nn.init.zeros_(self.gate_conv.bias)

    def forward(self, high, low):
        a, b = self.align(high, low)
        off_a, off_b = self.disp(a, b)
        a_w = grouped_warp(a, off_a)
        b_w = grouped_warp(b, off_b)
        gate = torch.sigmoid(self.gate_conv(torch.cat([a_w, b_w], dim=1)))
        return gated_fuse(a_w, b_w, gate, residual=b)
