"""Serialized pyramid pooling with optional large-kernel separable attention.

SPPF concatenates the input with three cascaded stride-1 max poolings.  The
attention variant gates the concatenated tensor with a separable large-kernel
attention map (horizontal/vertical 1-D depthwise pair, then a dilated pair,
then a pointwise mix) before the output projection, so it is drop-in shape
compatible with plain SPPF.
"""

import torch
import torch.nn as nn

from .config import ConfigError, LskaConfig
from .layers import ConvBlock


class SPPF(nn.Module):
    def __init__(self, in_channels, out_channels, pool_kernel=5):
        super().__init__()
        if pool_kernel % 2 == 0:
            raise ConfigError(f"pool_kernel must be odd, got {pool_kernel}")
        hidden = in_channels // 2
        self.cv1 = ConvBlock(in_channels, hidden, 1, 1)
        self.cv2 = ConvBlock(hidden * 4, out_channels, 1, 1)
        self.pool = nn.MaxPool2d(pool_kernel, stride=1, padding=pool_kernel // 2)

    def concat_branches(self, x):
        """Pre-projection concat(x, pool(x), pool^2(x), pool^3(x))."""
        y1 = self.pool(x)
        y2 = self.pool(y1)
        y3 = self.pool(y2)
        return torch.cat([x, y1, y2, y3], dim=1)

    def forward(self, x):
        return self.cv2(self.concat_branches(self.cv1(x)))


class LSKA(nn.Module):
    """Large-kernel attention decomposed into separable depthwise 1-D convs.

    attention = pointwise(dilated_v(dilated_h(local_v(local_h(x)))))
    output    = x * attention  (elementwise gating)
    """

    def __init__(self, channels, cfg: LskaConfig = None, bias=True):
        super().__init__()
        cfg = (cfg or LskaConfig()).validate()
        if channels < 1:
            raise ConfigError(f"channels must be >= 1, got {channels}")
        k, kd, d = cfg.base_kernel, cfg.dilated_kernel, cfg.dilation
        self.cfg = cfg
        self.local_h = nn.Conv2d(channels, channels, (1, k), padding=(0, k // 2),
                                 groups=channels, bias=bias)
        self.local_v = nn.Conv2d(channels, channels, (k, 1), padding=(k // 2, 0),
                                 groups=channels, bias=bias)
        self.dilated_h = nn.Conv2d(channels, channels, (1, kd), dilation=d,
                                   padding=(0, d * (kd - 1) // 2), groups=channels, bias=bias)
        self.dilated_v = nn.Conv2d(channels, channels, (kd, 1), dilation=d,
                                   padding=(d * (kd - 1) // 2, 0), groups=channels, bias=bias)
        self.mix = nn.Conv2d(channels, channels, 1, bias=bias)

    def forward(self, x):
        attn = self.local_v(self.local_h(x))
        attn = self.dilated_v(self.dilated_h(attn))
        attn = self.mix(attn)
        return x * attn


class SPPFLSKA(nn.Module):
    """SPPF with attention applied to the concatenated pyramid before projection."""

    def __init__(self, in_channels, out_channels, pool_kernel=5, lska_cfg=None):
        super().__init__()
        hidden = in_channels // 2
        self.sppf = SPPF(in_channels, out_channels, pool_kernel)
        self.attn = LSKA(hidden * 4, lska_cfg)

    def forward(self, x):
        y = self.sppf.concat_branches(self.sppf.cv1(x))
        return self.sppf.cv2(self.attn(y))
