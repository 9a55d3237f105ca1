"""Basic convolutional building blocks: Conv-BN-SiLU and the split/concat C2f block."""

import torch
import torch.nn as nn

from .config import ConfigError


class ConvBlock(nn.Module):
    """3x3/1x1 convolution followed by per-channel batch norm and SiLU gating."""

    def __init__(self, in_channels, out_channels, kernel=3, stride=1, groups=1,
                 dilation=1, act=True, bias=False):
        super().__init__()
        if kernel % 2 == 0:
            raise ConfigError(f"kernel must be odd, got {kernel}")
        if out_channels < 1:
            raise ConfigError(f"out_channels must be >= 1, got {out_channels}")
        if stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {stride}")
        padding = dilation * (kernel - 1) // 2
        self.conv = nn.Conv2d(in_channels, out_channels, kernel, stride,
                              padding=padding, groups=groups, dilation=dilation, bias=bias)
        self.bn = nn.BatchNorm2d(out_channels)
        self.act = nn.SiLU() if act else nn.Identity()

    def forward(self, x):
        return self.act(self.bn(self.conv(x)))


class Bottleneck(nn.Module):
    """Two 3x3 conv blocks with an identity shortcut when shapes allow."""

    def __init__(self, in_channels, out_channels, shortcut=True):
        super().__init__()
        self.cv1 = ConvBlock(in_channels, out_channels, 3, 1)
        self.cv2 = ConvBlock(out_channels, out_channels, 3, 1)
        self.add = shortcut and in_channels == out_channels

    def forward(self, x):
        y = self.cv2(self.cv1(x))
        return x + y if self.add else y


class C2f(nn.Module):
    """Split-transform-concat block: the channel split feeds a chain of
    bottlenecks whose intermediate outputs are all concatenated before the
    final projection."""

    def __init__(self, in_channels, out_channels, n=1, shortcut=False):
        super().__init__()
        if out_channels % 2 != 0:
            raise ConfigError(f"C2f out_channels must be even, got {out_channels}")
        self.hidden = out_channels // 2
        self.cv1 = ConvBlock(in_channels, 2 * self.hidden, 1, 1)
        self.cv2 = ConvBlock((2 + n) * self.hidden, out_channels, 1, 1)
        self.m = nn.ModuleList(
            Bottleneck(self.hidden, self.hidden, shortcut) for _ in range(n)
        )

    def forward(self, x):
        y = list(self.cv1(x).chunk(2, dim=1))
        for m in self.m:
            y.append(m(y[-1]))
        return self.cv2(torch.cat(y, dim=1))
