"""Context feature calibration: per-pixel queries attend over a small set of
pyramid-pooled context units and the aggregated context is written back
residually, leaving the spatial structure untouched."""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ConfigError


def cascaded_pyramid_context(x, bins):
    """Pool ``x`` to a ladder of bin x bin grids, each level pooling the
    previous level's output, and flatten all cells into context units.

    Returns (units, provenance): units is (batch, n_units, channels) with
    n_units = sum(b*b for b in bins).
    """
    if list(bins) != sorted(set(bins)):
        raise ConfigError(f"bins must be strictly increasing, got {list(bins)}")
    h, w = x.shape[2], x.shape[3]
    if bins and bins[-1] > min(h, w):
        raise ConfigError(f"largest bin {bins[-1]} exceeds spatial dims {h}x{w}")
    units = []
    # coarse-to-fine cascade: level b pools the previous (finer) level
    prev = x
    for b in reversed(bins):
        prev = F.adaptive_avg_pool2d(prev, b)
        units.append(prev.flatten(2).transpose(1, 2))
    units.reverse()
    return torch.cat(units, dim=1), list(bins)


class ContextCalibration(nn.Module):
    """Query/key/value attention from pixels onto pooled context units with
    an additive residual write-back."""

    def __init__(self, channels, bins=(1, 2, 3, 6), embed=None):
        super().__init__()
        self.bins = list(bins)
        self.embed = embed or max(channels // 2, 1)
        self.query = nn.Conv2d(channels, self.embed, 1)
        self.key = nn.Linear(channels, self.embed)
        self.value = nn.Linear(channels, self.embed)
        self.proj = nn.Conv2d(self.embed, channels, 1)

    def attention_weights(self, x, units):
        """Row-normalized (softmax) weights, shape (batch, positions, n_units)."""
        b, _, h, w = x.shape
        q = self.query(x).flatten(2).transpose(1, 2)          # (b, hw, e)
        k = self.key(units)                                    # (b, n, e)
        scores = q @ k.transpose(1, 2) / math.sqrt(self.embed)
        return scores.softmax(dim=-1)

    def calibrate(self, x, units):
        b, c, h, w = x.shape
        weights = self.attention_weights(x, units)
        v = self.value(units)                                  # (b, n, e)
        ctx = weights @ v                                      # (b, hw, e)
        ctx = ctx.transpose(1, 2).reshape(b, self.embed, h, w)
        return x + self.proj(ctx)

    def forward(self, x):
        units, _ = cascaded_pyramid_context(x, self.bins)
        return self.calibrate(x, units)
