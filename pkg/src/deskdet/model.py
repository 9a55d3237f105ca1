"""Anchor-free one-stage detector: C2f backbone, PAN neck, decoupled head.

The three improvements sit behind ModelConfig toggles:
  A — replaces the deepest pooling block with its attention-gated variant;
  B — context calibration on the deepest backbone output and spatial-fusion
      junctions at the neck's two top-down merges;
  C — only changes the training objective, never the graph.
"""

import io
import json
import math
import zipfile
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .boxes import DetectionBox
from .cfc_crb import ContextCalibration
from .config import ConfigError, ModelConfig
from .layers import C2f, ConvBlock
from .sfc_g2 import SpatialFusion
from .sppf_lska import SPPF, SPPFLSKA

STRIDES = (8, 16, 32)


@dataclass
class RawPredictions:
    """Per-scale head outputs: class logits (b, nc, H, W) and box-distribution
    logits (b, 4*bins, H, W) at strides 8/16/32."""
    cls_logits: list
    box_logits: list
    strides: tuple = STRIDES


def _round_channels(base, width):
    return max(8, int(round(base * width / 8)) * 8)


def _round_depth(base, depth):
    return max(1, round(base * depth))


class Head(nn.Module):
    """Decoupled classification / box-distribution branches for one scale."""

    def __init__(self, channels, num_classes, dfl_bins):
        super().__init__()
        self.cls_branch = nn.Sequential(
            ConvBlock(channels, channels, 3, 1),
            ConvBlock(channels, channels, 3, 1),
            nn.Conv2d(channels, num_classes, 1),
        )
        self.reg_branch = nn.Sequential(
            ConvBlock(channels, channels, 3, 1),
            ConvBlock(channels, channels, 3, 1),
            nn.Conv2d(channels, 4 * dfl_bins, 1),
        )

    def forward(self, x):
        return self.cls_branch(x), self.reg_branch(x)


class DetectorModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)

        w, d = cfg.width_multiple, cfg.depth_multiple
        c1, c2, c3, c4, c5 = (_round_channels(b, w) for b in (64, 128, 256, 512, 1024))
        n1, n2 = _round_depth(3, d), _round_depth(6, d)
        self.channels = (c3, c4, c5)

        # backbone
        self.stem = ConvBlock(3, c1, 3, 2)
        self.down2 = ConvBlock(c1, c2, 3, 2)
        self.stage2 = C2f(c2, c2, n1, shortcut=True)
        self.down3 = ConvBlock(c2, c3, 3, 2)
        self.stage3 = C2f(c3, c3, n2, shortcut=True)
        self.down4 = ConvBlock(c3, c4, 3, 2)
        self.stage4 = C2f(c4, c4, n2, shortcut=True)
        self.down5 = ConvBlock(c4, c5, 3, 2)
        self.stage5 = C2f(c5, c5, n1, shortcut=True)
        self.pool = SPPFLSKA(c5, c5) if cfg.enable_A else SPPF(c5, c5)
        if cfg.enable_B:
            # pyramid bins must fit the deepest (stride-32) feature map
            deepest = cfg.input_size // 32
            bins = tuple(b for b in (1, 2, 3, 6) if b <= deepest)
            self.context = ContextCalibration(c5, bins=bins)
        else:
            self.context = None

        # neck, top-down
        if cfg.enable_B:
            self.fuse_td4 = SpatialFusion(c5, c4, c4)
            self.td4 = C2f(c4, c4, n1)
            self.fuse_td3 = SpatialFusion(c4, c3, c3)
            self.td3 = C2f(c3, c3, n1)
        else:
            self.fuse_td4 = None
            self.td4 = C2f(c5 + c4, c4, n1)
            self.fuse_td3 = None
            self.td3 = C2f(c4 + c3, c3, n1)

        # neck, bottom-up
        self.bu4_down = ConvBlock(c3, c3, 3, 2)
        self.bu4 = C2f(c3 + c4, c4, n1)
        self.bu5_down = ConvBlock(c4, c4, 3, 2)
        self.bu5 = C2f(c4 + c5, c5, n1)

        self.heads = nn.ModuleList(
            Head(c, cfg.num_classes, cfg.dfl_bins) for c in self.channels
        )
        self._init_biases()

    def _init_biases(self):
        # zero biases everywhere (the displacement/gate zero weight inits set
        # in their own constructors are left untouched)
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)) and m.bias is not None:
                nn.init.zeros_(m.bias)
        # classification prior so initial positive probability is ~0.01
        prior = -math.log((1 - 0.01) / 0.01)
        for head in self.heads:
            nn.init.constant_(head.cls_branch[-1].bias, prior)

    def forward(self, x) -> RawPredictions:
        p2 = self.stage2(self.down2(self.stem(x)))
        p3 = self.stage3(self.down3(p2))
        p4 = self.stage4(self.down4(p3))
        p5 = self.pool(self.stage5(self.down5(p4)))
        if self.context is not None:
            p5 = self.context(p5)

        if self.fuse_td4 is not None:
            t4 = self.td4(self.fuse_td4(p5, p4))
            t3 = self.td3(self.fuse_td3(t4, p3))
        else:
            t4 = self.td4(torch.cat([F.interpolate(p5, scale_factor=2, mode="nearest"), p4], 1))
            t3 = self.td3(torch.cat([F.interpolate(t4, scale_factor=2, mode="nearest"), p3], 1))

        n4 = self.bu4(torch.cat([self.bu4_down(t3), t4], 1))
        n5 = self.bu5(torch.cat([self.bu5_down(n4), p5], 1))

        cls_logits, box_logits = [], []
        for head, feat in zip(self.heads, (t3, n4, n5)):
            c, r = head(feat)
            cls_logits.append(c)
            box_logits.append(r)
        return RawPredictions(cls_logits, box_logits)


def build_model(cfg: ModelConfig) -> DetectorModel:
    return DetectorModel(cfg)


def anchor_centers(h, w, stride, device=None, dtype=torch.float32):
    """Cell-center pixel coordinates, shape (h*w, 2) ordered row-major."""
    ys = (torch.arange(h, device=device, dtype=dtype) + 0.5) * stride
    xs = (torch.arange(w, device=device, dtype=dtype) + 0.5) * stride
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx.reshape(-1), gy.reshape(-1)], dim=-1)


def dfl_expectation(box_logits, dfl_bins):
    """Distribution expectation per side: (b, n, 4) from (b, 4*bins, H, W)."""
    b, _, h, w = box_logits.shape
    logits = box_logits.reshape(b, 4, dfl_bins, h * w)
    probs = logits.softmax(dim=2)
    bins = torch.arange(dfl_bins, dtype=box_logits.dtype, device=box_logits.device)
    return (probs * bins.view(1, 1, -1, 1)).sum(dim=2).permute(0, 2, 1)


def decode_to_tensors(raw: RawPredictions, dfl_bins, image_size):
    """Flatten all scales into per-location tensors.

    Returns (boxes (b, n, 4) xyxy pixels clamped to the image,
             class probabilities (b, n, nc), centers (n, 2), strides (n,)).
    """
    boxes_all, probs_all, centers_all, strides_all = [], [], [], []
    for cls_l, box_l, stride in zip(raw.cls_logits, raw.box_logits, raw.strides):
        b, _, h, w = cls_l.shape
        centers = anchor_centers(h, w, stride, cls_l.device, cls_l.dtype)
        dist = dfl_expectation(box_l, dfl_bins) * stride       # (b, n, 4) l,t,r,b
        xy1 = centers.unsqueeze(0) - dist[..., :2]
        xy2 = centers.unsqueeze(0) + dist[..., 2:]
        boxes = torch.cat([xy1, xy2], dim=-1).clamp(0, image_size)
        probs = cls_l.sigmoid().flatten(2).transpose(1, 2)     # (b, n, nc)
        boxes_all.append(boxes)
        probs_all.append(probs)
        centers_all.append(centers)
        strides_all.append(torch.full((h * w,), stride, dtype=cls_l.dtype, device=cls_l.device))
    return (torch.cat(boxes_all, 1), torch.cat(probs_all, 1),
            torch.cat(centers_all, 0), torch.cat(strides_all, 0))


def decode_predictions(raw: RawPredictions, conf_threshold, dfl_bins, image_size):
    """Per-image lists of DetectionBox above the confidence threshold."""
    if not (0.0 <= conf_threshold <= 1.0):
        raise ConfigError(f"conf_threshold must be in [0, 1], got {conf_threshold}")
    boxes, probs, _, _ = decode_to_tensors(raw, dfl_bins, image_size)
    conf, cls = probs.max(dim=-1)
    results = []
    for bi in range(boxes.shape[0]):
        keep = (conf[bi] >= conf_threshold).nonzero(as_tuple=True)[0]
        dets = []
        for i in keep.tolist():
            x1, y1, x2, y2 = boxes[bi, i].tolist()
            dets.append(DetectionBox(int(cls[bi, i]), float(conf[bi, i]), x1, y1, x2, y2))
        results.append(dets)
    return results


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(model: DetectorModel, path) -> None:
    """Zip archive: ``config.json`` (ModelConfig) + ``weights.pt`` (flat
    name->tensor state dict)."""
    from .config import config_to_dict

    buf = io.BytesIO()
    torch.save(model.state_dict(), buf)
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("config.json", json.dumps(config_to_dict(model.cfg), sort_keys=True))
        zf.writestr("weights.pt", buf.getvalue())


def load_checkpoint(path) -> DetectorModel:
    try:
        with zipfile.ZipFile(path) as zf:
            cfg_raw = json.loads(zf.read("config.json"))
            state = torch.load(io.BytesIO(zf.read("weights.pt")), weights_only=True)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError, RuntimeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    model = DetectorModel(ModelConfig(**cfg_raw))
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint {path} does not match its config: {exc}") from exc
    return model
