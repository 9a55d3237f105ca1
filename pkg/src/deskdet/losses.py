"""Training objective: adaptive-threshold focal classification loss,
complete-IoU box regression and distribution focal loss, tied together by
task-aligned assignment."""

import json
import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .assigner import pairwise_iou_xyxy, task_aligned_assign
from .config import ATFConfig, AssignerConfig, ConfigError, LossWeights
from .model import RawPredictions, decode_to_tensors


@dataclass
class LossBreakdown:
    cls_loss: float
    box_loss: float
    dfl_loss: float
    total: float
    weights: tuple

    def log_line(self, step, tau):
        return json.dumps({
            "step": step, "cls": self.cls_loss, "box": self.box_loss,
            "dfl": self.dfl_loss, "total": self.total, "tau": tau,
        })


def binary_cross_entropy(p, target):
    """Elementwise BCE on probabilities; p must lie strictly in (0, 1)."""
    return -(target * torch.log(p) + (1 - target) * torch.log(1 - p))


def atf_loss(pred_prob, target, cfg: ATFConfig):
    """Threshold-gated focal loss on probabilities.

    With p_t = p for positive targets and 1-p otherwise: samples already
    confident (p_t > tau) are down-weighted by ((1-p_t)/(1-tau))^gamma while
    hard samples (p_t <= tau) keep full weight.  The factor is continuous at
    the threshold.  Reduces to plain BCE for gamma=0, tau=0.
    """
    if cfg.gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {cfg.gamma}")
    if torch.any(pred_prob <= 0) or torch.any(pred_prob >= 1):
        raise ValueError("pred_prob must lie strictly in (0, 1)")
    target = torch.as_tensor(target, dtype=pred_prob.dtype, device=pred_prob.device)
    p_t = torch.where(target > 0, pred_prob, 1 - pred_prob)
    factor = torch.where(
        p_t > cfg.tau,
        ((1 - p_t) / (1 - cfg.tau)).pow(cfg.gamma),
        torch.ones_like(p_t),
    )
    return factor * binary_cross_entropy(pred_prob, target)


class AdaptiveThresholdFocalLoss(nn.Module):
    """Stateful wrapper: in batch-adaptive mode, tau tracks an exponential
    moving average of the mean positive-sample p_t.  Mutating tau requires
    exclusive access during training."""

    def __init__(self, cfg: ATFConfig):
        super().__init__()
        self.cfg = cfg.validate()
        self.tau = cfg.tau

    def forward(self, pred_prob, target):
        cfg = ATFConfig(self.cfg.gamma, self.tau, self.cfg.tau_mode, self.cfg.tau_momentum)
        out = atf_loss(pred_prob, target, cfg)
        if self.cfg.tau_mode == "batch-adaptive" and self.training:
            pos = target > 0
            if pos.any():
                mean_pt = pred_prob.detach()[pos].mean().item()
                m = self.cfg.tau_momentum
                self.tau = min(m * self.tau + (1 - m) * mean_pt, 1 - 1e-6)
        return out


def dfl_loss(dist_logits, target_offset):
    """Distribution focal loss on the two bins bracketing the target.

    dist_logits: (..., bins); target_offset: (...) in [0, bins-1].
    """
    bins = dist_logits.shape[-1]
    target_offset = torch.as_tensor(target_offset, dtype=dist_logits.dtype,
                                    device=dist_logits.device)
    if torch.any(target_offset < 0) or torch.any(target_offset > bins - 1):
        raise ValueError("target_offset outside bin range")
    left = target_offset.floor().clamp(max=bins - 2).long()
    right = left + 1
    wl = right.to(dist_logits.dtype) - target_offset
    wr = target_offset - left.to(dist_logits.dtype)
    logp = dist_logits.log_softmax(dim=-1)
    return -(wl * logp.gather(-1, left.unsqueeze(-1)).squeeze(-1)
             + wr * logp.gather(-1, right.unsqueeze(-1)).squeeze(-1))


def dfl_decode(dist_logits):
    """Expectation readout of the bin distribution."""
    bins = dist_logits.shape[-1]
    idx = torch.arange(bins, dtype=dist_logits.dtype, device=dist_logits.device)
    return (dist_logits.softmax(dim=-1) * idx).sum(dim=-1)


def box_regression_loss(pred, gt, eps=1e-9):
    """Complete-IoU loss on (..., 4) corner-format boxes: 1 - IoU plus
    center-distance and aspect-ratio penalties.  Zero iff the boxes match."""
    px1, py1, px2, py2 = pred.unbind(-1)
    gx1, gy1, gx2, gy2 = gt.unbind(-1)
    pw, ph = (px2 - px1).clamp(min=0), (py2 - py1).clamp(min=0)
    gw, gh = (gx2 - gx1).clamp(min=0), (gy2 - gy1).clamp(min=0)

    iw = (torch.minimum(px2, gx2) - torch.maximum(px1, gx1)).clamp(min=0)
    ih = (torch.minimum(py2, gy2) - torch.maximum(py1, gy1)).clamp(min=0)
    inter = iw * ih
    union = pw * ph + gw * gh - inter
    iou = inter / (union + eps)

    cw = torch.maximum(px2, gx2) - torch.minimum(px1, gx1)
    ch = torch.maximum(py2, gy2) - torch.minimum(py1, gy1)
    diag2 = cw.pow(2) + ch.pow(2) + eps
    center2 = ((px1 + px2 - gx1 - gx2).pow(2) + (py1 + py2 - gy1 - gy2).pow(2)) / 4

    v = (4 / math.pi ** 2) * (torch.atan(gw / (gh + eps)) - torch.atan(pw / (ph + eps))).pow(2)
    alpha = v / (1 - iou + v + eps)
    return 1 - iou + center2 / diag2 + alpha * v


class DetectionLoss(nn.Module):
    """Full objective over raw head outputs and per-image ground truths."""

    def __init__(self, num_classes, dfl_bins, image_size, enable_C=False,
                 atf: ATFConfig = None, assigner: AssignerConfig = None,
                 weights: LossWeights = None):
        super().__init__()
        self.num_classes = num_classes
        self.dfl_bins = dfl_bins
        self.image_size = image_size
        self.enable_C = enable_C
        self.atf = AdaptiveThresholdFocalLoss(atf or ATFConfig())
        self.assigner = assigner or AssignerConfig()
        self.weights = weights or LossWeights()

    @property
    def tau(self):
        return self.atf.tau

    @torch.no_grad()
    def build_targets(self, raw: RawPredictions, gt_boxes_list, gt_labels_list):
        """Dynamic per-step assignment from the current (detached)
        predictions.  Returns per-image target records treated as constants
        by the loss."""
        boxes, probs, centers, strides = decode_to_tensors(raw, self.dfl_bins, self.image_size)
        bsz, n, _ = probs.shape
        dtype, device = probs.dtype, probs.device
        records = []
        for bi in range(bsz):
            gtb = gt_boxes_list[bi].to(device=device, dtype=dtype)
            gtl = gt_labels_list[bi].to(device=device)
            ious = pairwise_iou_xyxy(boxes[bi], gtb) if gtb.numel() else \
                boxes.new_zeros((n, 0))
            assign = task_aligned_assign(
                probs[bi], ious, centers, gtb, gtl,
                k=self.assigner.topk, alpha=self.assigner.alpha, beta=self.assigner.beta)

            targets = torch.zeros(n, self.num_classes, dtype=dtype, device=device)
            pos_idx = assign.is_positive.nonzero(as_tuple=True)[0]
            if pos_idx.numel():
                m = gtb.shape[0]
                mgt = assign.matched_gt[pos_idx]
                # normalize alignment per gt by its best IoU (soft targets)
                t_max = torch.zeros(m, dtype=dtype, device=device)
                iou_max = torch.zeros(m, dtype=dtype, device=device)
                t_max.scatter_reduce_(0, mgt, assign.alignment[pos_idx], reduce="amax")
                iou_max.scatter_reduce_(0, mgt, ious[pos_idx, mgt], reduce="amax")
                t_hat = assign.alignment[pos_idx] / t_max[mgt].clamp(min=1e-9) * iou_max[mgt]
                targets[pos_idx, gtl[mgt]] = t_hat

                gt_pos = gtb[mgt]
                ltrb = torch.stack([
                    centers[pos_idx, 0] - gt_pos[:, 0],
                    centers[pos_idx, 1] - gt_pos[:, 1],
                    gt_pos[:, 2] - centers[pos_idx, 0],
                    gt_pos[:, 3] - centers[pos_idx, 1],
                ], dim=-1) / strides[pos_idx, None]
                ltrb = ltrb.clamp(0, self.dfl_bins - 1 - 1e-3)
            else:
                t_hat = boxes.new_zeros(0)
                gt_pos = boxes.new_zeros((0, 4))
                ltrb = boxes.new_zeros((0, 4))
            records.append((targets, pos_idx, gt_pos, ltrb, t_hat))
        return records

    def compute(self, raw: RawPredictions, records):
        """Differentiable loss given frozen target records."""
        boxes, probs, _, _ = decode_to_tensors(raw, self.dfl_bins, self.image_size)
        # raw per-side logits flattened in the same location order as decode
        reg_logits = torch.cat([
            bl.reshape(bl.shape[0], 4, self.dfl_bins, -1).permute(0, 3, 1, 2)
            for bl in raw.box_logits
        ], dim=1)                                               # (b, n, 4, bins)

        cls_sum = boxes.new_zeros(())
        box_sum = boxes.new_zeros(())
        dfl_sum = boxes.new_zeros(())
        target_norm = 0.0
        for bi, (targets, pos_idx, gt_pos, ltrb, t_hat) in enumerate(records):
            if pos_idx.numel():
                ciou = box_regression_loss(boxes[bi][pos_idx], gt_pos)
                box_sum = box_sum + (ciou * t_hat).sum()
                dfl = dfl_loss(reg_logits[bi, pos_idx], ltrb).mean(dim=-1)
                dfl_sum = dfl_sum + (dfl * t_hat).sum()
                target_norm += float(t_hat.sum())
            # keep probabilities strictly inside (0, 1) at this dtype; with a
            # float32 sigmoid, 1 - 1e-9 would round back to exactly 1.0
            eps = torch.finfo(probs.dtype).eps
            p = probs[bi].clamp(eps, 1 - eps)
            if self.enable_C:
                cls_sum = cls_sum + self.atf(p, targets).sum()
            else:
                cls_sum = cls_sum + binary_cross_entropy(p, targets).sum()

        norm = max(target_norm, 1.0)
        cls_term = cls_sum / norm
        box_term = box_sum / norm
        dfl_term = dfl_sum / norm
        w = self.weights
        total = w.cls * cls_term + w.box * box_term + w.dfl * dfl_term
        breakdown = LossBreakdown(
            cls_term.detach().item(), box_term.detach().item(),
            dfl_term.detach().item(), total.detach().item(),
            (w.cls, w.box, w.dfl))
        return total, breakdown

    def forward(self, raw: RawPredictions, gt_boxes_list, gt_labels_list) -> tuple:
        """gt_boxes_list: per-image (m, 4) xyxy pixel tensors;
        gt_labels_list: per-image (m,) long tensors.
        Returns (total tensor for backward, LossBreakdown)."""
        records = self.build_targets(raw, gt_boxes_list, gt_labels_list)
        return self.compute(raw, records)
