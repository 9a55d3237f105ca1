"""Task-aligned positive-sample selection.

Alignment t = score^alpha * iou^beta over candidate locations whose cell
center lies inside the ground-truth box; each ground truth keeps its top-k
candidates by t; a location claimed by several ground truths goes to the one
with the larger t.  All ties resolve deterministically: lower ground-truth
index, then lower location index.
"""

from dataclasses import dataclass

import torch


@dataclass
class AssignmentResult:
    is_positive: torch.Tensor    # (n,) bool
    matched_gt: torch.Tensor     # (n,) long, -1 for negatives
    alignment: torch.Tensor      # (n,) float in [0, 1], 0 for negatives
    per_gt_counts: torch.Tensor  # (m,) long


def pairwise_iou_xyxy(a, b):
    """IoU between (n, 4) and (m, 4) corner-format boxes -> (n, m)."""
    lt = torch.maximum(a[:, None, :2], b[None, :, :2])
    rb = torch.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    area_a = ((a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])).clamp(min=0)
    area_b = ((b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])).clamp(min=0)
    union = area_a[:, None] + area_b[None, :] - inter
    return torch.where(union > 0, inter / union, torch.zeros_like(inter))


@torch.no_grad()
def task_aligned_assign(scores, ious, centers, gt_boxes, gt_labels,
                        k=10, alpha=0.5, beta=6.0) -> AssignmentResult:
    """scores: (n, nc) class probabilities; ious: (n, m) location-vs-gt IoU;
    centers: (n, 2) cell centers in pixels; gt_boxes: (m, 4) xyxy;
    gt_labels: (m,) long."""
    n = scores.shape[0]
    m = gt_boxes.shape[0]
    device = scores.device
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if m == 0:
        return AssignmentResult(
            torch.zeros(n, dtype=torch.bool, device=device),
            torch.full((n,), -1, dtype=torch.long, device=device),
            torch.zeros(n, dtype=scores.dtype, device=device),
            torch.zeros(0, dtype=torch.long, device=device),
        )

    cls_score = scores[:, gt_labels]                              # (n, m)
    t = cls_score.pow(alpha) * ious.pow(beta)

    inside = (
        (centers[:, None, 0] > gt_boxes[None, :, 0])
        & (centers[:, None, 0] < gt_boxes[None, :, 2])
        & (centers[:, None, 1] > gt_boxes[None, :, 1])
        & (centers[:, None, 1] < gt_boxes[None, :, 3])
    )

    claimed = torch.zeros(n, m, dtype=torch.bool, device=device)
    for gi in range(m):
        cand = inside[:, gi].nonzero(as_tuple=True)[0]
        if cand.numel() == 0:
            continue
        # stable descending sort keeps lower location index first on ties
        order = torch.argsort(-t[cand, gi], stable=True)
        claimed[cand[order[:k]], gi] = True

    t_claimed = torch.where(claimed, t, torch.full_like(t, -1.0))
    # argmax returns the first maximal index -> lower gt index wins ties
    best_gt = t_claimed.argmax(dim=1)
    is_pos = claimed.any(dim=1)
    matched = torch.where(is_pos, best_gt, torch.full_like(best_gt, -1))
    alignment = torch.where(is_pos, t.gather(1, best_gt[:, None]).squeeze(1),
                            torch.zeros(n, dtype=t.dtype, device=device))
    counts = torch.bincount(matched[is_pos], minlength=m)
    return AssignmentResult(is_pos, matched, alignment, counts)
