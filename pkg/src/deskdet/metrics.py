"""Detection evaluation: IoU, per-class NMS, average precision with
all-point (precision-envelope) interpolation, and the aggregate report."""

from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from .boxes import DetectionBox

IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))

GroundTruthBox = namedtuple("GroundTruthBox", "class_id x1 y1 x2 y2")


def iou(a, b):
    """Intersection over union of two corner-format boxes; 0 for zero union."""
    ix1, iy1 = max(a[-4], b[-4]), max(a[-3], b[-3])
    ix2, iy2 = min(a[-2], b[-2]), min(a[-1], b[-1])
    iw, ih = max(0.0, ix2 - ix1), max(0.0, iy2 - iy1)
    inter = iw * ih
    area_a = max(0.0, a[-2] - a[-4]) * max(0.0, a[-1] - a[-3])
    area_b = max(0.0, b[-2] - b[-4]) * max(0.0, b[-1] - b[-3])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def _box(d):
    return (d.x1, d.y1, d.x2, d.y2)


def nms(dets, iou_threshold):
    """Greedy per-class suppression by descending confidence; confidence ties
    keep the lower-index box first."""
    if not (0.0 < iou_threshold < 1.0):
        raise ValueError(f"iou_threshold must be in (0, 1), got {iou_threshold}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    kept = []
    for i in order:
        d = dets[i]
        if all(k.class_id != d.class_id or iou(_box(k), _box(d)) <= iou_threshold
               for k in kept):
            kept.append(d)
    return kept


def _match_detections(dets, gts, iou_threshold):
    """Greedy matching for one class over many images.

    dets: list of (image_idx, DetectionBox) already filtered to the class;
    gts: list of (image_idx, box-tuple).  Returns tp flags aligned with the
    confidence-descending detection order.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1].confidence, i))
    gt_by_image = {}
    for gi, (img, g) in enumerate(gts):
        gt_by_image.setdefault(img, []).append((gi, g))
    matched = set()
    tp = np.zeros(len(dets), dtype=bool)
    for rank, di in enumerate(order):
        img, d = dets[di]
        best_iou, best_gi = -1.0, None
        for gi, g in gt_by_image.get(img, []):
            if gi in matched:
                continue
            v = iou(_box(d), g)
            if v > best_iou:  # strict: IoU ties keep the lower gt index
                best_iou, best_gi = v, gi
        if best_gi is not None and best_iou >= iou_threshold:
            matched.add(best_gi)
            tp[rank] = True
    return tp


def average_precision(dets, gts, iou_threshold, class_id):
    """All-point interpolated AP for one class.

    dets: list of (image_idx, DetectionBox); gts: list of (image_idx, gt).
    Returns None when the class has no ground-truth instances.
    """
    cls_dets = [(i, d) for i, d in dets if d.class_id == class_id]
    cls_gts = [(i, (g.x1, g.y1, g.x2, g.y2)) for i, g in gts if g.class_id == class_id]
    if not cls_gts:
        return None
    if not cls_dets:
        return 0.0
    tp = _match_detections(cls_dets, cls_gts, iou_threshold)
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    recall = tp_cum / len(cls_gts)
    precision = tp_cum / (tp_cum + fp_cum)

    # precision envelope over recall, integrated at recall change points
    r = np.concatenate(([0.0], recall, [1.0]))
    p = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(p) - 2, -1, -1):
        p[i] = max(p[i], p[i + 1])
    idx = np.where(r[1:] != r[:-1])[0]
    return float(np.sum((r[idx + 1] - r[idx]) * p[idx + 1]))


@dataclass
class EvalReport:
    class_names: list
    ap: dict                      # class_id -> {iou_threshold: AP} (present classes only)
    precision: float
    recall: float
    map50: float
    map50_95: float
    gt_counts: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "precision": self.precision,
            "recall": self.recall,
            "mAP50": self.map50,
            "mAP50-95": self.map50_95,
            "per_class_ap": {
                self.class_names[c]: {f"{t:.2f}": v for t, v in aps.items()}
                for c, aps in sorted(self.ap.items())
            },
            "gt_counts": {self.class_names[c]: n for c, n in sorted(self.gt_counts.items())},
        }

    def to_csv(self):
        lines = ["class,iou_threshold,ap"]
        for c, aps in sorted(self.ap.items()):
            for t, v in sorted(aps.items()):
                lines.append(f"{self.class_names[c]},{t:.2f},{v:.6f}")
        return "\n".join(lines) + "\n"


def evaluate(dets_per_image, gts_per_image, conf_threshold=0.25,
             nms_threshold=0.60, class_names=None):
    """Full protocol: per-class NMS, AP at the 10 IoU thresholds, and a
    micro-averaged P/R operating point at IoU 0.50."""
    if len(dets_per_image) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    if len(dets_per_image) != len(gts_per_image):
        raise ValueError("detection and ground-truth image counts differ")

    post = [nms(d, nms_threshold) for d in dets_per_image]
    flat_dets = [(i, d) for i, dets in enumerate(post) for d in dets]
    flat_gts = [(i, g) for i, gts in enumerate(gts_per_image) for g in gts]

    present = sorted({g.class_id for _, g in flat_gts})
    ap = {c: {} for c in present}
    for c in present:
        for t in IOU_THRESHOLDS:
            ap[c][t] = average_precision(flat_dets, flat_gts, t, c)

    if present:
        map50 = float(np.mean([ap[c][0.50] for c in present]))
        map5095 = float(np.mean([ap[c][t] for c in present for t in IOU_THRESHOLDS]))
    else:
        map50 = map5095 = 0.0

    # operating-point P/R at IoU 0.50, micro-averaged over classes
    tp = fp = 0
    for c in sorted({d.class_id for _, d in flat_dets} | set(present)):
        cls_dets = [(i, d) for i, d in flat_dets
                    if d.class_id == c and d.confidence >= conf_threshold]
        cls_gts = [(i, (g.x1, g.y1, g.x2, g.y2)) for i, g in flat_gts if g.class_id == c]
        flags = _match_detections(cls_dets, cls_gts, 0.50)
        tp += int(flags.sum())
        fp += int(len(flags) - flags.sum())
    n_gts = len(flat_gts)
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / n_gts if n_gts > 0 else 0.0

    counts = {}
    for _, g in flat_gts:
        counts[g.class_id] = counts.get(g.class_id, 0) + 1
    names = class_names or [str(i) for i in range(max(present, default=-1) + 1)]
    return EvalReport(names, ap, precision, recall, map50, map5095, counts)
