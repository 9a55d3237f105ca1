"""SGD training loop with warmup, JSON-line loss logging, and dataset-level
prediction for evaluation."""

import os

import numpy as np
import torch

from .config import RunConfig
from .data import YoloDataset, letterbox
from .losses import DetectionLoss
from .metrics import GroundTruthBox, evaluate
from .model import DetectorModel, build_model, decode_predictions, save_checkpoint


def _prepare(dataset: YoloDataset, input_size):
    """Letterbox every image once; returns (uint8 images, per-image gt
    tensors in letterboxed pixel coords)."""
    images, gt_boxes, gt_labels = [], [], []
    for i in range(len(dataset)):
        image, boxes = dataset[i]
        lb, tf = letterbox(image, input_size)
        images.append(lb)
        xyxy, labels = [], []
        for b in boxes:
            # normalized coords refer to the original image frame
            ox1 = (b.cx - b.w / 2) * image.shape[1]
            oy1 = (b.cy - b.h / 2) * image.shape[0]
            ox2 = (b.cx + b.w / 2) * image.shape[1]
            oy2 = (b.cy + b.h / 2) * image.shape[0]
            xyxy.append(tf.box_to_letterbox(ox1, oy1, ox2, oy2))
            labels.append(b.class_id)
        gt_boxes.append(torch.tensor(xyxy, dtype=torch.float32).reshape(-1, 4))
        gt_labels.append(torch.tensor(labels, dtype=torch.long))
    return np.stack(images), gt_boxes, gt_labels


def _to_input(batch_uint8):
    x = torch.from_numpy(batch_uint8).to(torch.float32) / 255.0
    return x.permute(0, 3, 1, 2).contiguous()


def train(cfg: RunConfig, dataset_root, out_dir, log_stream=None):
    """Train per the run config; writes train_log.jsonl, final.ckpt and
    best.ckpt under out_dir.  Returns (model, final LossBreakdown)."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    dataset = YoloDataset(dataset_root, cfg.model.num_classes)
    if len(dataset) == 0:
        raise ValueError(f"dataset at {dataset_root} has no images")
    images, gt_boxes, gt_labels = _prepare(dataset, cfg.model.input_size)

    model = build_model(cfg.model)
    model.train()
    criterion = DetectionLoss(
        cfg.model.num_classes, cfg.model.dfl_bins, cfg.model.input_size,
        enable_C=cfg.model.enable_C, atf=cfg.atf,
        assigner=cfg.assigner, weights=cfg.loss_weights)

    opt = cfg.optimizer
    optimizer = torch.optim.SGD(model.parameters(), lr=opt.learning_rate,
                                momentum=opt.momentum, weight_decay=opt.weight_decay)
    rng = np.random.default_rng(cfg.model.seed)
    order = rng.permutation(len(dataset))
    cursor = 0

    best_total = float("inf")
    breakdown = None
    log_path = os.path.join(out_dir, "train_log.jsonl")
    with open(log_path, "w") as log:
        for step in range(opt.iterations):
            if cursor + opt.batch_size > len(order):
                order = rng.permutation(len(dataset))
                cursor = 0
            idx = order[cursor:cursor + opt.batch_size]
            cursor += opt.batch_size

            lr = opt.learning_rate * min(1.0, (step + 1) / max(1, opt.warmup_steps))
            for group in optimizer.param_groups:
                group["lr"] = lr

            x = _to_input(images[idx])
            total, breakdown = criterion(
                model(x), [gt_boxes[i] for i in idx], [gt_labels[i] for i in idx])
            optimizer.zero_grad()
            total.backward()
            optimizer.step()

            line = breakdown.log_line(step, criterion.tau)
            log.write(line + "\n")
            if log_stream is not None:
                print(line, file=log_stream)
            if breakdown.total < best_total:
                best_total = breakdown.total
                save_checkpoint(model, os.path.join(out_dir, "best.ckpt"))
    save_checkpoint(model, os.path.join(out_dir, "final.ckpt"))
    return model, breakdown


def predict_dataset(model: DetectorModel, dataset_root, conf_threshold=0.001,
                    batch_size=8):
    """Run inference over a dataset; returns (dets_per_image, gts_per_image)
    in letterboxed pixel coordinates, detections pre-NMS."""
    cfg = model.cfg
    dataset = YoloDataset(dataset_root, cfg.num_classes)
    if len(dataset) == 0:
        raise ValueError(f"dataset at {dataset_root} has no images")
    images, gt_boxes, gt_labels = _prepare(dataset, cfg.input_size)

    model.eval()
    dets_per_image, gts_per_image = [], []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            x = _to_input(images[start:start + batch_size])
            raw = model(x)
            dets_per_image.extend(
                decode_predictions(raw, conf_threshold, cfg.dfl_bins, cfg.input_size))
    for boxes_t, labels_t in zip(gt_boxes, gt_labels):
        gts_per_image.append([
            GroundTruthBox(int(l), *map(float, b))
            for b, l in zip(boxes_t.tolist(), labels_t.tolist())
        ])
    return dets_per_image, gts_per_image


def evaluate_model(model, dataset_root, conf_threshold=0.25, nms_threshold=0.60):
    from .data import CLASS_NAMES

    dets, gts = predict_dataset(model, dataset_root)
    return evaluate(dets, gts, conf_threshold, nms_threshold, list(CLASS_NAMES))
