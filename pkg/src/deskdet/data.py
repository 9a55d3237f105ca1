"""Dataset ingestion (YOLO text format), letterboxing, and the deterministic
synthetic desk-scene generator over the 7 behavior classes.

Each synthetic "student" is a simple glyph: a class-colored body, a head, and
a small class-specific geometry mark (raised arm, tilted head, book, ...), so
classes differ in small local cues.  Boxes are exact by construction and
every scene is a pure function of (seed, index).
"""

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .boxes import LabeledBox
from .config import SceneSpec

CLASS_NAMES = (
    "sitting_listening",
    "looking_down",
    "looking_around",
    "reading",
    "writing",
    "standing",
    "hand_raising",
)

_BODY_COLORS = (
    (60, 90, 200),    # sitting_listening: blue
    (60, 170, 80),    # looking_down: green
    (210, 200, 60),   # looking_around: yellow
    (150, 70, 190),   # reading: purple
    (70, 190, 200),   # writing: cyan
    (200, 60, 60),    # standing: red
    (230, 140, 50),   # hand_raising: orange
)
_HEAD_COLOR = (235, 205, 175)
_MARK_COLOR = (250, 250, 250)
_DESK_COLOR = (120, 90, 60)


class DatasetFormatError(ValueError):
    pass


# ---------------------------------------------------------------- rendering

def _fill_rect(img, x1, y1, x2, y2, color):
    """Fill [x1, x2) x [y1, y2) clipped to the image; returns drawn extent."""
    h, w = img.shape[:2]
    x1c, y1c = max(0, int(x1)), max(0, int(y1))
    x2c, y2c = min(w, int(x2)), min(h, int(y2))
    if x1c >= x2c or y1c >= y2c:
        return None
    img[y1c:y2c, x1c:x2c] = color
    return (x1c, y1c, x2c, y2c)


def _fill_circle(img, cx, cy, r, color):
    h, w = img.shape[:2]
    x1, y1 = max(0, int(np.floor(cx - r))), max(0, int(np.floor(cy - r)))
    x2, y2 = min(w, int(np.ceil(cx + r)) + 1), min(h, int(np.ceil(cy + r)) + 1)
    if x1 >= x2 or y1 >= y2:
        return None
    ys, xs = np.mgrid[y1:y2, x1:x2]
    mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    if not mask.any():
        return None
    img[y1:y2, x1:x2][mask] = color
    cols = np.where(mask.any(axis=0))[0]
    rows = np.where(mask.any(axis=1))[0]
    return (x1 + cols[0], y1 + rows[0], x1 + cols[-1] + 1, y1 + rows[-1] + 1)


def _merge(ext, new):
    if new is None:
        return ext
    if ext is None:
        return new
    return (min(ext[0], new[0]), min(ext[1], new[1]),
            max(ext[2], new[2]), max(ext[3], new[3]))


def _draw_student(img, class_id, cx, base_y, scale, rng):
    """Draw one glyph anchored at (cx, base_y) bottom-center; returns the
    pixel extent of everything drawn."""
    bw = max(8, int(18 * scale))          # body width
    bh = max(10, int(24 * scale))         # body height
    hr = max(3, int(6 * scale))           # head radius
    if class_id == 5:                     # standing: noticeably taller body
        bh = int(bh * 1.5)
    body_x1 = int(cx - bw / 2)
    body_y1 = int(base_y - bh)
    ext = _fill_rect(img, body_x1, body_y1, body_x1 + bw, base_y,
                     _BODY_COLORS[class_id])

    head_cx, head_cy = cx, body_y1 - hr - 1
    if class_id == 1:                     # looking_down: head sunk into body
        head_cy = body_y1 + hr // 2
    elif class_id == 2:                   # looking_around: head off to a side
        head_cx = cx + (bw // 2 + 1) * (1 if rng.random() < 0.5 else -1)
    ext = _merge(ext, _fill_circle(img, head_cx, head_cy, hr, _HEAD_COLOR))

    if class_id == 3:                     # reading: book held at chest height
        y = body_y1 + bh // 3
        ext = _merge(ext, _fill_rect(img, body_x1 - 3, y, body_x1 + bw + 3,
                                     y + max(3, bh // 5), _MARK_COLOR))
    elif class_id == 4:                   # writing: pad at desk level + arm
        y = base_y - max(3, bh // 5)
        ext = _merge(ext, _fill_rect(img, body_x1 - 2, y, body_x1 + bw // 2, base_y,
                                     _MARK_COLOR))
    elif class_id == 6:                   # hand_raising: arm above the head
        side = 1 if rng.random() < 0.5 else -1
        ax = int(cx + side * (bw // 2 + 2))
        ext = _merge(ext, _fill_rect(img, ax, body_y1 - bh, ax + max(3, bw // 5),
                                     body_y1 + bh // 3, _BODY_COLORS[class_id]))
    return ext


def synthesize_scene(spec: SceneSpec, index: int):
    """Render scene ``index`` of a spec; deterministic in (spec.seed, index).

    Returns (HxWx3 uint8 image, list of LabeledBox)."""
    spec.validate()
    rng = np.random.default_rng([spec.seed, index])
    size = spec.image_size
    img = np.full((size, size, 3), 190, dtype=np.uint8)

    cell_w = size / spec.cols
    cell_h = size / spec.rows
    # desk band across the bottom of each row
    for r in range(spec.rows):
        y = int((r + 1) * cell_h) - max(3, int(cell_h * 0.06))
        _fill_rect(img, 0, y, size, y + max(3, int(cell_h * 0.06)), _DESK_COLOR)

    freqs = np.asarray(spec.class_frequencies, dtype=np.float64)
    freqs = freqs / freqs.sum()
    boxes = []
    for r in range(spec.rows):
        for c in range(spec.cols):
            occupied = rng.random() < spec.occupancy
            class_id = int(rng.choice(7, p=freqs))
            scale = rng.uniform(*spec.scale_jitter) * min(cell_w, cell_h) / 64.0
            jx = rng.uniform(-0.08, 0.08) * cell_w
            occlude = rng.random() < spec.occlusion_prob
            if not occupied:
                continue
            cx = (c + 0.5) * cell_w + jx
            if occlude and c + 1 < spec.cols:
                cx += 0.30 * cell_w    # lean toward the neighbour seat
            base_y = (r + 1) * cell_h - max(3, int(cell_h * 0.06)) - 1
            cx = float(np.clip(cx, 14, size - 14))
            ext = _draw_student(img, class_id, cx, base_y, scale, rng)
            if ext is None:
                continue
            # one-pixel margin so the glyph sits strictly inside its box
            x1 = max(0, ext[0] - 1)
            y1 = max(0, ext[1] - 1)
            x2 = min(size, ext[2] + 1)
            y2 = min(size, ext[3] + 1)
            boxes.append(LabeledBox(
                class_id,
                (x1 + x2) / 2 / size, (y1 + y2) / 2 / size,
                (x2 - x1) / size, (y2 - y1) / size,
            ))
    return img, boxes


# -------------------------------------------------------------- YOLO format

def parse_label_file(path, num_classes=7):
    boxes = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected 'class cx cy w h', got {line!r}")
            try:
                class_id = int(parts[0])
                cx, cy, w, h = (float(v) for v in parts[1:])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
            if not (0 <= class_id < num_classes):
                raise DatasetFormatError(
                    f"{path}:{lineno}: class id {class_id} outside [0, {num_classes - 1}]")
            boxes.append(LabeledBox(class_id, cx, cy, w, h))
    return boxes


class YoloDataset:
    """images/ + labels/ with matching stems; a missing label file means a
    background image."""

    def __init__(self, root, num_classes=7):
        self.root = Path(root)
        self.num_classes = num_classes
        images_dir = self.root / "images"
        if not images_dir.is_dir():
            raise DatasetFormatError(f"{images_dir} does not exist")
        self.image_paths = sorted(images_dir.iterdir())

    def __len__(self):
        return len(self.image_paths)

    def __getitem__(self, i):
        img_path = self.image_paths[i]
        image = np.asarray(Image.open(img_path).convert("RGB"))
        label_path = self.root / "labels" / (img_path.stem + ".txt")
        boxes = parse_label_file(label_path, self.num_classes) if label_path.exists() else []
        return image, boxes


def load_yolo_dataset(root, num_classes=7) -> YoloDataset:
    return YoloDataset(root, num_classes)


# ---------------------------------------------------------------- letterbox

@dataclass
class LetterboxTransform:
    scale: float
    pad_x: float
    pad_y: float
    orig_w: int
    orig_h: int

    def box_to_letterbox(self, x1, y1, x2, y2):
        s, px, py = self.scale, self.pad_x, self.pad_y
        return (x1 * s + px, y1 * s + py, x2 * s + px, y2 * s + py)

    def box_to_original(self, x1, y1, x2, y2):
        s, px, py = self.scale, self.pad_x, self.pad_y
        return ((x1 - px) / s, (y1 - py) / s, (x2 - px) / s, (y2 - py) / s)


def letterbox(image, target_size, pad_value=114):
    """Aspect-preserving resize with symmetric gray padding to a square."""
    if target_size % 32 != 0:
        raise ValueError(f"target_size must be divisible by 32, got {target_size}")
    h, w = image.shape[:2]
    if h == 0 or w == 0:
        raise ValueError("cannot letterbox a zero-dimension image")
    scale = target_size / max(h, w)
    new_w, new_h = round(w * scale), round(h * scale)
    resized = np.asarray(
        Image.fromarray(image).resize((new_w, new_h), Image.BILINEAR))
    out = np.full((target_size, target_size, 3), pad_value, dtype=np.uint8)
    pad_x = (target_size - new_w) // 2
    pad_y = (target_size - new_h) // 2
    out[pad_y:pad_y + new_h, pad_x:pad_x + new_w] = resized
    return out, LetterboxTransform(scale, pad_x, pad_y, w, h)


# ------------------------------------------------------------------- export

def export_dataset(spec: SceneSpec, n_images, out_root, start_index=0):
    """Write images/ + labels/ in the YOLO text format; returns a summary
    with per-class instance counts."""
    out_root = Path(out_root)
    try:
        (out_root / "images").mkdir(parents=True, exist_ok=True)
        (out_root / "labels").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directories under {out_root}: {exc}") from exc
    counts = [0] * 7
    for i in range(n_images):
        image, boxes = synthesize_scene(spec, start_index + i)
        stem = f"im_{start_index + i:06d}"
        Image.fromarray(image).save(out_root / "images" / (stem + ".png"))
        with open(out_root / "labels" / (stem + ".txt"), "w") as fh:
            for b in boxes:
                fh.write(f"{b.class_id} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}\n")
                counts[b.class_id] += 1
    return {
        "n_images": n_images,
        "classes": list(CLASS_NAMES),
        "per_class_counts": {CLASS_NAMES[i]: counts[i] for i in range(7)},
    }


def write_manifest(root, splits):
    """Dataset manifest JSON {classes, splits, counts}."""
    manifest = {
        "classes": list(CLASS_NAMES),
        "splits": {name: info["n_images"] for name, info in splits.items()},
        "counts": {name: info["per_class_counts"] for name, info in splits.items()},
    }
    with open(os.path.join(root, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
