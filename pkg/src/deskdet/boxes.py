"""Box records shared by the data pipeline, decoder and evaluator."""

from dataclasses import dataclass


@dataclass
class LabeledBox:
    """Ground-truth box in normalized center format (all coords in [0, 1])."""
    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def to_xyxy(self, image_size):
        """Corner-format pixel coordinates for a square image."""
        return (
            (self.cx - self.w / 2) * image_size,
            (self.cy - self.h / 2) * image_size,
            (self.cx + self.w / 2) * image_size,
            (self.cy + self.h / 2) * image_size,
        )


@dataclass
class DetectionBox:
    """Predicted box in corner-format pixel coordinates with confidence."""
    class_id: int
    confidence: float
    x1: float
    y1: float
    x2: float
    y2: float
