"""
Box geometry utilities for detection
Normalized center-format boxes, corner conversion, IoU and NMS
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

Corners = Tuple[float, float, float, float]


@dataclass(frozen=True)
class BBox:
    """
    Normalized center-format box

    cx, cy lie in [0, 1]; w, h lie in (0, 1]. Use BBox.clamped() to build
    a valid box from arbitrary (possibly out-of-frame) coordinates.
    """

    cx: float
    cy: float
    w: float
    h: float

    def is_valid(self) -> bool:
        return (
            0.0 <= self.cx <= 1.0
            and 0.0 <= self.cy <= 1.0
            and 0.0 < self.w <= 1.0
            and 0.0 < self.h <= 1.0
        )

    def to_corners(self) -> Corners:
        """(x1, y1, x2, y2) in normalized units"""
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    @classmethod
    def clamped(cls, x1: float, y1: float, x2: float, y2: float) -> Optional["BBox"]:
        """
        Clip corner coordinates to the unit square

        Returns:
            The clipped box, or None if nothing of positive area remains
        """
        x1, x2 = min(max(x1, 0.0), 1.0), min(max(x2, 0.0), 1.0)
        y1, y2 = min(max(y1, 0.0), 1.0), min(max(y2, 0.0), 1.0)
        if x2 <= x1 or y2 <= y1:
            return None
        return cls.from_corners(x1, y1, x2, y2)

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Detection:
    """
    A predicted box

    score = objectness * probability of class_id, so score <= objectness.
    """

    bbox: BBox
    objectness: float
    class_id: int
    score: float
    class_scores: Tuple[float, ...] = field(default=(), compare=False)


def xywhn_to_xyxy(b: BBox, img_w: float, img_h: float) -> Corners:
    """
    Convert a normalized center box to pixel corners

    Args:
        b: Normalized box
        img_w: Image width in pixels
        img_h: Image height in pixels

    Returns:
        (x1, y1, x2, y2) in pixels
    """
    x1, y1, x2, y2 = b.to_corners()
    return (x1 * img_w, y1 * img_h, x2 * img_w, y2 * img_h)


def xyxy_to_xywhn(x1: float, y1: float, x2: float, y2: float, img_w: float, img_h: float) -> BBox:
    """Inverse of xywhn_to_xyxy (no clamping)"""
    return BBox.from_corners(x1 / img_w, y1 / img_h, x2 / img_w, y2 / img_h)


def iou(a: Corners, b: Corners) -> float:
    """
    Intersection over union of two corner boxes

    Degenerate (zero-area) inputs give 0.
    """
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of corner boxes, shapes (N, 4) x (M, 4) -> (N, M)"""
    boxes_a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    boxes_b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(boxes_a[:, None, 2], boxes_b[None, :, 2]) - np.maximum(boxes_a[:, None, 0], boxes_b[None, :, 0])
    ih = np.minimum(boxes_a[:, None, 3], boxes_b[None, :, 3]) - np.maximum(boxes_a[:, None, 1], boxes_b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (boxes_a[:, 2] - boxes_a[:, 0]) * (boxes_a[:, 3] - boxes_a[:, 1])
    area_b = (boxes_b[:, 2] - boxes_b[:, 0]) * (boxes_b[:, 3] - boxes_b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return np.clip(out, 0.0, 1.0)


def sort_detections(dets: Sequence[Detection]) -> List[Detection]:
    """Score descending; ties by smaller class_id, then smaller cx"""
    return sorted(dets, key=lambda d: (-d.score, d.class_id, d.bbox.cx))


def nms(dets: Sequence[Detection], iou_threshold: float = 0.45) -> List[Detection]:
    """
    Greedy class-aware non-maximum suppression

    A detection is kept iff its IoU with every already-kept detection of
    the same class is <= iou_threshold. Output is in keep order.

    Args:
        dets: Candidate detections
        iou_threshold: Suppression threshold

    Returns:
        Kept detections, highest score first
    """
    kept: List[Detection] = []
    kept_corners: dict = {}
    for det in sort_detections(dets):
        corners = det.bbox.to_corners()
        same_class = kept_corners.setdefault(det.class_id, [])
        if all(iou(corners, other) <= iou_threshold for other in same_class):
            kept.append(det)
            same_class.append(corners)
    return kept


def rotate_bbox_cw(b: BBox, quarter_turns: int) -> BBox:
    """Box of an image rotated clockwise by quarter_turns * 90 degrees"""
    for _ in range(quarter_turns % 4):
        b = BBox(1.0 - b.cy, b.cx, b.h, b.w)
    return b
