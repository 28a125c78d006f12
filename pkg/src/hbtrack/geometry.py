"""Axis-aligned box arithmetic shared by every other module.

Boxes are stored as ``(x, y, w, h)`` with ``(x, y)`` the top-left corner, in
pixels, plus a detector confidence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "BBox",
    "iou",
    "iou_matrix",
    "center_distance",
    "nms",
    "nms_indices",
    "boxes_to_array",
]


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float
    score: float = 1.0

    def __post_init__(self):
        for name in ("x", "y", "w", "h", "score"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"BBox.{name} must be finite, got {getattr(self, name)!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate box: w={self.w}, h={self.h}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def tlwh(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=float)

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h, self.score)

    def with_score(self, score: float) -> "BBox":
        return BBox(self.x, self.y, self.w, self.h, score)

    def contains(self, other: "BBox", tol: float = 1e-9) -> bool:
        """True if ``other`` lies entirely inside this box."""
        return (other.x >= self.x - tol and other.y >= self.y - tol
                and other.x2 <= self.x2 + tol and other.y2 <= self.y2 + tol)

    @classmethod
    def from_xyah(cls, cx: float, cy: float, aspect: float, h: float, score: float = 1.0) -> "BBox":
        w = aspect * h
        return cls(cx - w / 2.0, cy - h / 2.0, w, h, score)


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def boxes_to_array(boxes: Sequence[BBox]) -> np.ndarray:
    """Stack boxes into an ``(n, 4)`` tlwh array."""
    if not boxes:
        return np.zeros((0, 4))
    return np.array([[b.x, b.y, b.w, b.h] for b in boxes], dtype=float)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between two box collections.

    Accepts lists of :class:`BBox` or ``(n, 4)`` tlwh arrays.
    """
    a = boxes_to_array(a) if not isinstance(a, np.ndarray) else a
    b = boxes_to_array(b) if not isinstance(b, np.ndarray) else b
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = bx1 + b[:, 2], by1 + b[:, 3]
    iw = np.clip(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0.0, None)
    ih = np.clip(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0.0, None)
    inter = iw * ih
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return np.minimum(inter / union, 1.0)


def center_distance(a: BBox, b: BBox, diagonal: float) -> float:
    """Center-to-center distance divided by the image diagonal."""
    if not diagonal > 0:
        raise ValueError(f"image diagonal must be positive, got {diagonal}")
    (ax, ay), (bx, by) = a.center, b.center
    return math.hypot(ax - bx, ay - by) / diagonal


def nms_indices(boxes: Sequence[BBox], iou_threshold: float) -> list[int]:
    """Greedy non-maximum suppression returning survivor indices.

    Survivors are ordered by descending score; equal scores keep the smaller
    input index first.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold}")
    n = len(boxes)
    if n == 0:
        return []
    scores = np.array([b.score for b in boxes])
    order = np.argsort(-scores, kind="stable")
    ious = iou_matrix(list(boxes), list(boxes))
    suppressed = np.zeros(n, dtype=bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(int(i))
        suppressed |= ious[i] > iou_threshold
    return keep


def nms(boxes: Sequence[BBox], iou_threshold: float) -> list[BBox]:
    return [boxes[i] for i in nms_indices(boxes, iou_threshold)]
