"""Axis-aligned boxes, intersection-over-union, and greedy suppression."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, TypeVar


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle with top-left origin and real-valued fields."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if self.w < 0 or self.h < 0:
            raise ValueError(f"rect dims must be non-negative, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)


def iou(a: Rect, b: Rect) -> float:
    """Intersection over union of two rects; 0 when the union has zero area."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


_Scored = TypeVar("_Scored")


def nms(dets: Sequence[_Scored], iou_thresh: float = 0.3) -> list[_Scored]:
    """Greedy non-maximum suppression over anything with .box and .score.

    Candidates are visited in descending score order (ties keep input order);
    a candidate survives unless it overlaps an already-kept box with IOU
    strictly above ``iou_thresh``. Output preserves the kept (score) order.
    """
    if not 0.0 <= iou_thresh <= 1.0:
        raise ValueError(f"iou_thresh must be in [0, 1], got {iou_thresh}")
    # sorted() is stable, so equal scores stay in insertion order.
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    kept: list[int] = []
    for i in order:
        box = dets[i].box
        if all(iou(box, dets[j].box) <= iou_thresh for j in kept):
            kept.append(i)
    return [dets[i] for i in kept]
