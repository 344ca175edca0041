#!/usr/bin/env python3
"""
Boxes, detections and the assignment primitives shared by fusion, tracking
and evaluation.

Boxes use continuous pixel coordinates; areas are exact (no +1 pixel
convention).
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

logger = logging.getLogger(__name__)

SOURCES = ('S', 'Q')


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"invalid box ({self.x1}, {self.y1}, {self.x2}, {self.y2})")

    @classmethod
    def from_center(cls, cx: float, cy: float, width: float, height: float) -> 'Box':
        return cls(cx - width / 2.0, cy - height / 2.0, cx + width / 2.0, cy + height / 2.0)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return self.x1, self.y1, self.x2, self.y2


@dataclass(frozen=True)
class Detection:
    """
    A detector output.

    ``conf`` is the raw detector confidence; ``score`` is the value NMS ranks
    by and defaults to ``conf`` until entropy-guided weighting replaces it.
    """
    box: Box
    class_id: int
    conf: float
    source: str = 'S'
    score: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.conf <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.conf}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown detection source {self.source!r}")
        if self.score is None:
            object.__setattr__(self, 'score', self.conf)
        elif self.score < 0:
            raise ValueError(f"score must be >= 0, got {self.score}")

    def with_score(self, score: float) -> 'Detection':
        return replace(self, score=score)


@dataclass(frozen=True)
class GtBox:
    """A ground-truth object: class, box and optional clean reference contrast."""
    class_id: int
    box: Box
    name: str = ''
    ref_contrast: Optional[float] = field(default=None, compare=False)


def iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes_a: Sequence[Box], boxes_b: Sequence[Box]) -> np.ndarray:
    """Pairwise IoU as an (len(a), len(b)) array."""
    if not boxes_a or not boxes_b:
        return np.zeros((len(boxes_a), len(boxes_b)))
    a = np.array([b.as_tuple() for b in boxes_a], dtype=np.float64)
    b = np.array([b.as_tuple() for b in boxes_b], dtype=np.float64)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def _rank_key(det: Detection):
    return (-det.score, det.class_id, det.box.x1, det.box.y1)


def nms(dets: Sequence[Detection], iou_thresh: float) -> List[Detection]:
    """
    Greedy class-aware non-maximum suppression.

    Detections are visited by descending score (ties by class, x1, y1); a
    detection is dropped when it overlaps a kept detection of the same class
    with IoU above the threshold. Scores are returned untouched.
    """
    if not 0.0 < iou_thresh < 1.0:
        raise ValueError(f"NMS IoU threshold must be in (0, 1), got {iou_thresh}")
    kept: List[Detection] = []
    for det in sorted(dets, key=_rank_key):
        if all(k.class_id != det.class_id or iou(k.box, det.box) <= iou_thresh for k in kept):
            kept.append(det)
    return kept


def hungarian(cost) -> List[Tuple[int, int]]:
    """
    Minimum-cost assignment on a rectangular cost matrix.

    Returns:
        (row, col) pairs; surplus rows or columns stay unassigned
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.size == 0:
        return []
    if c.ndim != 2:
        raise ValueError(f"cost must be a 2-D matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(c)
    return [(int(r), int(col)) for r, col in zip(rows, cols)]
