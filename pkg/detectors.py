#!/usr/bin/env python3
"""
Detector contract and deterministic synthetic detectors

The pipeline runs two detector roles: a fast one for the safety stream (S)
and a strong one for the quality stream (Q). Any object with a
``detect(frame) -> List[Detection]`` method fills a role. Two deterministic
implementations are provided for runs without neural weights:

    oracle    returns the frame's sidecar ground-truth boxes, each with
              conf = clamp(RMS contrast in box / reference contrast)
    contrast  proposes boxes from connected high-gradient regions, with
              conf = clamp(RMS contrast in box / 80)

Both lose confidence as weather washes out local contrast and regain it
when enhancement restores it.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Protocol

import cv2
import numpy as np

from geometry import Box, Detection, GtBox
from imaging import rms_contrast, to_gray, validate_raster

logger = logging.getLogger(__name__)

DEFAULT_ORACLE_REF_CONTRAST = 60.0
DEFAULT_CONTRAST_REF = 80.0
DEFAULT_GRADIENT_THRESHOLD = 20.0
DEFAULT_MIN_AREA = 64
MAX_ASPECT = 8.0


class MissingSidecarError(ValueError):
    """Raised when the oracle detector gets a frame without ground truth"""


@dataclass(frozen=True)
class Frame:
    """A captured frame: raster, sequence number, capture time and optional GT sidecar."""
    raster: np.ndarray
    t_index: int
    t_capture: float = 0.0  # milliseconds on the run clock
    annotations: Optional[List[GtBox]] = None


class DetectorContract(Protocol):
    def detect(self, frame: Frame) -> List[Detection]:
        ...


def _clamp01(value: float) -> float:
    return float(min(max(value, 0.0), 1.0))


class OracleDetector:
    """Ground-truth detector whose confidence tracks local contrast."""

    def __init__(self, ref_contrast: float = DEFAULT_ORACLE_REF_CONTRAST, source: str = 'S'):
        if ref_contrast <= 0:
            raise ValueError(f"reference contrast must be > 0, got {ref_contrast}")
        self.ref_contrast = ref_contrast
        self.source = source

    def detect(self, frame: Frame) -> List[Detection]:
        if frame.annotations is None:
            raise MissingSidecarError(f"frame {frame.t_index} has no ground-truth sidecar")
        validate_raster(frame.raster)
        dets = []
        for gt in frame.annotations:
            ref = gt.ref_contrast or self.ref_contrast
            conf = _clamp01(rms_contrast(frame.raster, gt.box) / ref)
            dets.append(Detection(box=gt.box, class_id=gt.class_id, conf=conf, source=self.source))
        return dets


class ContrastDetector:
    """
    Gradient-blob detector.

    Sobel magnitude (scaled to grey levels) above ``threshold`` is closed
    with a 3x3 element; each connected component with at least ``min_area``
    pixels and an aspect ratio within 1:8 becomes one box of ``class_id``.
    """

    def __init__(self, threshold: float = DEFAULT_GRADIENT_THRESHOLD,
                 min_area: int = DEFAULT_MIN_AREA,
                 ref_contrast: float = DEFAULT_CONTRAST_REF,
                 class_id: int = 2, source: str = 'S'):
        self.threshold = threshold
        self.min_area = min_area
        self.ref_contrast = ref_contrast
        self.class_id = class_id
        self.source = source

    def gradient_mask(self, raster: np.ndarray) -> np.ndarray:
        gray = to_gray(raster).astype(np.float64)
        gx = cv2.Sobel(gray, cv2.CV_64F, 1, 0, ksize=3)
        gy = cv2.Sobel(gray, cv2.CV_64F, 0, 1, ksize=3)
        magnitude = np.hypot(gx, gy) / 4.0
        mask = np.where(magnitude > self.threshold, 255, 0).astype(np.uint8)
        return cv2.morphologyEx(mask, cv2.MORPH_CLOSE, np.ones((3, 3), np.uint8))

    def detect(self, frame: Frame) -> List[Detection]:
        raster = validate_raster(frame.raster)
        mask = self.gradient_mask(raster)
        count, _, stats, _ = cv2.connectedComponentsWithStats(mask, connectivity=8)

        dets = []
        for label in range(1, count):
            x, y, w, h, area = (int(v) for v in stats[label])
            if area < self.min_area:
                continue
            if not (1.0 / MAX_ASPECT <= w / h <= MAX_ASPECT):
                continue
            box = Box(float(x), float(y), float(x + w), float(y + h))
            conf = _clamp01(rms_contrast(raster, box) / self.ref_contrast)
            dets.append(Detection(box=box, class_id=self.class_id, conf=conf, source=self.source))
        logger.debug(f"Contrast detector: {count - 1} components, {len(dets)} detections on frame {frame.t_index}")
        return dets


def synthetic_detector(kind: str, source: str = 'S', **kwargs) -> DetectorContract:
    """
    Build one of the deterministic detectors.

    Args:
        kind: 'oracle' or 'contrast'
        source: Stream tag for the detections ('S' or 'Q')
        **kwargs: Passed to the detector constructor
    """
    if kind == 'oracle':
        return OracleDetector(source=source, **kwargs)
    if kind == 'contrast':
        return ContrastDetector(source=source, **kwargs)
    raise ValueError(f"unknown detector kind {kind!r}, expected 'oracle' or 'contrast'")
