#!/usr/bin/env python3
"""
Entropy-Guided NMS

Fuses the safety-stream (S) and quality-stream (Q) detections of one frame.
Each detection is weighted by the patch reliability R at its box centre:

    S: score = R * conf
    Q: score = (1 - R) * conf

and the pooled set goes through class-aware NMS. Detections whose weight is
zero are kept; the tracker's confidence smoothing decides their fate.
"""

import logging
from itertools import chain
from typing import List, Sequence

from geometry import Detection, nms
from pee import ReliabilityLookupError, ReliabilityMap, reliability_at

logger = logging.getLogger(__name__)

DEFAULT_CONF_THRESH = 0.25
DEFAULT_NMS_IOU = 0.45


class StreamMismatchError(ValueError):
    """Raised when detections do not belong to the frame the reliability map covers"""


def weight_detection(det: Detection, reliability: float) -> Detection:
    if det.source == 'S':
        return det.with_score(reliability * det.conf)
    return det.with_score((1.0 - reliability) * det.conf)


def fuse(ds: Sequence[Detection], dq: Sequence[Detection], rmap: ReliabilityMap,
         conf_thresh: float = DEFAULT_CONF_THRESH,
         iou_thresh: float = DEFAULT_NMS_IOU) -> List[Detection]:
    """
    Reliability-weight both streams and suppress the pooled candidates.

    Args:
        ds: Safety-stream detections (source S)
        dq: Quality-stream detections (source Q)
        rmap: Reliability map of the frame both streams saw
        conf_thresh: Minimum raw confidence, applied before weighting
        iou_thresh: NMS overlap threshold

    Returns:
        Surviving detections carrying both conf and the weighted score
    """
    for det in ds:
        if det.source != 'S':
            raise StreamMismatchError(f"safety stream contains a {det.source} detection")
    for det in dq:
        if det.source != 'Q':
            raise StreamMismatchError(f"quality stream contains a {det.source} detection")

    pooled: List[Detection] = []
    for det in chain(ds, dq):
        if det.conf < conf_thresh:
            continue
        cx, cy = det.box.center
        try:
            r = reliability_at(rmap, cx, cy)
        except ReliabilityLookupError as e:
            raise StreamMismatchError(f"detection centre ({cx:.1f}, {cy:.1f}) outside the reliability map: {e}") from e
        pooled.append(weight_detection(det, r))

    fused = nms(pooled, iou_thresh)
    logger.debug(f"EG-NMS: {len(ds)} S + {len(dq)} Q -> {len(pooled)} candidates -> {len(fused)} kept")
    return fused
