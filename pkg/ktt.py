#!/usr/bin/env python3
"""
Kalman Temporal Tracker

SORT-style multi-object tracker over the state

    x = [cx, cy, a, h, vx, vy, va]

where a is the box aspect ratio (w / h) and h carries no velocity term.
Thread S calls update_frame once per camera frame; Thread Q calls
inject_async with fused detections that are k frames old. Both paths share
the association core: Hungarian matching on 1 - IoU, pairs under the IoU
gate stay unmatched.

Track lifecycle:
    - born after 1 hit
    - removed after 3 consecutive missed frames (frame updates only)
    - confidence smoothed as 0.7 * new + 0.3 * previous
"""

import itertools
import logging
import math
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from filterpy.kalman import predict, update

from geometry import Box, Detection, hungarian, iou_matrix

logger = logging.getLogger(__name__)

DIM_X = 7
DIM_Z = 4

# Constant-velocity transition: cx, cy and a advance by their velocities
F = np.eye(DIM_X)
F[0, 4] = F[1, 5] = F[2, 6] = 1.0

H = np.eye(DIM_Z, DIM_X)

_MIN_HEIGHT = 1e-3
_MIN_ASPECT = 1e-6


@dataclass(frozen=True)
class TrackerParams:
    q_diag: Tuple[float, ...] = (1.0, 1.0, 1e-2, 1e-2, 1e-2, 1e-2, 1e-2)
    r_diag: Tuple[float, ...] = (1.0, 1.0, 1e-1, 1e-1)
    p0_diag: Tuple[float, ...] = (10.0, 10.0, 10.0, 10.0, 1e3, 1e3, 1e3)
    iou_gate: float = 0.3
    max_misses: int = 3
    smoothing: float = 0.7

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q_diag)

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.r_diag)

    @property
    def P0(self) -> np.ndarray:
        return np.diag(self.p0_diag)


DEFAULT_PARAMS = TrackerParams()


@dataclass(frozen=True, eq=False)
class KalmanState:
    x: np.ndarray
    P: np.ndarray

    def box(self) -> Box:
        return z_to_box(self.x[:DIM_Z])


@dataclass(frozen=True)
class Track:
    track_id: int
    class_id: int
    state: KalmanState
    conf_smooth: float
    hits: int = 1
    misses: int = 0
    age: int = 0
    version: int = 0

    @property
    def box(self) -> Box:
        return self.state.box()


@dataclass(frozen=True, eq=False)
class Measurement:
    """A detection ready for association: observation, its noise and a birth state."""
    det: Detection
    z: np.ndarray
    R: np.ndarray
    birth: KalmanState = field(compare=False)


class TrackIdAllocator:
    """Monotone, thread-safe source of track IDs; IDs are never reused."""

    def __init__(self, start: int = 0):
        self._counter = itertools.count(start)
        self._lock = threading.Lock()

    def __call__(self) -> int:
        with self._lock:
            return next(self._counter)


def box_to_z(box: Box) -> np.ndarray:
    cx, cy = box.center
    return np.array([cx, cy, box.width / box.height, box.height], dtype=np.float64)


def z_to_box(z: np.ndarray) -> Box:
    cx, cy, a, h = (float(v) for v in z[:DIM_Z])
    h = max(h, _MIN_HEIGHT)
    w = max(a, _MIN_ASPECT) * h
    return Box.from_center(cx, cy, w, h)


def initiate(box: Box, params: TrackerParams = DEFAULT_PARAMS) -> KalmanState:
    x = np.zeros(DIM_X)
    x[:DIM_Z] = box_to_z(box)
    return KalmanState(x=x, P=params.P0.copy())


def _symmetrise(P: np.ndarray) -> np.ndarray:
    return (P + P.T) / 2.0


def predict_step(s: KalmanState, params: TrackerParams = DEFAULT_PARAMS) -> KalmanState:
    x, P = predict(s.x, s.P, F=F, Q=params.Q)
    return KalmanState(x=x, P=_symmetrise(P))


def update_step(s: KalmanState, z: np.ndarray, R: np.ndarray) -> KalmanState:
    x, P = update(s.x, s.P, z, R, H=H)
    return KalmanState(x=x, P=_symmetrise(P))


def smooth_confidence(prev: float, new: float, weight: float = 0.7) -> float:
    if not (0.0 <= prev <= 1.0 and 0.0 <= new <= 1.0):
        raise ValueError(f"confidences must be in [0, 1], got prev={prev} new={new}")
    return min(max(weight * new + (1.0 - weight) * prev, 0.0), 1.0)


def lag_frames(dt_q_ms: float, t_cam_ms: float) -> int:
    """Frames elapsed during a quality cycle: ceil(dt_q / T_cam)."""
    if t_cam_ms <= 0:
        raise ValueError(f"camera period must be > 0, got {t_cam_ms}")
    # rounding guards exact multiples against float noise
    return max(0, math.ceil(round(dt_q_ms / t_cam_ms, 9)))


def assign_and_update(tracks: Sequence[Track], measurements: Sequence[Measurement],
                      new_id: Callable[[], int], count_misses: bool,
                      params: TrackerParams = DEFAULT_PARAMS) -> List[Track]:
    """
    Associate measurements with tracks and apply the lifecycle rules.

    Args:
        tracks: Current tracks (already predicted to the measurement time)
        measurements: Observations to associate
        new_id: ID source for births
        count_misses: Whether unmatched tracks accrue misses (frame updates)
            or are left untouched (injection)
        params: Noise matrices and lifecycle constants

    Returns:
        The new track list: survivors in their original order, then births
    """
    matches = {}
    if tracks and measurements:
        ious = iou_matrix([t.box for t in tracks], [z_to_box(m.z) for m in measurements])
        for i, t in enumerate(tracks):
            for j, m in enumerate(measurements):
                if t.class_id != m.det.class_id:
                    ious[i, j] = 0.0
        for i, j in hungarian(1.0 - ious):
            if ious[i, j] >= params.iou_gate:
                matches[i] = j

    result: List[Track] = []
    for i, t in enumerate(tracks):
        if i in matches:
            m = measurements[matches[i]]
            result.append(replace(
                t,
                state=update_step(t.state, m.z, m.R),
                conf_smooth=smooth_confidence(t.conf_smooth, m.det.score, params.smoothing),
                hits=t.hits + 1,
                misses=0,
                version=t.version + 1,
            ))
        elif count_misses:
            missed = replace(t, misses=t.misses + 1, version=t.version + 1)
            if missed.misses >= params.max_misses:
                logger.debug(f"Track {t.track_id} removed after {missed.misses} missed frames")
                continue
            result.append(missed)
        else:
            result.append(t)

    matched = set(matches.values())
    for j, m in enumerate(measurements):
        if j in matched:
            continue
        result.append(Track(
            track_id=new_id(),
            class_id=m.det.class_id,
            state=m.birth,
            conf_smooth=min(max(m.det.score, 0.0), 1.0),
        ))
    return result


def _fallback_ids(tracks: Sequence[Track]) -> TrackIdAllocator:
    return TrackIdAllocator(max((t.track_id for t in tracks), default=-1) + 1)


def update_frame(tracks: Sequence[Track], dets: Sequence[Detection],
                 iou_gate: Optional[float] = None,
                 params: TrackerParams = DEFAULT_PARAMS,
                 new_id: Optional[Callable[[], int]] = None) -> List[Track]:
    """
    Per-frame tracker step for the safety thread.

    Args:
        tracks: Live tracks
        dets: Detections of the current frame
        iou_gate: Minimum IoU for a match (defaults to params.iou_gate)
        params: Tracker parameters
        new_id: ID source; pass a shared TrackIdAllocator across a run

    Returns:
        Updated track list
    """
    if iou_gate is not None:
        params = replace(params, iou_gate=iou_gate)
    ids = new_id or _fallback_ids(tracks)
    predicted = [replace(t, state=predict_step(t.state, params), age=t.age + 1) for t in tracks]
    R = params.R
    measurements = [Measurement(det=d, z=box_to_z(d.box), R=R, birth=initiate(d.box, params)) for d in dets]
    return assign_and_update(predicted, measurements, ids, count_misses=True, params=params)


def project_detection(det: Detection, k: int, params: TrackerParams = DEFAULT_PARAMS) -> Measurement:
    """
    Advance a late detection k prediction steps from a zero-velocity state.

    The covariance growth over the k steps is added to the measurement noise,
    so a k = 0 projection is an ordinary measurement.
    """
    start = initiate(det.box, params)
    projected = start
    for _ in range(k):
        projected = predict_step(projected, params)
    inflation = H @ (projected.P - start.P) @ H.T
    return Measurement(det=det, z=H @ projected.x, R=params.R + inflation, birth=projected)


def inject_async(tracks: Sequence[Track], fused: Sequence[Detection], k: int,
                 params: TrackerParams = DEFAULT_PARAMS,
                 new_id: Optional[Callable[[], int]] = None) -> List[Track]:
    """
    Inject quality-stream detections that are k frames old.

    Matched tracks are refined and unmatched detections spawn tracks; no track
    is ever removed and no miss counter changes.
    """
    if k < 0:
        raise ValueError(f"lag must be >= 0, got {k}")
    ids = new_id or _fallback_ids(tracks)
    measurements = [project_detection(d, k, params) for d in fused]
    result = assign_and_update(list(tracks), measurements, ids, count_misses=False, params=params)
    assert len(result) >= len(tracks)
    return result


class TrackStore:
    """
    The shared live track list.

    Writers compute a new list from a snapshot outside the lock and splice it
    back in a short critical section:

    - the safety commit always wins; it drops the tracks it removed and keeps
      tracks born in the quality thread since its snapshot
    - the quality commit replaces a track only if nobody changed it since the
      snapshot, appends its births, and never removes anything
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._tracks: List[Track] = []

    def snapshot(self) -> List[Track]:
        with self._lock:
            return list(self._tracks)

    def commit_safety(self, base: Sequence[Track], result: Sequence[Track]) -> List[Track]:
        base_ids = {t.track_id for t in base}
        result_ids = {t.track_id for t in result}
        with self._lock:
            foreign = [t for t in self._tracks if t.track_id not in base_ids and t.track_id not in result_ids]
            self._tracks = list(result) + foreign
            return list(self._tracks)

    def commit_quality(self, base: Sequence[Track], result: Sequence[Track]) -> int:
        """
        Returns:
            Number of refinements dropped because the track changed meanwhile
        """
        base_versions = {t.track_id: t.version for t in base}
        conflicts = 0
        with self._lock:
            position = {t.track_id: i for i, t in enumerate(self._tracks)}
            tracks = list(self._tracks)
            for t in result:
                if t.track_id not in base_versions:
                    tracks.append(t)
                    continue
                if t.version == base_versions[t.track_id]:
                    continue
                i = position.get(t.track_id)
                if i is None or tracks[i].version != base_versions[t.track_id]:
                    conflicts += 1
                    continue
                tracks[i] = t
            self._tracks = tracks
        return conflicts

    def __len__(self) -> int:
        with self._lock:
            return len(self._tracks)


def format_track_log(frame_idx: int, tracks: Iterable[Track]) -> List[str]:
    """One line per track: frame, id, class, x1, y1, x2, y2, smoothed confidence."""
    lines = []
    for t in tracks:
        b = t.box
        lines.append(f"{frame_idx},{t.track_id},{t.class_id},{b.x1:.2f},{b.y1:.2f},{b.x2:.2f},{b.y2:.2f},{t.conf_smooth:.4f}")
    return lines


def format_detection_log(frame_idx: int, dets: Iterable[Detection]) -> List[str]:
    """Raw detections in the track log format, with track id -1."""
    lines = []
    for d in dets:
        b = d.box
        lines.append(f"{frame_idx},-1,{d.class_id},{b.x1:.2f},{b.y1:.2f},{b.x2:.2f},{b.y2:.2f},{d.conf:.4f}")
    return lines
