#!/usr/bin/env python3
"""
CADENet Pipeline

Three workers over one camera stream:

    Thread S  fast detector + tracker update, once per camera frame
    Thread Q  WEM -> PEE -> CAPE -> strong detector -> EG-NMS -> k-step injection,
              always on the newest frame S has finished
    Thread E  zero-shot weather label -> scene embedding -> SED recommendation
              -> slot publish -> SED append, on the newest Q output

Thread S never waits for Q or E. The workers share three things only: the
track store (short critical section), the analytics slot (wait-free) and
two latest-value mailboxes (S to Q, Q to E).

Two runners drive the same per-stream logic:
    - SimulatedRunner: discrete-event virtual clock with a stage cost model;
      deterministic, used for tests and ablations
    - ThreadedRunner: three threading.Thread workers on the monotonic clock,
      frames delivered by the capture scheduler

Features:
    - Ablations A1..A7 as flags
    - Stage latency measurement with the GPU (10 + 50) and CPU (5 + 100)
      timing disciplines
    - Safety output period, Thread Q latency, injection lag and slot
      version statistics per run
"""

import heapq
import itertools
import logging
import queue
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from cape import EnhanceReport, FilterConfig, FilterConfigError, apply_recommendation, enhance, passthrough
from capture import CaptureScheduler
from detectors import DetectorContract, Frame, synthetic_detector
from egnms import DEFAULT_CONF_THRESH, DEFAULT_NMS_IOU, fuse
from geometry import Box, Detection
from imaging import luma
from ktt import (
    DEFAULT_PARAMS,
    TrackerParams,
    TrackIdAllocator,
    TrackStore,
    format_detection_log,
    format_track_log,
    inject_async,
    lag_frames,
    update_frame,
)
from pee import entropy_map, uniform_map
from sed import (
    DEFAULT_DIM,
    DEFAULT_PROMPTS,
    AtomicSlot,
    HeuristicPromptScorer,
    PseudoEmbedder,
    SceneDatabase,
    SedEntry,
    SlotRecord,
    publish_slot,
)
from wem import DEFAULT_SPREAD_THRESHOLD, WeatherEstimate, estimate, resolve

logger = logging.getLogger(__name__)

DEFAULT_FPS = 30.0
FIXED_SEVERITY = 0.6
UNIFORM_RELIABILITY = 0.5

ABLATIONS = {
    'A1': 'blocking_single_thread',
    'A2': 'pee_uniform_half',
    'A3': 'fixed_severity_0_6',
    'A4': 'cape_passthrough',
    'A5': 'egnms_s_only',
    'A6': 'ktt_raw_detections',
    'A7': 'thread_e_disabled',
}

# Warmup and timed call counts per timing discipline
TIMING_DISCIPLINES = {
    'gpu': (10, 50),
    'cpu': (5, 100),
}

DEFAULT_CAPE_COSTS = {'fog': 80.0, 'rain': 64.0, 'sand': 15.0, 'snow': 15.0, 'clear': 0.0}


@dataclass(frozen=True)
class AblationFlags:
    blocking_single_thread: bool = False
    pee_uniform_half: bool = False
    fixed_severity_0_6: bool = False
    cape_passthrough: bool = False
    egnms_s_only: bool = False
    ktt_raw_detections: bool = False
    thread_e_disabled: bool = False

    @classmethod
    def from_ids(cls, ids) -> 'AblationFlags':
        """Build flags from ablation IDs, given as a list or a comma-separated string."""
        if isinstance(ids, str):
            ids = [part for part in ids.split(',') if part.strip()]
        kwargs = {}
        for raw in ids:
            key = raw.strip().upper()
            if key not in ABLATIONS:
                raise ValueError(f"unknown ablation id {raw!r}, expected one of {', '.join(ABLATIONS)}")
            kwargs[ABLATIONS[key]] = True
        return cls(**kwargs)

    def ids(self) -> List[str]:
        return [ablation_id for ablation_id, name in ABLATIONS.items() if getattr(self, name)]


@dataclass(frozen=True)
class StageCosts:
    """Simulated stage durations in milliseconds."""
    s_detect: float = 23.0
    q_detect: float = 28.0
    wem: float = 2.0
    pee: float = 1.0
    cape: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_CAPE_COSTS))
    egnms: float = 0.3
    inject: float = 0.2
    clip: float = 39.0
    embed: float = 68.0
    knn: float = 0.5
    q_override: Optional[float] = None  # replaces the whole Q stage chain when set

    def safety_ms(self) -> float:
        return self.s_detect

    def quality_ms(self, condition: str, flags: 'AblationFlags') -> float:
        if self.q_override is not None:
            total = self.q_override
        else:
            cape = 0.0 if flags.cape_passthrough else self.cape.get(condition, 0.0)
            total = self.wem + self.pee + cape + self.q_detect + self.egnms + self.inject
        if flags.thread_e_disabled:
            total += self.embed
        return total

    def analytics_ms(self) -> float:
        return self.clip + self.embed + self.knn


@dataclass(frozen=True)
class FramePacket:
    """A frame Thread S has finished, with its safety-stream detections."""
    frame: Frame
    ds: Tuple[Detection, ...]


@dataclass(frozen=True, eq=False)
class EnhancedPacket:
    frame: Frame
    enhanced: np.ndarray
    estimate: WeatherEstimate
    filter_params: Dict
    proxy_delta: float


@dataclass(frozen=True, eq=False)
class QualityOutcome:
    packet: FramePacket
    estimate: WeatherEstimate
    report: EnhanceReport
    enhanced: np.ndarray
    dq: Tuple[Detection, ...]
    fused: Tuple[Detection, ...]
    filter_params: Dict
    proxy_delta: float

    def enhanced_packet(self) -> EnhancedPacket:
        return EnhancedPacket(self.packet.frame, self.enhanced, self.estimate, self.filter_params, self.proxy_delta)


@dataclass(frozen=True)
class LatencyStats:
    mean_ms: float
    std_ms: float
    warmup: int
    timed: int

    def __post_init__(self):
        if self.timed < 1:
            raise ValueError(f"timed count must be >= 1, got {self.timed}")

    @classmethod
    def from_samples(cls, samples_ms: Sequence[float], warmup: int = 0) -> 'LatencyStats':
        samples = np.asarray(samples_ms, dtype=np.float64)
        return cls(float(samples.mean()), float(samples.std()), warmup, len(samples))

    def __str__(self) -> str:
        return f"{self.mean_ms:.2f} ± {self.std_ms:.2f} ms"


@dataclass
class LatencyReport:
    stages: Dict[str, LatencyStats] = field(default_factory=dict)

    def format(self) -> str:
        return format_latency_table(self.stages)


@dataclass
class PipelineResult:
    track_log: List[str]
    latency: LatencyReport
    safety_times: List[float]
    q_latencies: List[float]
    k_values: List[int]
    slot_versions: List[int]
    frames_in: int = 0
    frames_dropped: int = 0
    conflicts: int = 0

    @property
    def safety_periods(self) -> np.ndarray:
        return np.diff(np.asarray(self.safety_times, dtype=np.float64))

    def period_stats(self) -> Dict[str, float]:
        periods = self.safety_periods
        if periods.size == 0:
            return {'mean': 0.0, 'p99': 0.0, 'max': 0.0}
        return {
            'mean': float(periods.mean()),
            'p99': float(np.percentile(periods, 99)),
            'max': float(periods.max()),
        }


def _tag(det: Detection, source: str) -> Detection:
    return det if det.source == source else replace(det, source=source)


def _mean_conf(dets: Sequence[Detection]) -> float:
    return float(np.mean([d.conf for d in dets])) if dets else 0.0


class CadenetPipeline:
    """Per-stream work of the three threads, shared by both runners."""

    def __init__(self, s_detector: DetectorContract, q_detector: DetectorContract,
                 cfg: Optional[FilterConfig] = None, flags: Optional[AblationFlags] = None, *,
                 conf_thresh: float = DEFAULT_CONF_THRESH,
                 nms_iou: float = DEFAULT_NMS_IOU,
                 spread_threshold: float = DEFAULT_SPREAD_THRESHOLD,
                 night_gate: Optional[float] = None,
                 tracker_params: TrackerParams = DEFAULT_PARAMS,
                 sed: Optional[SceneDatabase] = None,
                 embedder=None, classifier=None,
                 prompts: Optional[Sequence[Tuple[str, str]]] = None):
        """
        Initialize the CadenetPipeline.

        Args:
            s_detector: Fast detector for Thread S
            q_detector: Strong detector for Thread Q
            cfg: CAPE filter configuration
            flags: Ablation flags
            conf_thresh: EG-NMS raw confidence threshold
            nms_iou: EG-NMS overlap threshold
            spread_threshold: WEM spread below which the slot label is used
            night_gate: Luminance gate sending dark fog frames to CLAHE
            tracker_params: Tracker noise and lifecycle parameters
            sed: Scene database for recommendations and online append
            embedder: Scene embedder (defaults to the local pseudo-embedder)
            classifier: Zero-shot classifier (defaults to the heuristic scorer)
            prompts: (label, text) zero-shot prompts
        """
        self.s_detector = s_detector
        self.q_detector = q_detector
        self.cfg = cfg or FilterConfig()
        self.flags = flags or AblationFlags()
        self.conf_thresh = conf_thresh
        self.nms_iou = nms_iou
        self.spread_threshold = spread_threshold
        self.night_gate = night_gate
        self.tracker_params = tracker_params
        self.sed = sed
        self.prompts = list(prompts or DEFAULT_PROMPTS)
        self.embedder = embedder or PseudoEmbedder(dim=sed.dim if sed is not None else DEFAULT_DIM)
        self.classifier = classifier or HeuristicPromptScorer(self.prompts)

        self.store = TrackStore()
        self.ids = TrackIdAllocator()
        self.slot: AtomicSlot = AtomicSlot()
        self.track_log: List[str] = []
        self.conflicts = 0
        self._log_lock = threading.Lock()
        self._last_slot_version = 0

    def safety_step(self, frame: Frame) -> Optional[FramePacket]:
        """Thread S: detect, update tracks, log. Returns None when the frame is skipped."""
        try:
            dets = [_tag(d, 'S') for d in self.s_detector.detect(frame)]
        except Exception as e:
            logger.warning(f"Thread S: detector failed on frame {frame.t_index}, skipping: {str(e)}")
            return None

        if self.flags.ktt_raw_detections:
            lines = format_detection_log(frame.t_index, dets)
        else:
            base = self.store.snapshot()
            result = update_frame(base, dets, params=self.tracker_params, new_id=self.ids)
            lines = format_track_log(frame.t_index, self.store.commit_safety(base, result))
        with self._log_lock:
            self.track_log.extend(lines)
        return FramePacket(frame, tuple(dets))

    def read_slot(self) -> Optional[SlotRecord]:
        record = self.slot.read()
        if record is not None:
            if record.version < self._last_slot_version:
                logger.warning(f"Slot version went back from {self._last_slot_version} to {record.version}")
            self._last_slot_version = max(self._last_slot_version, record.version)
        return record

    def _routed_config(self, est: WeatherEstimate, record: Optional[SlotRecord]) -> FilterConfig:
        rec = record.recommendation if record is not None else None
        if rec is None or rec.condition != est.condition:
            return self.cfg
        try:
            return apply_recommendation(self.cfg, est.condition, rec.params)
        except FilterConfigError as e:
            logger.warning(f"Ignoring SED recommendation for {est.condition}: {str(e)}")
            return self.cfg

    def quality_compute(self, packet: FramePacket, record: Optional[SlotRecord]) -> QualityOutcome:
        """Thread Q up to fusion; raises on detector or filter failure."""
        frame = packet.frame
        raster = frame.raster
        est = estimate(raster) if raster.ndim == 3 else WeatherEstimate('clear', 0.0)
        est = resolve(est, record, self.spread_threshold)
        if self.flags.fixed_severity_0_6:
            est = replace(est, severity=FIXED_SEVERITY)
        cfg = self._routed_config(est, record)

        height, width = raster.shape[:2]
        if self.flags.pee_uniform_half:
            rmap = uniform_map(height, width, UNIFORM_RELIABILITY)
        else:
            rmap = entropy_map(luma(raster))

        enhancer = passthrough if self.flags.cape_passthrough else enhance
        enhanced, report = enhancer(raster, est, cfg, self.night_gate)
        q_frame = Frame(enhanced, frame.t_index, frame.t_capture, frame.annotations)
        dq = [_tag(d, 'Q') for d in self.q_detector.detect(q_frame)]
        ds = list(packet.ds)

        if self.flags.egnms_s_only:
            fused = fuse(ds, [], uniform_map(height, width, 1.0), self.conf_thresh, self.nms_iou)
        else:
            fused = fuse(ds, dq, rmap, self.conf_thresh, self.nms_iou)

        params = cfg.group(est.condition) if est.condition != 'clear' else {}
        proxy = _mean_conf(dq) - _mean_conf(ds)
        logger.debug(f"Thread Q frame {frame.t_index}: {report.summary()}, "
                     f"{len(ds)} S + {len(dq)} Q -> {len(fused)} fused")
        return QualityOutcome(packet, est, report, enhanced, tuple(dq), tuple(fused), params, proxy)

    def inject(self, outcome: QualityOutcome, k: int) -> int:
        """Inject fused detections k frames late; returns the dropped refinements."""
        if self.flags.ktt_raw_detections:
            return 0
        base = self.store.snapshot()
        result = inject_async(base, list(outcome.fused), k, self.tracker_params, self.ids)
        conflicts = self.store.commit_quality(base, result)
        if conflicts:
            logger.debug(f"Thread Q: {conflicts} refinements dropped, tracks changed since snapshot")
        self.conflicts += conflicts
        return conflicts

    def analytics_step(self, packet: EnhancedPacket) -> SlotRecord:
        """Thread E: label, embed, recommend, publish, append, all on the enhanced frame."""
        raster = packet.enhanced
        texts = [text for _, text in self.prompts]
        scores = self.classifier.classify_prompts(raster, texts)
        label = self.prompts[int(np.argmax(scores))][0]
        embedding = self.embedder.embed(raster)
        rec = self.sed.recommend(embedding) if self.sed is not None and len(self.sed) else None
        record = publish_slot(self.slot, label, scores, rec)
        if self.sed is not None:
            self.sed.append(SedEntry(embedding, packet.estimate.condition,
                                     dict(packet.filter_params), packet.proxy_delta))
        logger.debug(f"Thread E frame {packet.frame.t_index}: label={label} "
                     f"recommendation={rec.condition if rec else None} version={record.version}")
        return record


def _latency_report(durations: Dict[str, List[float]]) -> LatencyReport:
    return LatencyReport({name: LatencyStats.from_samples(samples)
                          for name, samples in durations.items() if samples})


class SimulatedRunner:
    """
    Discrete-event rendition of the three threads on a virtual clock.

    Frame i is captured at i * T_cam. Each worker is busy for its modelled
    stage cost; per-stream logic runs at the event where its result becomes
    visible. Events at equal times run in scheduling order.
    """

    def __init__(self, pipeline: CadenetPipeline, costs: Optional[StageCosts] = None,
                 fps: float = DEFAULT_FPS):
        if fps <= 0:
            raise ValueError(f"fps must be > 0, got {fps}")
        self.pipeline = pipeline
        self.costs = costs or StageCosts()
        self.t_cam_ms = 1000.0 / fps

    def run(self, frames: Iterable[Frame]) -> PipelineResult:
        p = self.pipeline
        flags = p.flags
        costs = self.costs
        t_cam = self.t_cam_ms

        events: List = []
        seq = itertools.count()

        def schedule(t: float, kind: str, payload=None):
            heapq.heappush(events, (t, next(seq), kind, payload))

        frames_in = 0
        for i, f in enumerate(frames):
            schedule(i * t_cam, 'capture', replace(f, t_capture=i * t_cam))
            frames_in += 1

        state = {
            'camera': None, 's_busy': False, 'q_busy': False, 'e_busy': False,
            'q_last': -1, 'e_last': -1, 'dropped': 0,
        }
        frame_mailbox: AtomicSlot = AtomicSlot()
        enhanced_mailbox: AtomicSlot = AtomicSlot()
        safety_times: List[float] = []
        q_latencies: List[float] = []
        k_values: List[int] = []
        slot_versions: List[int] = []
        durations: Dict[str, List[float]] = {'thread_s': [], 'thread_q': [], 'thread_e': []}

        def run_analytics(packet: EnhancedPacket):
            try:
                slot_versions.append(p.analytics_step(packet).version)
            except Exception as e:
                logger.warning(f"Thread E: skipping frame {packet.frame.t_index}: {str(e)}")

        def start_s(t: float):
            frame = state['camera']
            state['camera'] = None
            state['s_busy'] = True
            cost = costs.safety_ms()
            durations['thread_s'].append(cost)
            schedule(t + cost, 's_done', frame)

        def start_q(t: float, packet: FramePacket, blocking: bool):
            try:
                outcome = p.quality_compute(packet, p.read_slot())
            except Exception as e:
                logger.warning(f"Thread Q: skipping frame {packet.frame.t_index}: {str(e)}")
                return False
            cost = costs.quality_ms(outcome.estimate.condition, flags)
            state['q_busy'] = True
            schedule(t + cost, 'q_done', (outcome, t, blocking))
            return True

        def try_start_q(t: float):
            if state['q_busy']:
                return
            packet = frame_mailbox.read()
            if packet is None or packet.frame.t_index <= state['q_last']:
                return
            state['q_last'] = packet.frame.t_index
            start_q(t, packet, blocking=False)

        def try_start_e(t: float):
            if state['e_busy']:
                return
            packet = enhanced_mailbox.read()
            if packet is None or packet.frame.t_index <= state['e_last']:
                return
            state['e_last'] = packet.frame.t_index
            state['e_busy'] = True
            cost = costs.analytics_ms()
            durations['thread_e'].append(cost)
            schedule(t + cost, 'e_done', packet)

        def worker_free(t: float):
            if state['camera'] is not None:
                start_s(t)

        while events:
            t, _, kind, payload = heapq.heappop(events)

            if kind == 'capture':
                if state['camera'] is not None:
                    state['dropped'] += 1
                state['camera'] = payload
                if not state['s_busy']:
                    start_s(t)

            elif kind == 's_done':
                packet = p.safety_step(payload)
                if packet is not None:
                    safety_times.append(t)
                if flags.blocking_single_thread and packet is not None:
                    # S and Q share one worker; it stays busy through Q
                    if start_q(t, packet, blocking=True):
                        continue
                state['s_busy'] = False
                if packet is not None and not flags.blocking_single_thread:
                    frame_mailbox.publish(packet)
                    try_start_q(t)
                worker_free(t)

            elif kind == 'q_done':
                outcome, started, blocking = payload
                dt = t - started
                k = 0 if blocking else lag_frames(dt, t_cam)
                p.inject(outcome, k)
                q_latencies.append(dt)
                durations['thread_q'].append(dt)
                k_values.append(k)
                state['q_busy'] = False
                if flags.thread_e_disabled:
                    run_analytics(outcome.enhanced_packet())
                else:
                    enhanced_mailbox.publish(outcome.enhanced_packet())
                    try_start_e(t)
                if blocking:
                    state['s_busy'] = False
                    worker_free(t)
                else:
                    try_start_q(t)

            elif kind == 'e_done':
                run_analytics(payload)
                state['e_busy'] = False
                try_start_e(t)

        logger.info(f"Simulated run: {frames_in} frames, {len(safety_times)} safety outputs, "
                    f"{len(q_latencies)} quality cycles, {len(slot_versions)} analytics cycles")
        return PipelineResult(
            track_log=list(p.track_log),
            latency=_latency_report(durations),
            safety_times=safety_times,
            q_latencies=q_latencies,
            k_values=k_values,
            slot_versions=slot_versions,
            frames_in=frames_in,
            frames_dropped=state['dropped'],
            conflicts=p.conflicts,
        )


class ThreadedRunner:
    """Three OS threads on the monotonic clock, fed by the capture scheduler."""

    def __init__(self, pipeline: CadenetPipeline, fps: float = DEFAULT_FPS,
                 q_delay_ms: float = 0.0, e_delay_ms: float = 0.0):
        """
        Initialize the ThreadedRunner.

        Args:
            pipeline: Per-stream logic
            fps: Camera rate
            q_delay_ms: Extra sleep in every Thread Q cycle (load injection)
            e_delay_ms: Extra sleep in every Thread E cycle
        """
        self.pipeline = pipeline
        self.fps = fps
        self.t_cam_ms = 1000.0 / fps
        self.q_delay_ms = q_delay_ms
        self.e_delay_ms = e_delay_ms

        self._frames: queue.Queue = queue.Queue()
        self._frame_mailbox: AtomicSlot = AtomicSlot()
        self._enhanced_mailbox: AtomicSlot = AtomicSlot()
        self._frame_ready = threading.Event()
        self._enhanced_ready = threading.Event()
        self._s_done = threading.Event()
        self._q_done = threading.Event()
        self._t0 = 0.0
        self._lock = threading.Lock()
        self._safety_times: List[float] = []
        self._q_latencies: List[float] = []
        self._k_values: List[int] = []
        self._slot_versions: List[int] = []
        self._durations: Dict[str, List[float]] = {'thread_s': [], 'thread_q': [], 'thread_e': []}

    def _now_ms(self) -> float:
        return (time.monotonic() - self._t0) * 1000.0

    def _take_newest(self) -> Optional[Frame]:
        """Blocking single-thread mode keeps only the newest waiting frame."""
        frame = self._frames.get()
        while frame is not None:
            try:
                newer = self._frames.get_nowait()
            except queue.Empty:
                break
            frame = newer
        return frame

    def _safety_loop(self):
        blocking = self.pipeline.flags.blocking_single_thread
        try:
            while True:
                frame = self._take_newest() if blocking else self._frames.get()
                if frame is None:
                    break
                start = time.monotonic()
                packet = self.pipeline.safety_step(frame)
                if packet is None:
                    continue
                with self._lock:
                    self._durations['thread_s'].append((time.monotonic() - start) * 1000.0)
                    self._safety_times.append(self._now_ms())
                if blocking:
                    self._quality_cycle(packet, blocking=True)
                else:
                    self._frame_mailbox.publish(packet)
                    self._frame_ready.set()
        finally:
            self._s_done.set()
            self._frame_ready.set()

    def _quality_cycle(self, packet: FramePacket, blocking: bool = False):
        p = self.pipeline
        start = time.monotonic()
        try:
            outcome = p.quality_compute(packet, p.read_slot())
        except Exception as e:
            logger.warning(f"Thread Q: skipping frame {packet.frame.t_index}: {str(e)}")
            return
        if self.q_delay_ms:
            time.sleep(self.q_delay_ms / 1000.0)
        if p.flags.thread_e_disabled:
            self._analytics_cycle(outcome.enhanced_packet())
        dt = (time.monotonic() - start) * 1000.0
        k = 0 if blocking else lag_frames(dt, self.t_cam_ms)
        p.inject(outcome, k)
        with self._lock:
            self._q_latencies.append(dt)
            self._durations['thread_q'].append(dt)
            self._k_values.append(k)
        if not p.flags.thread_e_disabled:
            self._enhanced_mailbox.publish(outcome.enhanced_packet())
            self._enhanced_ready.set()

    def _quality_loop(self):
        last = -1
        try:
            while True:
                self._frame_ready.wait(0.05)
                self._frame_ready.clear()
                packet = self._frame_mailbox.read()
                if packet is None or packet.frame.t_index <= last:
                    if self._s_done.is_set():
                        break
                    continue
                last = packet.frame.t_index
                self._quality_cycle(packet)
        finally:
            self._q_done.set()
            self._enhanced_ready.set()

    def _analytics_cycle(self, packet: EnhancedPacket):
        start = time.monotonic()
        try:
            record = self.pipeline.analytics_step(packet)
        except Exception as e:
            logger.warning(f"Thread E: skipping frame {packet.frame.t_index}: {str(e)}")
            return
        if self.e_delay_ms:
            time.sleep(self.e_delay_ms / 1000.0)
        with self._lock:
            self._slot_versions.append(record.version)
            self._durations['thread_e'].append((time.monotonic() - start) * 1000.0)

    def _analytics_loop(self):
        last = -1
        while True:
            self._enhanced_ready.wait(0.05)
            self._enhanced_ready.clear()
            packet = self._enhanced_mailbox.read()
            if packet is None or packet.frame.t_index <= last:
                if self._q_done.is_set():
                    break
                continue
            last = packet.frame.t_index
            self._analytics_cycle(packet)

    def run(self, frames: Iterable[Frame], timeout: Optional[float] = None) -> PipelineResult:
        """
        Run until the source is exhausted and every worker has drained.

        Args:
            frames: Frame source
            timeout: Seconds to wait for the source before stopping anyway
        """
        flags = self.pipeline.flags
        capture = CaptureScheduler(frames, self.fps, on_frame=self._frames.put,
                                   on_exhausted=lambda: self._frames.put(None))
        workers = [threading.Thread(target=self._safety_loop, name='thread-s', daemon=True)]
        if not flags.blocking_single_thread:
            workers.append(threading.Thread(target=self._quality_loop, name='thread-q', daemon=True))
        else:
            self._q_done.set()
        if not flags.thread_e_disabled:
            workers.append(threading.Thread(target=self._analytics_loop, name='thread-e', daemon=True))

        self._t0 = time.monotonic()
        for w in workers:
            w.start()
        logger.info(f"Pipeline started: {', '.join(w.name for w in workers)} at {self.fps:g} fps")
        capture.start()
        if not capture.wait_exhausted(timeout):
            logger.warning("Frame source did not finish in time, stopping capture")
            self._frames.put(None)
        capture.stop()
        for w in workers:
            w.join()
        logger.info(f"Pipeline stopped after {capture.frames_captured} frames")

        return PipelineResult(
            track_log=list(self.pipeline.track_log),
            latency=_latency_report(self._durations),
            safety_times=list(self._safety_times),
            q_latencies=list(self._q_latencies),
            k_values=list(self._k_values),
            slot_versions=list(self._slot_versions),
            frames_in=capture.frames_captured,
            conflicts=self.pipeline.conflicts,
        )


def run(frames: Iterable[Frame], s_detector: DetectorContract, q_detector: DetectorContract,
        cfg: Optional[FilterConfig] = None, flags: Optional[AblationFlags] = None, *,
        mode: str = 'simulated', fps: float = DEFAULT_FPS, costs: Optional[StageCosts] = None,
        **pipeline_kwargs) -> PipelineResult:
    """
    Run the three-thread pipeline over a frame source.

    Args:
        frames: Frame source
        s_detector: Fast detector for Thread S
        q_detector: Strong detector for Thread Q
        cfg: CAPE filter configuration
        flags: Ablation flags
        mode: 'simulated' (virtual clock) or 'threaded' (real clock)
        fps: Camera rate
        costs: Stage cost model for the simulated clock
        **pipeline_kwargs: Passed to CadenetPipeline

    Returns:
        Track log, latency report and timing statistics
    """
    pipe = CadenetPipeline(s_detector, q_detector, cfg, flags, **pipeline_kwargs)
    if mode == 'simulated':
        return SimulatedRunner(pipe, costs, fps).run(frames)
    if mode == 'threaded':
        return ThreadedRunner(pipe, fps).run(frames)
    raise ValueError(f"unknown run mode {mode!r}, expected 'simulated' or 'threaded'")


def measure_latency(op: Callable[[], object], warmup: int = 10, timed: int = 50,
                    clock: Callable[[], float] = time.perf_counter) -> LatencyStats:
    """
    Time a repeatable operation.

    Warmup calls are run and discarded; mean and standard deviation are over
    the timed calls, in milliseconds.
    """
    if warmup < 0 or timed < 1:
        raise ValueError(f"need warmup >= 0 and timed >= 1, got {warmup} and {timed}")
    for _ in range(warmup):
        op()
    samples = []
    for _ in range(timed):
        start = clock()
        op()
        samples.append((clock() - start) * 1000.0)
    return LatencyStats.from_samples(samples, warmup)


def timing_discipline(mode: str) -> Tuple[int, int]:
    if mode not in TIMING_DISCIPLINES:
        raise ValueError(f"unknown timing mode {mode!r}, expected one of {', '.join(TIMING_DISCIPLINES)}")
    return TIMING_DISCIPLINES[mode]


def format_latency_table(stages: Dict[str, LatencyStats]) -> str:
    lines = [f"{'Stage':<16} {'Mean (ms)':>10} {'Std (ms)':>10} {'Warmup':>7} {'Timed':>6}",
             '-' * 53]
    for name, stats in stages.items():
        lines.append(f"{name:<16} {stats.mean_ms:>10.2f} {stats.std_ms:>10.2f} {stats.warmup:>7d} {stats.timed:>6d}")
    return '\n'.join(lines)


def egnms_workload(rng: np.random.Generator, height: int = 128, width: int = 192,
                   n_boxes: int = 20) -> Tuple[List[Detection], List[Detection]]:
    """Random S and Q detections (half each) for timing EG-NMS."""
    dets = []
    for i in range(n_boxes):
        w, h = rng.uniform(10, 40, size=2)
        cx = rng.uniform(w / 2, width - w / 2)
        cy = rng.uniform(h / 2, height - h / 2)
        box = Box.from_center(cx, cy, w, h)
        dets.append(Detection(box, int(rng.integers(0, 3)), float(rng.uniform(0.3, 1.0)),
                              source='S' if i % 2 == 0 else 'Q'))
    return [d for d in dets if d.source == 'S'], [d for d in dets if d.source == 'Q']


def stage_operations(frame: np.ndarray, cfg: FilterConfig, seed: int = 0,
                     s_detector: Optional[DetectorContract] = None,
                     q_detector: Optional[DetectorContract] = None,
                     sed: Optional[SceneDatabase] = None) -> Dict[str, Callable[[], object]]:
    """Named zero-argument operations over one frame, for measure_latency."""
    rng = np.random.default_rng(seed)
    height, width = frame.shape[:2]
    ds, dq = egnms_workload(rng, height, width)
    rmap = entropy_map(luma(frame))
    s_detector = s_detector or synthetic_detector('contrast', source='S')
    q_detector = q_detector or synthetic_detector('contrast', source='Q')
    embedder = PseudoEmbedder(dim=sed.dim if sed is not None else DEFAULT_DIM, seed=seed)
    scorer = HeuristicPromptScorer()
    texts = [text for _, text in DEFAULT_PROMPTS]
    wrapped = Frame(frame, 0)

    ops: Dict[str, Callable[[], object]] = {
        's_detect': lambda: s_detector.detect(wrapped),
        'q_detect': lambda: q_detector.detect(wrapped),
        'wem': lambda: estimate(frame),
        'pee': lambda: entropy_map(luma(frame)),
        'egnms': lambda: fuse(ds, dq, rmap),
        'embed': lambda: embedder.embed(frame),
        'classify': lambda: scorer.classify_prompts(frame, texts),
    }
    for condition in ('fog', 'rain', 'sand', 'snow'):
        est = WeatherEstimate(condition, 1.0 if condition == 'fog' else 0.5)
        ops[f'cape_{condition}'] = (lambda e=est: enhance(frame, e, cfg))
    if sed is not None and len(sed):
        query = embedder.embed(frame)
        ops['sed_knn'] = lambda: sed.knn(query)
    return ops
