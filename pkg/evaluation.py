#!/usr/bin/env python3
"""
Benchmark and Ablation Harness

Compares a detector on each original degraded image (C1) with the same
detector on the enhanced image (C2), against the same Pascal VOC ground
truth, and reports:

    - per-image tp / fp / fn, precision, recall, F1 and a flag
      (F0 |dF1| < 0.01, F1 improved, F2 degraded)
    - per-condition pooled F1 and flag counts in the shape of the
      per-weather results table
    - macro F1 (image-count weighted, and unweighted) and micro metrics
    - dRecall as the headline metric: ground truth annotated on degraded
      images cannot credit objects only the enhanced image reveals, so the
      reported dF1 is a lower bound while recall is unaffected by those
      missing annotations

Features:
    - VOC parsing with a class alias table; unparseable files are skipped
    - GT-label (upper bound) or WEM routing, with a WEM accuracy table
    - Per-image JSONL output
    - Track-log scoring and jitter for pipeline ablations
    - Ablation runner for A1..A7
"""

import csv
import json
import logging
import os
import xml.etree.ElementTree as ET
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from cape import FilterConfig, FilterConfigError, apply_recommendation, enhance, passthrough
from detectors import DetectorContract, Frame
from geometry import Box, Detection, GtBox, hungarian, iou, iou_matrix
from imaging import lab_stats, read_raster
from pipeline import ABLATIONS, AblationFlags, CadenetPipeline, SimulatedRunner, StageCosts
from sed import SceneDatabase
from wem import WeatherEstimate, estimate, severity_for

logger = logging.getLogger(__name__)

EVAL_CONDITIONS = ('rain', 'fog', 'sand', 'snow')
ROUTINGS = ('gt_label', 'wem')
VARIANTS = ('C1', 'C2')
FLAGS = ('F0', 'F1', 'F2')

DEFAULT_MATCH_IOU = 0.5
DEFAULT_CONF = 0.25
FLAG_DEADBAND = 0.01

# COCO class ids for the road-scene classes
DEFAULT_CLASSES = {
    'person': 0,
    'bicycle': 1,
    'car': 2,
    'motorcycle': 3,
    'bus': 5,
    'truck': 7,
}

DEFAULT_ALIASES = {
    'pedestrian': 'person',
    'bike': 'bicycle',
    'cyclist': 'bicycle',
    'motorbike': 'motorcycle',
    'van': 'car',
}

ANNOTATION_BIAS_CAVEAT = (
    "Ground truth was annotated on degraded images: objects revealed only by "
    "enhancement count as false positives, so reported dF1 is a lower bound on "
    "the true gain. Recall is unaffected by missing annotations."
)

ABLATION_DESCRIPTIONS = {
    'A1': 'Blocking single thread',
    'A2': 'PEE uniform R = 0.5',
    'A3': 'Fixed severity 0.6',
    'A4': 'CAPE pass-through',
    'A5': 'EG-NMS Thread S only',
    'A6': 'KTT raw detections',
    'A7': 'Thread E disabled',
}
BENCHMARK_ABLATIONS = ('A3', 'A4')


class BenchmarkError(ValueError):
    """Raised for a benchmark that cannot be run as requested"""


@dataclass(frozen=True, eq=False)
class GtImage:
    image: str
    condition: Optional[str]
    boxes: List[GtBox] = field(default_factory=list)
    severity: Optional[float] = None
    raster: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.condition is not None and self.condition not in EVAL_CONDITIONS:
            raise ValueError(f"{self.image}: unknown condition {self.condition!r}")

    def load(self) -> np.ndarray:
        return self.raster if self.raster is not None else read_raster(self.image)


@dataclass(frozen=True)
class EvalRecord:
    image: str
    variant: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError(f"counts must be >= 0, got tp={self.tp} fp={self.fp} fn={self.fn}")

    @classmethod
    def from_counts(cls, image: str, variant: str, tp: int, fp: int, fn: int) -> 'EvalRecord':
        return cls(image, variant, tp, fp, fn, *prf(tp, fp, fn))


@dataclass(frozen=True)
class ImageResult:
    image: str
    condition: str
    c1: EvalRecord
    c2: EvalRecord
    routed: str
    severity: float

    @property
    def delta_f1(self) -> float:
        return self.c2.f1 - self.c1.f1

    @property
    def flag(self) -> str:
        return flag(self.delta_f1)


@dataclass
class ConditionRow:
    """One row of the per-weather table."""
    condition: str
    n: int
    f1_c1: float
    f1_c2: float
    flags: Dict[str, int] = field(default_factory=lambda: {f: 0 for f in FLAGS})

    @property
    def delta_f1(self) -> float:
        return self.f1_c2 - self.f1_c1


@dataclass
class BenchmarkSummary:
    rows: List[ConditionRow]
    counts: Dict[str, Tuple[int, int, int]]  # variant -> pooled (tp, fp, fn)
    macro_weighted: Tuple[float, float]
    macro_unweighted: Tuple[float, float]
    mean_improved_delta: float
    skipped: int = 0

    def micro(self, variant: str) -> Tuple[float, float, float]:
        return prf(*self.counts[variant])

    @property
    def delta_recall(self) -> float:
        return self.micro('C2')[1] - self.micro('C1')[1]

    @property
    def delta_counts(self) -> Tuple[int, int, int]:
        (tp1, fp1, fn1), (tp2, fp2, fn2) = self.counts['C1'], self.counts['C2']
        return tp2 - tp1, fp2 - fp1, fn2 - fn1

    def under_detection(self, variant: str) -> float:
        tp, _, fn = self.counts[variant]
        return fn / (tp + fn) if tp + fn else 0.0

    @property
    def flag_totals(self) -> Dict[str, int]:
        totals = Counter()
        for row in self.rows:
            totals.update(row.flags)
        return {f: totals.get(f, 0) for f in FLAGS}


@dataclass(frozen=True)
class WemAccuracyRow:
    condition: str
    n: int
    correct: int
    primary_error: Optional[str]

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0


@dataclass
class BenchmarkReport:
    results: List[ImageResult]
    summary: BenchmarkSummary
    wem_rows: List[WemAccuracyRow] = field(default_factory=list)


def prf(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    """Precision, recall and F1, with 0/0 taken as 0."""
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def flag(delta_f1: float) -> str:
    """F0 inside the open deadband, F1 at or above +0.01, F2 at or below -0.01."""
    # float noise at the boundary belongs to the flagged side
    if abs(delta_f1) < FLAG_DEADBAND - 1e-12:
        return 'F0'
    return 'F1' if delta_f1 > 0 else 'F2'


def class_id_for(name: str, classes: Dict[str, int] = DEFAULT_CLASSES,
                 aliases: Dict[str, str] = DEFAULT_ALIASES) -> Optional[int]:
    key = name.strip().lower()
    key = aliases.get(key, key)
    return classes.get(key)


def parse_voc(path: str, condition: Optional[str] = None,
              classes: Dict[str, int] = DEFAULT_CLASSES,
              aliases: Dict[str, str] = DEFAULT_ALIASES) -> Optional[GtImage]:
    """
    Parse one Pascal VOC annotation file.

    Objects of classes outside the class table are ignored.

    Returns:
        The GtImage, or None (with a warning) when the file cannot be parsed
    """
    try:
        tree = ET.parse(path)
        root = tree.getroot()
        filename = root.findtext('filename')
        image = os.path.join(os.path.dirname(path), filename) if filename else os.path.splitext(path)[0] + '.png'
        boxes = []
        for obj in root.findall('object'):
            name = obj.findtext('name') or ''
            class_id = class_id_for(name, classes, aliases)
            if class_id is None:
                logger.debug(f"{path}: ignoring object of class {name!r}")
                continue
            bndbox = obj.find('bndbox')
            if bndbox is None:
                raise ValueError("object without bndbox")
            coords = [float(bndbox.findtext(tag)) for tag in ('xmin', 'ymin', 'xmax', 'ymax')]
            ref = obj.findtext('ref_contrast')
            boxes.append(GtBox(class_id, Box(*coords), name, float(ref) if ref else None))
        return GtImage(image=image, condition=condition, boxes=boxes)
    except (ET.ParseError, ValueError, TypeError, OSError) as e:
        logger.warning(f"Skipping unparseable annotation {path}: {str(e)}")
        return None


def load_corpus(corpus_dir: str, classes: Dict[str, int] = DEFAULT_CLASSES,
                aliases: Dict[str, str] = DEFAULT_ALIASES) -> List[GtImage]:
    """
    Read a corpus directory: images, VOC XML beside each image and an
    optional labels.csv manifest (image, condition[, severity]).

    Without a manifest every XML file is loaded with no condition label.
    """
    manifest = os.path.join(corpus_dir, 'labels.csv')
    corpus = []
    if os.path.exists(manifest):
        with open(manifest, 'r', newline='') as f:
            for row in csv.DictReader(f):
                image = row['image']
                xml = os.path.join(corpus_dir, os.path.splitext(image)[0] + '.xml')
                gt = parse_voc(xml, row.get('condition') or None, classes, aliases)
                if gt is None:
                    continue
                severity = row.get('severity')
                corpus.append(replace(gt, image=os.path.join(corpus_dir, image),
                                      severity=float(severity) if severity else None))
    else:
        logger.info(f"No labels.csv in {corpus_dir}, loading annotations without condition labels")
        for name in sorted(os.listdir(corpus_dir)):
            if name.endswith('.xml'):
                gt = parse_voc(os.path.join(corpus_dir, name), None, classes, aliases)
                if gt is not None:
                    corpus.append(gt)
    logger.info(f"Loaded {len(corpus)} annotated images from {corpus_dir}")
    return corpus


def _det_key(det: Detection):
    return (-det.conf, det.box.x1, det.box.y1, det.class_id)


def match_image(dets: Sequence[Detection], gt: Sequence[GtBox],
                iou_thresh: float = DEFAULT_MATCH_IOU, conf_thresh: float = DEFAULT_CONF,
                image: str = '', variant: str = 'C1') -> EvalRecord:
    """
    Greedy matching in descending confidence.

    Each detection takes the unmatched same-class GT box with the highest
    IoU, if that IoU is at least ``iou_thresh``; IoU ties go to the GT box
    with the smallest coordinates, so GT order never matters.
    """
    kept = sorted((d for d in dets if d.conf >= conf_thresh), key=_det_key)
    gt_order = sorted(range(len(gt)), key=lambda i: gt[i].box.as_tuple() + (gt[i].class_id,))
    matched = set()
    tp = 0
    for det in kept:
        best, best_iou = None, iou_thresh
        for i in gt_order:
            if i in matched or gt[i].class_id != det.class_id:
                continue
            overlap = iou(det.box, gt[i].box)
            if overlap >= best_iou and (best is None or overlap > best_iou):
                best, best_iou = i, overlap
        if best is not None:
            matched.add(best)
            tp += 1
    return EvalRecord.from_counts(image, variant, tp, len(kept) - tp, len(gt) - tp)


def pool(records: Iterable[EvalRecord]) -> Tuple[int, int, int]:
    tp = fp = fn = 0
    for r in records:
        tp, fp, fn = tp + r.tp, fp + r.fp, fn + r.fn
    return tp, fp, fn


def macro_f1(rows: Sequence[ConditionRow], variant: str = 'C1', weighted: bool = True) -> float:
    """Mean of per-condition F1, weighted by image count or not."""
    if not rows:
        return 0.0
    values = np.array([r.f1_c1 if variant == 'C1' else r.f1_c2 for r in rows])
    if weighted:
        weights = np.array([r.n for r in rows], dtype=np.float64)
        return float((values * weights).sum() / weights.sum()) if weights.sum() else 0.0
    return float(values.mean())


def aggregate(results: Sequence[ImageResult], skipped: int = 0) -> BenchmarkSummary:
    """Group image results by condition and pool them."""
    by_condition: Dict[str, List[ImageResult]] = defaultdict(list)
    for res in results:
        by_condition[res.condition].append(res)

    order = [c for c in EVAL_CONDITIONS if c in by_condition] + \
            sorted(c for c in by_condition if c not in EVAL_CONDITIONS)
    rows = []
    for condition in order:
        group = by_condition[condition]
        flags = Counter(res.flag for res in group)
        rows.append(ConditionRow(
            condition=condition,
            n=len(group),
            f1_c1=prf(*pool(res.c1 for res in group))[2],
            f1_c2=prf(*pool(res.c2 for res in group))[2],
            flags={f: flags.get(f, 0) for f in FLAGS},
        ))

    improved = [res.delta_f1 for res in results if res.flag == 'F1']
    return BenchmarkSummary(
        rows=rows,
        counts={'C1': pool(res.c1 for res in results), 'C2': pool(res.c2 for res in results)},
        macro_weighted=(macro_f1(rows, 'C1', True), macro_f1(rows, 'C2', True)),
        macro_unweighted=(macro_f1(rows, 'C1', False), macro_f1(rows, 'C2', False)),
        mean_improved_delta=float(np.mean(improved)) if improved else 0.0,
        skipped=skipped,
    )


def summary_from_rows(rows: Sequence[ConditionRow]) -> BenchmarkSummary:
    """A summary built from per-condition values alone (no pooled counts)."""
    rows = list(rows)
    return BenchmarkSummary(
        rows=rows,
        counts={'C1': (0, 0, 0), 'C2': (0, 0, 0)},
        macro_weighted=(macro_f1(rows, 'C1', True), macro_f1(rows, 'C2', True)),
        macro_unweighted=(macro_f1(rows, 'C1', False), macro_f1(rows, 'C2', False)),
        mean_improved_delta=0.0,
    )


def format_summary_table(summary: BenchmarkSummary) -> str:
    header = f"{'Condition':<10} {'N':>5} {'F1 C1':>7} {'F1 C2':>7} {'dF1':>8} {'F0':>5} {'F1':>5} {'F2':>5}"
    lines = [header, '-' * len(header)]
    for row in summary.rows:
        lines.append(f"{row.condition:<10} {row.n:>5d} {row.f1_c1:>7.3f} {row.f1_c2:>7.3f} {row.delta_f1:>+8.4f} "
                     f"{row.flags['F0']:>5d} {row.flags['F1']:>5d} {row.flags['F2']:>5d}")
    totals = summary.flag_totals
    n = sum(row.n for row in summary.rows)
    c1, c2 = summary.macro_weighted
    lines.append('-' * len(header))
    lines.append(f"{'Macro':<10} {n:>5d} {c1:>7.3f} {c2:>7.3f} {c2 - c1:>+8.4f} "
                 f"{totals['F0']:>5d} {totals['F1']:>5d} {totals['F2']:>5d}")
    u1, u2 = summary.macro_unweighted
    lines.append(f"{'Macro(unw)':<10} {'':>5} {u1:>7.3f} {u2:>7.3f} {u2 - u1:>+8.4f}")

    if any(summary.counts['C1']) or any(summary.counts['C2']):
        lines.append('')
        for variant in VARIANTS:
            tp, fp, fn = summary.counts[variant]
            p, r, f1 = summary.micro(variant)
            lines.append(f"Micro {variant}: TP={tp} FP={fp} FN={fn} P={p:.4f} R={r:.4f} F1={f1:.4f} "
                         f"under-detection={summary.under_detection(variant):.4f}")
        d_tp, d_fp, d_fn = summary.delta_counts
        lines.append(f"dRecall (micro) = {summary.delta_recall:+.4f} "
                     f"(dTP={d_tp:+d}, dFN={d_fn:+d}, dFP={d_fp:+d})")
        lines.append(f"Mean dF1 on improved images = {summary.mean_improved_delta:+.4f}")
    if summary.skipped:
        lines.append(f"Skipped images: {summary.skipped}")
    lines.append('')
    lines.append(f"Note: {ANNOTATION_BIAS_CAVEAT}")
    return '\n'.join(lines)


def wem_accuracy(results: Sequence[ImageResult]) -> List[WemAccuracyRow]:
    """Per labelled condition: how often WEM routing agreed with the label."""
    by_condition: Dict[str, List[ImageResult]] = defaultdict(list)
    for res in results:
        by_condition[res.condition].append(res)
    rows = []
    for condition in [c for c in EVAL_CONDITIONS if c in by_condition]:
        group = by_condition[condition]
        errors = Counter(res.routed for res in group if res.routed != condition)
        rows.append(WemAccuracyRow(
            condition=condition,
            n=len(group),
            correct=sum(1 for res in group if res.routed == condition),
            primary_error=min(errors, key=lambda c: (-errors[c], c)) if errors else None,
        ))
    return rows


def format_wem_table(rows: Sequence[WemAccuracyRow]) -> str:
    lines = [f"{'Condition':<10} {'N':>5} {'Correct':>8} {'Accuracy':>9}  Primary error", '-' * 50]
    for row in rows:
        lines.append(f"{row.condition:<10} {row.n:>5d} {row.correct:>8d} {row.accuracy:>9.3f}  "
                     f"{row.primary_error or '-'}")
    return '\n'.join(lines)


def _route(raster: np.ndarray, gt: GtImage, routing: str) -> WeatherEstimate:
    if routing == 'gt_label':
        return WeatherEstimate(gt.condition, severity_for(gt.condition, lab_stats(raster)), source='label')
    return estimate(raster)


def run_benchmark(corpus: Sequence[GtImage], detector: DetectorContract,
                  enhancer: Callable = enhance, routing: str = 'gt_label',
                  cfg: Optional[FilterConfig] = None, flags: Optional[AblationFlags] = None,
                  conf_thresh: float = DEFAULT_CONF, iou_thresh: float = DEFAULT_MATCH_IOU,
                  night_gate: Optional[float] = None,
                  sed: Optional[SceneDatabase] = None, embedder=None) -> BenchmarkReport:
    """
    Run the C1 / C2 comparison over a corpus.

    Args:
        corpus: Annotated images
        detector: Detector applied to both variants
        enhancer: CAPE dispatch (replaced by pass-through under A4)
        routing: 'gt_label' (upper bound) or 'wem'
        cfg: CAPE filter configuration
        flags: Ablation flags; A3 and A4 apply here
        conf_thresh: Detection confidence threshold
        iou_thresh: Match IoU threshold
        night_gate: Luminance gate for fog frames
        sed: Scene database to take filter recommendations from
        embedder: Embedder for SED queries (required with sed)

    Returns:
        Per-image results, summary and, for WEM routing, the accuracy table
    """
    if routing not in ROUTINGS:
        raise BenchmarkError(f"unknown routing {routing!r}, expected one of {ROUTINGS}")
    if routing == 'gt_label':
        unlabelled = [gt.image for gt in corpus if gt.condition is None]
        if unlabelled:
            raise BenchmarkError(f"gt_label routing needs condition labels; {len(unlabelled)} images have none "
                                 f"(first: {unlabelled[0]})")
    if sed is not None and embedder is None:
        raise BenchmarkError("a scene database needs an embedder")
    cfg = cfg or FilterConfig()
    flags = flags or AblationFlags()
    if flags.cape_passthrough:
        enhancer = passthrough

    logger.info(f"Benchmark: {len(corpus)} images, routing={routing}, ablations={flags.ids() or 'none'}")
    results = []
    skipped = 0
    for i, gt in enumerate(corpus):
        try:
            raster = gt.load()
            est = _route(raster, gt, routing)
            if flags.fixed_severity_0_6:
                est = replace(est, severity=0.6)
            image_cfg = cfg
            if sed is not None and len(sed):
                rec = sed.recommend(embedder.embed(raster))
                if rec is not None and rec.condition == est.condition:
                    image_cfg = apply_recommendation(cfg, est.condition, rec.params)
            enhanced, _ = enhancer(raster, est, image_cfg, night_gate)
            c1_dets = detector.detect(Frame(raster, i, annotations=gt.boxes))
            c2_dets = detector.detect(Frame(enhanced, i, annotations=gt.boxes))
        except (ValueError, FilterConfigError) as e:
            logger.warning(f"Skipping {gt.image}: {str(e)}")
            skipped += 1
            continue
        c1 = match_image(c1_dets, gt.boxes, iou_thresh, conf_thresh, gt.image, 'C1')
        c2 = match_image(c2_dets, gt.boxes, iou_thresh, conf_thresh, gt.image, 'C2')
        condition = gt.condition if gt.condition is not None else est.condition
        results.append(ImageResult(gt.image, condition, c1, c2, est.condition, est.severity))
        logger.debug(f"{gt.image}: {condition} routed={est.condition} F1 {c1.f1:.3f} -> {c2.f1:.3f}")

    summary = aggregate(results, skipped)
    wem_rows = []
    if routing == 'wem' and corpus and all(gt.condition is not None for gt in corpus):
        wem_rows = wem_accuracy(results)
    logger.info(f"Benchmark done: {len(results)} images, dRecall={summary.delta_recall:+.4f}")
    return BenchmarkReport(results, summary, wem_rows)


def jsonl_lines(results: Sequence[ImageResult]) -> List[str]:
    lines = []
    for res in results:
        for record in (res.c1, res.c2):
            lines.append(json.dumps({
                'image': os.path.basename(res.image),
                'variant': record.variant,
                'tp': record.tp,
                'fp': record.fp,
                'fn': record.fn,
                'p': round(record.precision, 6),
                'r': round(record.recall, 6),
                'f1': round(record.f1, 6),
                'flag': res.flag,
            }))
    return lines


def write_jsonl(results: Sequence[ImageResult], path: str) -> None:
    with open(path, 'w') as f:
        for line in jsonl_lines(results):
            f.write(line + '\n')
    logger.info(f"Wrote {2 * len(results)} records to {path}")


def parse_track_log(lines: Iterable[str]) -> Dict[int, List[Tuple[int, Detection]]]:
    """Track log lines grouped by frame: (track id, detection) pairs."""
    frames: Dict[int, List[Tuple[int, Detection]]] = defaultdict(list)
    for line in lines:
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        frame, track_id, class_id, x1, y1, x2, y2, conf = line.split(',')
        det = Detection(Box(float(x1), float(y1), float(x2), float(y2)), int(class_id),
                        min(max(float(conf), 0.0), 1.0))
        frames[int(frame)].append((int(track_id), det))
    return frames


def evaluate_track_log(track_log: Iterable[str], frames: Sequence[Frame],
                       iou_thresh: float = DEFAULT_MATCH_IOU, conf_thresh: float = DEFAULT_CONF) -> EvalRecord:
    """Pooled detection quality of a track log against per-frame ground truth."""
    by_frame = parse_track_log(track_log)
    records = []
    for frame in frames:
        if frame.annotations is None:
            continue
        dets = [det for _, det in by_frame.get(frame.t_index, [])]
        records.append(match_image(dets, frame.annotations, iou_thresh, conf_thresh, str(frame.t_index), 'track'))
    return EvalRecord.from_counts('track_log', 'track', *pool(records))


def _link_raw(by_frame: Dict[int, List[Tuple[int, Detection]]], gate: float = 0.3) -> Dict[int, List[Tuple[int, Box]]]:
    """Give raw detections (id -1) identities by IoU matching to the previous frame."""
    next_id = 0
    tracks: Dict[int, List[Tuple[int, Box]]] = defaultdict(list)
    previous: List[Tuple[int, Detection]] = []
    for frame in sorted(by_frame):
        current = []
        dets = [det for _, det in by_frame[frame]]
        pairs = {}
        if previous and dets:
            ious = iou_matrix([d.box for _, d in previous], [d.box for d in dets])
            for i, (_, prev) in enumerate(previous):
                for j, det in enumerate(dets):
                    if prev.class_id != det.class_id:
                        ious[i, j] = 0.0
            for i, j in hungarian(1.0 - ious):
                if ious[i, j] >= gate:
                    pairs[j] = previous[i][0]
        for j, det in enumerate(dets):
            if j in pairs:
                identity = pairs[j]
            else:
                identity, next_id = next_id, next_id + 1
            tracks[identity].append((frame, det.box))
            current.append((identity, det))
        previous = current
    return tracks


def track_jitter(track_log: Iterable[str]) -> float:
    """
    Mean magnitude of the frame-to-frame change in centre velocity, over
    all tracks; raw detection logs are linked by IoU first.
    """
    by_frame = parse_track_log(track_log)
    if any(track_id < 0 for entries in by_frame.values() for track_id, _ in entries):
        tracks = _link_raw(by_frame)
    else:
        tracks = defaultdict(list)
        for frame in sorted(by_frame):
            for track_id, det in by_frame[frame]:
                tracks[track_id].append((frame, det.box))

    accelerations = []
    for samples in tracks.values():
        for (f0, b0), (f1, b1), (f2, b2) in zip(samples, samples[1:], samples[2:]):
            if f1 != f0 + 1 or f2 != f1 + 1:
                continue
            c0, c1, c2 = (np.array(b.center) for b in (b0, b1, b2))
            accelerations.append(float(np.linalg.norm(c2 - 2 * c1 + c0)))
    return float(np.mean(accelerations)) if accelerations else 0.0


@dataclass
class AblationRow:
    ablation_id: str
    description: str
    metrics: Dict[str, float]


def _benchmark_metrics(report: BenchmarkReport) -> Dict[str, float]:
    s = report.summary
    return {
        'recall_c1': s.micro('C1')[1],
        'recall_c2': s.micro('C2')[1],
        'delta_recall': s.delta_recall,
        'macro_f1_c2': s.macro_weighted[1],
        'delta_macro_f1': s.macro_weighted[1] - s.macro_weighted[0],
    }


def _pipeline_metrics(frames: Sequence[Frame], make_pipeline: Callable[[AblationFlags], CadenetPipeline],
                      flags: AblationFlags, costs: StageCosts, fps: float) -> Dict[str, float]:
    result = SimulatedRunner(make_pipeline(flags), costs, fps).run(frames)
    periods = result.period_stats()
    quality = evaluate_track_log(result.track_log, frames)
    return {
        'safety_period_mean_ms': periods['mean'],
        'safety_period_p99_ms': periods['p99'],
        'q_latency_mean_ms': float(np.mean(result.q_latencies)) if result.q_latencies else 0.0,
        'track_precision': quality.precision,
        'track_recall': quality.recall,
        'track_f1': quality.f1,
        'jitter_px': track_jitter(result.track_log),
    }


def ablate(ids: Sequence[str], corpus: Sequence[GtImage], detector: DetectorContract,
           frames: Sequence[Frame], make_pipeline: Callable[[AblationFlags], CadenetPipeline],
           cfg: Optional[FilterConfig] = None, routing: str = 'gt_label',
           costs: Optional[StageCosts] = None, fps: float = 30.0) -> List[AblationRow]:
    """
    Run a baseline and each requested ablation.

    A3 and A4 change what the quality stream enhances and are measured with
    the C1 / C2 benchmark on ``corpus``; the others change the pipeline and
    are measured with simulated runs over ``frames``.

    Args:
        ids: Ablation IDs (A1..A7)
        corpus: Annotated images for the benchmark ablations
        detector: Benchmark detector
        frames: Sequence with per-frame ground truth for pipeline ablations
        make_pipeline: Builds a fresh pipeline for a set of flags
        cfg: CAPE filter configuration
        routing: Benchmark routing
        costs: Stage cost model
        fps: Camera rate
    """
    for ablation_id in ids:
        if ablation_id not in ABLATIONS:
            raise BenchmarkError(f"unknown ablation id {ablation_id!r}")
    costs = costs or StageCosts()
    rows = []

    needs_benchmark = any(a in BENCHMARK_ABLATIONS for a in ids)
    needs_pipeline = any(a not in BENCHMARK_ABLATIONS for a in ids)
    baseline: Dict[str, float] = {}
    if needs_benchmark:
        baseline.update(_benchmark_metrics(run_benchmark(corpus, detector, routing=routing, cfg=cfg)))
    if needs_pipeline:
        baseline.update(_pipeline_metrics(frames, make_pipeline, AblationFlags(), costs, fps))
    rows.append(AblationRow('base', 'Full system', baseline))

    for ablation_id in ids:
        flags = AblationFlags.from_ids([ablation_id])
        logger.info(f"Ablation {ablation_id}: {ABLATION_DESCRIPTIONS[ablation_id]}")
        if ablation_id in BENCHMARK_ABLATIONS:
            metrics = _benchmark_metrics(run_benchmark(corpus, detector, routing=routing, cfg=cfg, flags=flags))
        else:
            metrics = _pipeline_metrics(frames, make_pipeline, flags, costs, fps)
        rows.append(AblationRow(ablation_id, ABLATION_DESCRIPTIONS[ablation_id], metrics))
    return rows


def format_ablation_table(rows: Sequence[AblationRow]) -> str:
    lines = []
    for row in rows:
        metrics = ' '.join(f"{k}={v:.4f}" for k, v in row.metrics.items())
        lines.append(f"{row.ablation_id:<5} {row.description:<24} {metrics}")
    return '\n'.join(lines)
