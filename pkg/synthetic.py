#!/usr/bin/env python3
"""
Synthetic scenes, weather degradation and corpora

Deterministic generators for desk-scale runs of the benchmark and the
pipeline. A scene is a sky band of the atmospheric colour above a smooth
ground gradient, with 24x24 checkerboard objects (grey levels 40 and 200,
4-pixel cells) whose clean RMS contrast is recorded as their reference.

Degradations, each with a severity s in [0, 1]:
    fog    forward scattering I = J t0 + A (1 - t0), t0 = 1 - 0.85 s
    rain   additive vertical bright streaks, width 1-2 px
    sand   contrast compression towards an ochre cast
    snow   contrast compression towards a bluish white

Features:
    - Corpus writer: PNG images, Pascal VOC XML and a labels.csv manifest
    - Moving-object sequences with per-frame ground truth for pipeline runs
    - All randomness flows from one seed
"""

import csv
import logging
import os
import xml.etree.ElementTree as ET
from typing import List, Optional, Sequence, Tuple

import numpy as np

from detectors import Frame
from geometry import Box, GtBox
from imaging import rms_contrast, write_raster

logger = logging.getLogger(__name__)

ATMOSPHERE = (230, 230, 230)
GROUND_TOP = 140.0
GROUND_BOTTOM = 160.0
OBJECT_SIZE = 24
OBJECT_CELL = 4
OBJECT_DARK = 40
OBJECT_BRIGHT = 200
OBJECT_MARGIN = 16
HORIZON_GAP = 8
OBJECT_CLASS = 2
OBJECT_NAME = 'car'

FOG_T0_SLOPE = 0.85
SAND_CAST = (210.0, 180.0, 120.0)
SAND_STRENGTH = 0.7
SNOW_CAST = (245.0, 245.0, 250.0)
SNOW_STRENGTH = 0.6

DEGRADATIONS = ('fog', 'rain', 'sand', 'snow', 'clear')

LABELS_FILE = 'labels.csv'


def fog_transmission(severity: float) -> float:
    """Scene transmission of the synthetic fog at a given severity."""
    return 1.0 - FOG_T0_SLOPE * severity


def background(height: int, width: int) -> np.ndarray:
    """Sky band (top fifth) over a vertical ground gradient."""
    scene = np.empty((height, width, 3), dtype=np.uint8)
    horizon = height // 5
    scene[:horizon] = ATMOSPHERE
    ramp = np.linspace(GROUND_TOP, GROUND_BOTTOM, height - horizon)
    scene[horizon:] = np.round(ramp)[:, None, None].astype(np.uint8)
    return scene


def paint_object(scene: np.ndarray, x: int, y: int) -> Box:
    yy, xx = np.mgrid[0:OBJECT_SIZE, 0:OBJECT_SIZE]
    checker = ((yy // OBJECT_CELL + xx // OBJECT_CELL) % 2).astype(bool)
    patch = np.where(checker, OBJECT_BRIGHT, OBJECT_DARK).astype(np.uint8)
    scene[y:y + OBJECT_SIZE, x:x + OBJECT_SIZE] = patch[..., None]
    return Box(float(x), float(y), float(x + OBJECT_SIZE), float(y + OBJECT_SIZE))


def _ground_rows(height: int) -> Tuple[int, int]:
    top = height // 5 + max(HORIZON_GAP, OBJECT_MARGIN)
    bottom = height - OBJECT_MARGIN - OBJECT_SIZE
    if bottom < top:
        raise ValueError(f"scene height {height} too small for {OBJECT_SIZE}px objects")
    return top, bottom


def render_scene(rng: np.random.Generator, height: int = 128, width: int = 192,
                 n_objects: int = 3) -> Tuple[np.ndarray, List[GtBox]]:
    """
    Render a clean scene.

    Each object gets its own vertical slot of width // n_objects pixels, so
    objects never overlap or touch.

    Returns:
        (RGB raster, ground-truth boxes carrying their clean reference contrast)
    """
    if n_objects < 0:
        raise ValueError(f"object count must be >= 0, got {n_objects}")
    scene = background(height, width)
    if n_objects == 0:
        return scene, []
    slot = width // n_objects
    if slot < OBJECT_SIZE + 2 * OBJECT_MARGIN:
        raise ValueError(f"width {width} too small for {n_objects} objects")
    top, bottom = _ground_rows(height)

    boxes = []
    for i in range(n_objects):
        x = i * slot + int(rng.integers(OBJECT_MARGIN, slot - OBJECT_MARGIN - OBJECT_SIZE + 1))
        y = int(rng.integers(top, bottom + 1))
        boxes.append(paint_object(scene, x, y))
    gts = [GtBox(OBJECT_CLASS, b, OBJECT_NAME, rms_contrast(scene, b)) for b in boxes]
    return scene, gts


def add_rain_streaks(scene: np.ndarray, severity: float,
                     rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Overlay vertical bright streaks.

    Streak columns are 8-14 px apart, 1-2 px wide, with segments 12-40 px
    long; brightness is 40 + 60 s grey levels.

    Returns:
        (rainy raster, boolean streak mask)
    """
    height, width = scene.shape[:2]
    mask = np.zeros((height, width), dtype=bool)
    x = int(rng.integers(0, 8))
    while x < width:
        w = int(rng.integers(1, 3))
        y = int(rng.integers(0, 12))
        while y < height:
            length = int(rng.integers(12, 41))
            mask[y:y + length, x:x + w] = True
            y += length + int(rng.integers(6, 20))
        x += int(rng.integers(8, 15))

    brightness = 40.0 + 60.0 * severity
    out = scene.astype(np.float64)
    out[mask] += brightness
    return np.clip(np.round(out), 0, 255).astype(np.uint8), mask


def _compress(scene: np.ndarray, cast: Sequence[float], strength: float) -> np.ndarray:
    out = scene.astype(np.float64) * (1.0 - strength) + strength * np.asarray(cast, dtype=np.float64)
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def degrade(scene: np.ndarray, condition: str, severity: float,
            rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Apply synthetic weather to a clean RGB scene.

    Args:
        scene: Clean raster
        condition: One of fog, rain, sand, snow, clear
        severity: Degradation strength in [0, 1]
        rng: Random source for rain streak placement

    Returns:
        Degraded raster of the same shape
    """
    if not 0.0 <= severity <= 1.0:
        raise ValueError(f"severity must be in [0, 1], got {severity}")
    if condition == 'fog':
        t0 = fog_transmission(severity)
        out = scene.astype(np.float64) * t0 + np.asarray(ATMOSPHERE, dtype=np.float64) * (1.0 - t0)
        return np.clip(np.round(out), 0, 255).astype(np.uint8)
    if condition == 'rain':
        out, _ = add_rain_streaks(scene, severity, rng if rng is not None else np.random.default_rng(0))
        return out
    if condition == 'sand':
        return _compress(scene, SAND_CAST, SAND_STRENGTH * severity)
    if condition == 'snow':
        return _compress(scene, SNOW_CAST, SNOW_STRENGTH * severity)
    if condition == 'clear':
        return scene.copy()
    raise ValueError(f"unknown degradation {condition!r}, expected one of {DEGRADATIONS}")


def voc_xml(filename: str, height: int, width: int, gts: Sequence[GtBox]) -> ET.ElementTree:
    root = ET.Element('annotation')
    ET.SubElement(root, 'filename').text = filename
    size = ET.SubElement(root, 'size')
    ET.SubElement(size, 'width').text = str(width)
    ET.SubElement(size, 'height').text = str(height)
    ET.SubElement(size, 'depth').text = '3'
    for gt in gts:
        obj = ET.SubElement(root, 'object')
        ET.SubElement(obj, 'name').text = gt.name or OBJECT_NAME
        ET.SubElement(obj, 'pose').text = 'Unspecified'
        ET.SubElement(obj, 'truncated').text = '0'
        ET.SubElement(obj, 'difficult').text = '0'
        if gt.ref_contrast is not None:
            ET.SubElement(obj, 'ref_contrast').text = f"{gt.ref_contrast:.4f}"
        bndbox = ET.SubElement(obj, 'bndbox')
        for tag, value in zip(('xmin', 'ymin', 'xmax', 'ymax'), gt.box.as_tuple()):
            ET.SubElement(bndbox, tag).text = str(int(round(value)))
    return ET.ElementTree(root)


def generate_corpus(out_dir: str, n: int, conditions: Sequence[str] = ('fog',), seed: int = 0,
                    severity_range: Tuple[float, float] = (0.6, 1.0),
                    height: int = 128, width: int = 192, n_objects: int = 3) -> List[str]:
    """
    Write a labelled corpus of degraded scenes.

    Images cycle through ``conditions``; severities are uniform in
    ``severity_range``.

    Returns:
        Image file names in manifest order
    """
    lo, hi = severity_range
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"invalid severity range {severity_range}")
    for condition in conditions:
        if condition not in DEGRADATIONS:
            raise ValueError(f"unknown degradation {condition!r}")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)

    names = []
    rows = []
    for i in range(n):
        condition = conditions[i % len(conditions)]
        severity = float(rng.uniform(lo, hi))
        scene, gts = render_scene(rng, height, width, n_objects)
        image = degrade(scene, condition, severity, rng)
        name = f"img_{i:04d}.png"
        write_raster(os.path.join(out_dir, name), image)
        voc_xml(name, height, width, gts).write(os.path.join(out_dir, f"img_{i:04d}.xml"))
        names.append(name)
        rows.append((name, condition, f"{severity:.4f}"))

    with open(os.path.join(out_dir, LABELS_FILE), 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(('image', 'condition', 'severity'))
        writer.writerows(rows)
    logger.info(f"Wrote synthetic corpus of {n} images ({', '.join(conditions)}) to {out_dir}")
    return names


def synthetic_sequence(n_frames: int, condition: str = 'clear', severity: float = 0.0,
                       seed: int = 0, height: int = 160, width: int = 192,
                       n_objects: int = 3, fps: float = 30.0) -> List[Frame]:
    """
    Frames of objects moving horizontally in separate lanes, bouncing off
    the image sides, with per-frame ground truth.
    """
    rng = np.random.default_rng(seed)
    top, bottom = _ground_rows(height)
    lane_h = OBJECT_SIZE + HORIZON_GAP
    if n_objects and (n_objects - 1) * lane_h > bottom - top:
        raise ValueError(f"scene height {height} too small for {n_objects} lanes")

    xs = [float(rng.integers(0, width - OBJECT_SIZE)) for _ in range(n_objects)]
    vs = [float(rng.choice([-2.0, -1.0, 1.0, 2.0])) for _ in range(n_objects)]
    ys = [top + i * lane_h for i in range(n_objects)]
    t_cam = 1000.0 / fps

    frames = []
    for t in range(n_frames):
        scene = background(height, width)
        boxes = [paint_object(scene, int(round(x)), y) for x, y in zip(xs, ys)]
        gts = [GtBox(OBJECT_CLASS, b, OBJECT_NAME, rms_contrast(scene, b)) for b in boxes]
        frames.append(Frame(raster=degrade(scene, condition, severity, rng),
                            t_index=t, t_capture=t * t_cam, annotations=gts))
        for i in range(n_objects):
            nx = xs[i] + vs[i]
            if nx < 0 or nx > width - OBJECT_SIZE:
                vs[i] = -vs[i]
                nx = xs[i] + vs[i]
            xs[i] = nx
    return frames
