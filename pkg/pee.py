#!/usr/bin/env python3
"""
Patch-level Entropy Estimation

Per 16x16 patch, a 16-bin luminance histogram (bin = sample >> 4) gives the
Shannon entropy H; the patch reliability is R = 1 - H / log2(16). Flat,
information-poor patches are reliable for the fast detector (R near 1);
cluttered or degraded patches defer to the enhanced stream.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import cv2
import numpy as np

from imaging import validate_raster

logger = logging.getLogger(__name__)

PATCH_SIZE = 16
HISTOGRAM_BINS = 16
MAX_ENTROPY = math.log2(HISTOGRAM_BINS)


class ReliabilityLookupError(ValueError):
    """Raised for a reliability query outside the map's source frame"""


@dataclass(frozen=True)
class ReliabilityMap:
    grid: np.ndarray
    patch_size: int
    source_dims: Tuple[int, int]  # (height, width)

    def __post_init__(self):
        height, width = self.source_dims
        expected = (math.ceil(height / self.patch_size), math.ceil(width / self.patch_size))
        if self.grid.shape != expected:
            raise ValueError(f"grid shape {self.grid.shape} does not match {expected} for {self.source_dims}")
        if np.any(self.grid < 0) or np.any(self.grid > 1):
            raise ValueError("reliability values must lie in [0, 1]")


def entropy_map(gray: np.ndarray, patch_size: int = PATCH_SIZE) -> ReliabilityMap:
    """
    Reliability of every patch of a single-channel raster.

    Edge patches are normalised by their actual pixel count.
    """
    validate_raster(gray, 1)
    height, width = gray.shape
    grid_h, grid_w = math.ceil(height / patch_size), math.ceil(width / patch_size)

    patch_rows = np.arange(height) // patch_size
    patch_cols = np.arange(width) // patch_size
    patch_id = patch_rows[:, None] * grid_w + patch_cols[None, :]
    bins = (gray >> 4).astype(np.int64)

    counts = np.bincount((patch_id * HISTOGRAM_BINS + bins).ravel(),
                         minlength=grid_h * grid_w * HISTOGRAM_BINS)
    counts = counts.reshape(grid_h * grid_w, HISTOGRAM_BINS).astype(np.float64)
    p = counts / counts.sum(axis=1, keepdims=True)
    logs = np.log2(p, out=np.zeros_like(p), where=p > 0)
    entropy = -(p * logs).sum(axis=1)

    grid = np.clip(1.0 - entropy / MAX_ENTROPY, 0.0, 1.0).reshape(grid_h, grid_w)
    return ReliabilityMap(grid=grid, patch_size=patch_size, source_dims=(height, width))


def uniform_map(height: int, width: int, value: float, patch_size: int = PATCH_SIZE) -> ReliabilityMap:
    grid = np.full((math.ceil(height / patch_size), math.ceil(width / patch_size)), float(value))
    return ReliabilityMap(grid=grid, patch_size=patch_size, source_dims=(height, width))


def _axis_weights(coord, cells: int, patch_size: int):
    f = np.clip(np.asarray(coord, dtype=np.float64) / patch_size - 0.5, 0.0, cells - 1)
    lo = np.floor(f).astype(np.int64)
    hi = np.minimum(lo + 1, cells - 1)
    return lo, hi, f - lo


def reliability_at(rmap: ReliabilityMap, x: float, y: float) -> float:
    """
    Bilinear reliability at pixel coordinates (x, y).

    Patch values sit at patch centres; outside the outermost centres the
    nearest value is held.
    """
    height, width = rmap.source_dims
    if not (0.0 <= x <= width and 0.0 <= y <= height):
        raise ReliabilityLookupError(f"({x}, {y}) outside frame {width}x{height}")
    grid_h, grid_w = rmap.grid.shape
    x0, x1, ax = _axis_weights(x, grid_w, rmap.patch_size)
    y0, y1, ay = _axis_weights(y, grid_h, rmap.patch_size)
    g = rmap.grid
    top = g[y0, x0] * (1 - ax) + g[y0, x1] * ax
    bottom = g[y1, x0] * (1 - ax) + g[y1, x1] * ax
    return float(np.clip(top * (1 - ay) + bottom * ay, 0.0, 1.0))


def upsample(rmap: ReliabilityMap) -> np.ndarray:
    """Dense H x W reliability sampled at pixel centres."""
    height, width = rmap.source_dims
    grid_h, grid_w = rmap.grid.shape
    x0, x1, ax = _axis_weights(np.arange(width) + 0.5, grid_w, rmap.patch_size)
    y0, y1, ay = _axis_weights(np.arange(height) + 0.5, grid_h, rmap.patch_size)
    g = rmap.grid
    top = g[y0][:, x0] * (1 - ax) + g[y0][:, x1] * ax
    bottom = g[y1][:, x0] * (1 - ax) + g[y1][:, x1] * ax
    return np.clip(top * (1 - ay[:, None]) + bottom * ay[:, None], 0.0, 1.0)


def render_heatmap(rmap: ReliabilityMap) -> np.ndarray:
    """RGB heat image of the upsampled map (blue = unreliable, red = reliable)."""
    dense = np.round(upsample(rmap) * 255.0).astype(np.uint8)
    return cv2.cvtColor(cv2.applyColorMap(dense, cv2.COLORMAP_JET), cv2.COLOR_BGR2RGB)


def format_grid(rmap: ReliabilityMap) -> str:
    lines: List[str] = [f"# patch_size={rmap.patch_size} source={rmap.source_dims[1]}x{rmap.source_dims[0]}"]
    for row in rmap.grid:
        lines.append(' '.join(f"{v:.3f}" for v in row))
    return '\n'.join(lines) + '\n'
