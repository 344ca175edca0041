#!/usr/bin/env python3
"""
Raster primitives for the CADENet enhancement and estimation stages

This module provides the colour conversions, histogram equalisation, smoothing,
morphology, inpainting and edge statistics used by the weather estimator and
the enhancement filters.

Rasters are numpy uint8 arrays in row-major order, either H x W (single
channel) or H x W x 3 (RGB). Every function here is pure and may be called
from any thread.

Features:
    - sRGB <-> CIELAB (L on the 0..255 scale) and HSV conversion
    - CLAHE with single-tile fallback for tiny rasters
    - Bilateral, median, gamma and vertical morphological opening
    - TELEA inpainting that never touches unmasked pixels
    - Edge density and vertical-edge ratio for the weather features
    - PNG / binary PPM read and write
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import cv2
import numpy as np

logger = logging.getLogger(__name__)

# Canny hysteresis thresholds on the 8-bit gradient magnitude
CANNY_LOW = 50
CANNY_HIGH = 150

# Half-width of the orientation bins used for the vertical-edge ratio
_ORIENTATION_TAN = math.tan(math.radians(22.5))


class RasterError(ValueError):
    """Raised when an array does not satisfy the raster contract"""


@dataclass(frozen=True)
class LabStats:
    """The five scalar features the weather estimator works from."""
    mu_L: float
    sigma_L: float
    mu_S: float
    rho_e: float
    r_v: float

    def __post_init__(self):
        if self.sigma_L < 0:
            raise ValueError(f"sigma_L must be >= 0, got {self.sigma_L}")
        if not 0.0 <= self.rho_e <= 1.0:
            raise ValueError(f"rho_e must be in [0, 1], got {self.rho_e}")
        if self.r_v < 0:
            raise ValueError(f"r_v must be >= 0, got {self.r_v}")


def validate_raster(r, channels: Optional[int] = None) -> np.ndarray:
    """
    Check that an array is a valid raster.

    Args:
        r: Candidate array
        channels: Required channel count (1 or 3), or None for either

    Returns:
        The same array, for chaining
    """
    if not isinstance(r, np.ndarray):
        raise RasterError(f"raster must be a numpy array, got {type(r).__name__}")
    if r.dtype != np.uint8:
        raise RasterError(f"raster must be uint8, got {r.dtype}")
    if r.ndim == 2:
        found = 1
    elif r.ndim == 3 and r.shape[2] == 3:
        found = 3
    else:
        raise RasterError(f"raster must be HxW or HxWx3, got shape {r.shape}")
    if r.shape[0] == 0 or r.shape[1] == 0:
        raise RasterError("raster must not be empty")
    if channels is not None and found != channels:
        raise RasterError(f"expected a {channels}-channel raster, got {found} channel(s)")
    return r


def channel_count(r: np.ndarray) -> int:
    return 1 if r.ndim == 2 else r.shape[2]


def to_lab(r: np.ndarray) -> np.ndarray:
    """sRGB to CIELAB; L is rescaled to 0..255 and a, b are offset by 128."""
    validate_raster(r, 3)
    return cv2.cvtColor(r, cv2.COLOR_RGB2LAB)


def from_lab(r: np.ndarray) -> np.ndarray:
    validate_raster(r, 3)
    return cv2.cvtColor(r, cv2.COLOR_LAB2RGB)


def to_hsv(r: np.ndarray) -> np.ndarray:
    """RGB to HSV with S and V on 0..255 (H on OpenCV's 0..179)."""
    validate_raster(r, 3)
    return cv2.cvtColor(r, cv2.COLOR_RGB2HSV)


def to_gray(r: np.ndarray) -> np.ndarray:
    validate_raster(r)
    if r.ndim == 2:
        return r
    return cv2.cvtColor(r, cv2.COLOR_RGB2GRAY)


def luma(r: np.ndarray) -> np.ndarray:
    """The L channel for colour rasters, the raster itself for grayscale."""
    validate_raster(r)
    if r.ndim == 2:
        return r
    return np.ascontiguousarray(to_lab(r)[..., 0])


def clahe(l: np.ndarray, clip: float, tiles: Tuple[int, int] = (8, 8)) -> np.ndarray:
    """
    Contrast-limited adaptive histogram equalisation on a single channel.

    Excess counts above the clip limit are redistributed uniformly over all
    bins in one pass and tile mappings are blended bilinearly. An infinite
    clip disables clipping.

    Args:
        l: Single-channel raster
        clip: Clip limit relative to the mean bin count (> 0)
        tiles: Tile grid as (rows, cols)

    Returns:
        Equalised raster of the same shape
    """
    validate_raster(l, 1)
    if not clip > 0:
        raise ValueError(f"clip must be > 0, got {clip}")
    rows, cols = tiles
    if rows < 1 or cols < 1:
        raise ValueError(f"tile grid must be at least 1x1, got {tiles}")

    height, width = l.shape
    if height < rows or width < cols:
        logger.debug(f"Raster {width}x{height} smaller than tile grid {cols}x{rows}, using a single tile")
        rows, cols = 1, 1

    clip_limit = 0.0 if math.isinf(clip) else float(clip)
    equaliser = cv2.createCLAHE(clipLimit=clip_limit, tileGridSize=(cols, rows))
    return equaliser.apply(l)


def clahe_lab(r: np.ndarray, clip: float, tiles: Tuple[int, int] = (8, 8)) -> np.ndarray:
    """CLAHE on the luminance only; grayscale rasters are equalised directly."""
    validate_raster(r)
    if r.ndim == 2:
        return clahe(r, clip, tiles)
    lab = to_lab(r)
    lab[..., 0] = clahe(np.ascontiguousarray(lab[..., 0]), clip, tiles)
    return from_lab(lab)


def bilateral(r: np.ndarray, d: int, sigma: float) -> np.ndarray:
    """
    Edge-preserving bilateral smoothing.

    The same sigma drives the spatial and the range weights; borders are
    replicated.

    Args:
        r: Raster (1 or 3 channels)
        d: Odd window diameter >= 1
        sigma: Spatial and range standard deviation (> 0)

    Returns:
        Smoothed raster
    """
    validate_raster(r)
    if d < 1 or d % 2 == 0:
        raise ValueError(f"bilateral diameter must be odd and >= 1, got {d}")
    if not sigma > 0:
        raise ValueError(f"bilateral sigma must be > 0, got {sigma}")
    if d == 1:
        # OpenCV widens a zero radius to one pixel
        return r.copy()
    return cv2.bilateralFilter(r, d, float(sigma), float(sigma), borderType=cv2.BORDER_REPLICATE)


def gamma_lut(g: float) -> np.ndarray:
    if g < 1:
        raise ValueError(f"gamma must be >= 1, got {g}")
    levels = np.arange(256, dtype=np.float64) / 255.0
    return np.clip(np.round(255.0 * levels ** (1.0 / g)), 0, 255).astype(np.uint8)


def gamma_correct(r: np.ndarray, g: float) -> np.ndarray:
    """Brightening gamma: out = 255 * (in / 255) ** (1 / g), g >= 1."""
    validate_raster(r)
    return cv2.LUT(r, gamma_lut(g))


def median(r: np.ndarray, k: int = 5) -> np.ndarray:
    validate_raster(r)
    if k < 3 or k % 2 == 0:
        raise ValueError(f"median kernel must be odd and >= 3, got {k}")
    return cv2.medianBlur(r, k)


def morph_open_vertical(mask: np.ndarray, length: int = 7) -> np.ndarray:
    """
    Morphological opening with a 1 x length vertical structuring element.

    Keeps vertical runs at least ``length`` pixels tall and erases blobs
    shorter than that, such as horizontal segments.
    """
    validate_raster(mask, 1)
    if not np.isin(mask, (0, 255)).all():
        raise RasterError("mask values must be 0 or 255")
    kernel = np.ones((length, 1), dtype=np.uint8)
    return cv2.morphologyEx(mask, cv2.MORPH_OPEN, kernel, borderType=cv2.BORDER_REPLICATE)


def _inpaint(r: np.ndarray, mask: np.ndarray, radius: int, flags: int) -> np.ndarray:
    validate_raster(r)
    validate_raster(mask, 1)
    if mask.shape != r.shape[:2]:
        raise RasterError(f"mask shape {mask.shape} does not match raster {r.shape[:2]}")
    if radius < 1:
        raise ValueError(f"inpaint radius must be >= 1, got {radius}")

    holes = mask > 0
    if not holes.any():
        return r.copy()
    if holes.all():
        raise RasterError("cannot inpaint a fully masked raster")

    filled = cv2.inpaint(r, holes.astype(np.uint8) * 255, radius, flags)
    keep = holes if r.ndim == 2 else holes[..., None]
    return np.where(keep, filled, r).astype(np.uint8)


def telea_inpaint(r: np.ndarray, mask: np.ndarray, radius: int = 3) -> np.ndarray:
    """
    Fast-marching inpainting (Telea) of the nonzero mask pixels.

    Pixels outside the mask are returned bit-identical to the input.
    """
    return _inpaint(r, mask, radius, cv2.INPAINT_TELEA)


def ns_inpaint(r: np.ndarray, mask: np.ndarray, radius: int = 3) -> np.ndarray:
    """Navier-Stokes inpainting with the same masking contract as telea_inpaint."""
    return _inpaint(r, mask, radius, cv2.INPAINT_NS)


def edge_features(r: np.ndarray) -> Tuple[float, float]:
    """
    Canny edge density and vertical-edge ratio.

    An edge pixel counts as vertical structure when its gradient lies within
    22.5 degrees of horizontal, and as horizontal structure when its gradient
    lies within 22.5 degrees of vertical.

    The horizontal count is floored at 1, so a frame without horizontal
    structure reports its vertical count as the ratio and a frame without
    edges reports 0.

    Returns:
        (rho_e, r_v) with r_v = vertical / max(horizontal, 1)
    """
    gray = luma(r)
    edges = cv2.Canny(gray, CANNY_LOW, CANNY_HIGH) > 0
    rho_e = float(np.count_nonzero(edges)) / edges.size

    gx = np.abs(cv2.Sobel(gray, cv2.CV_32F, 1, 0, ksize=3))[edges]
    gy = np.abs(cv2.Sobel(gray, cv2.CV_32F, 0, 1, ksize=3))[edges]
    vertical = int(np.count_nonzero(gy <= _ORIENTATION_TAN * gx))
    horizontal = int(np.count_nonzero(gx <= _ORIENTATION_TAN * gy))
    r_v = vertical / max(horizontal, 1)
    return rho_e, float(r_v)


def lab_stats(r: np.ndarray) -> LabStats:
    """Compute the weather features of an RGB raster."""
    validate_raster(r, 3)
    l = np.ascontiguousarray(to_lab(r)[..., 0])
    s = to_hsv(r)[..., 1]
    rho_e, r_v = edge_features(l)
    return LabStats(
        mu_L=float(l.mean()),
        sigma_L=float(l.std()),
        mu_S=float(s.mean()),
        rho_e=rho_e,
        r_v=r_v,
    )


def rms_contrast(r: np.ndarray, box) -> float:
    """Standard deviation of the gray levels inside a box (pixel coordinates)."""
    gray = to_gray(r)
    height, width = gray.shape
    x1 = max(int(math.floor(box.x1)), 0)
    y1 = max(int(math.floor(box.y1)), 0)
    x2 = min(int(math.ceil(box.x2)), width)
    y2 = min(int(math.ceil(box.y2)), height)
    if x2 <= x1 or y2 <= y1:
        return 0.0
    return float(gray[y1:y2, x1:x2].astype(np.float64).std())


def read_raster(path: str) -> np.ndarray:
    """Read a PNG or PPM file into an RGB (or grayscale) raster."""
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise RasterError(f"could not read image {path}")
    if data.dtype != np.uint8:
        raise RasterError(f"{path}: only 8-bit images are supported, got {data.dtype}")
    if data.ndim == 2:
        return data
    if data.shape[2] == 4:
        return cv2.cvtColor(data, cv2.COLOR_BGRA2RGB)
    return cv2.cvtColor(data, cv2.COLOR_BGR2RGB)


def write_raster(path: str, r: np.ndarray) -> None:
    validate_raster(r)
    data = r if r.ndim == 2 else cv2.cvtColor(r, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), data):
        raise RasterError(f"could not write image {path}")
    logger.debug(f"Wrote raster {r.shape} to {path}")


def encode_png(r: np.ndarray) -> bytes:
    validate_raster(r)
    data = r if r.ndim == 2 else cv2.cvtColor(r, cv2.COLOR_RGB2BGR)
    ok, buf = cv2.imencode('.png', data)
    if not ok:
        raise RasterError("PNG encoding failed")
    return buf.tobytes()
