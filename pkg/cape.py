#!/usr/bin/env python3
"""
Condition-Adaptive Parameterised Enhancement

Selects a training-free enhancement filter per estimated weather condition:

    rain       five-stage morphological derain
    fog        dark channel prior dehazing, strength driven by severity
    sand/snow  CLAHE on the L channel
    clear      pass-through

Filter parameters come from a JSON file (filter_configs/default.json) merged
over DEFAULT_FILTER_CONFIG.

Features:
    - Per-stage timings and diagnostics in an EnhanceReport
    - Optional night gate: dark fog frames take the CLAHE branch instead of DCP
    - Validation that names the offending key
"""

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.ndimage import minimum_filter

from imaging import (
    bilateral,
    clahe,
    clahe_lab,
    from_lab,
    gamma_correct,
    luma,
    median,
    morph_open_vertical,
    ns_inpaint,
    telea_inpaint,
    to_lab,
    validate_raster,
)
from wem import WeatherEstimate

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = 'filter_configs/default.json'

DEFAULT_FILTER_CONFIG = {
    "rain": {
        "inpaint_method": "TELEA",
        "inpaint_radius": 3,
        "clahe_clip": 1.5,
        "bilateral_d": 5,
        "bilateral_sigma": 40.0,
        "streak_threshold": 8,
        "median_kernel": 5
    },
    "fog": {
        "method": "DCP",
        "dcp_kernel": 15,
        "atm_pct": 0.001,
        "post_clahe_clip": 2.0,
        "night_gate": None
    },
    "sand": {
        "clahe_clip": 2.0
    },
    "snow": {
        "clahe_clip": 2.0
    }
}

INPAINT_METHODS = ('TELEA', 'NS')
FOG_METHODS = ('DCP',)

# Stage 2 ranges on the streak fraction
RHO_MIN = 0.001
RHO_FALLBACK = 0.30

# Stage 3
GAMMA_LUMA_TARGET = 130.0
GAMMA_LUMA_FLOOR = 30.0
GAMMA_MIN = 1.05
GAMMA_MAX = 1.40

TRANSMISSION_MIN = 0.1


class FilterConfigError(ValueError):
    """Raised for an invalid filter configuration; the message names the key"""


class DegenerateFrameError(ValueError):
    """Raised when the atmospheric light is zero in some channel"""


@dataclass(frozen=True)
class RainParams:
    inpaint_method: str = 'TELEA'
    inpaint_radius: int = 3
    clahe_clip: float = 1.5
    bilateral_d: int = 5
    bilateral_sigma: float = 40.0
    streak_threshold: int = 8
    median_kernel: int = 5


@dataclass(frozen=True)
class FogParams:
    method: str = 'DCP'
    dcp_kernel: int = 15
    atm_pct: float = 0.001
    post_clahe_clip: float = 2.0
    night_gate: Optional[float] = None


@dataclass(frozen=True)
class ClaheParams:
    clahe_clip: float = 2.0


@dataclass(frozen=True)
class FilterConfig:
    rain: RainParams = field(default_factory=RainParams)
    fog: FogParams = field(default_factory=FogParams)
    sand: ClaheParams = field(default_factory=ClaheParams)
    snow: ClaheParams = field(default_factory=ClaheParams)

    def group(self, condition: str) -> Dict:
        return asdict(getattr(self, condition))


@dataclass
class EnhanceReport:
    condition: str
    severity: float
    rho_rain: Optional[float] = None
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    stage2: Optional[str] = None
    atmosphere: Optional[Tuple[float, ...]] = None
    night_gate_fired: bool = False
    timings_ms: Dict[str, float] = field(default_factory=dict)

    def summary(self) -> str:
        parts = [f"condition={self.condition}", f"severity={self.severity:.3f}"]
        if self.alpha is not None:
            parts.append(f"alpha={self.alpha:.3f}")
        if self.rho_rain is not None:
            parts.append(f"rho_rain={self.rho_rain:.4f}")
        if self.gamma is not None:
            parts.append(f"gamma={self.gamma:.3f}")
        if self.stage2 is not None:
            parts.append(f"stage2={self.stage2}")
        if self.night_gate_fired:
            parts.append("night_gate=on")
        total = sum(self.timings_ms.values())
        parts.append(f"time={total:.1f}ms")
        return ' '.join(parts)


_GROUP_TYPES = {
    'rain': RainParams,
    'fog': FogParams,
    'sand': ClaheParams,
    'snow': ClaheParams,
}

_INT_KEYS = {'inpaint_radius', 'bilateral_d', 'dcp_kernel', 'streak_threshold', 'median_kernel'}
_FLOAT_KEYS = {'clahe_clip', 'bilateral_sigma', 'atm_pct', 'post_clahe_clip'}


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _validate_value(group: str, key: str, value):
    name = f"{group}.{key}"
    if key in _INT_KEYS:
        if not isinstance(value, int) or isinstance(value, bool):
            raise FilterConfigError(f"{name} must be an integer, got {value!r}")
        if value <= 0:
            raise FilterConfigError(f"{name} must be positive, got {value}")
        if key in ('bilateral_d', 'median_kernel') and value % 2 == 0:
            raise FilterConfigError(f"{name} must be odd, got {value}")
        if key == 'median_kernel' and value < 3:
            raise FilterConfigError(f"{name} must be >= 3, got {value}")
        return value
    if key in _FLOAT_KEYS:
        if not _is_number(value):
            raise FilterConfigError(f"{name} must be a number, got {value!r}")
        if not value > 0:
            raise FilterConfigError(f"{name} must be positive, got {value}")
        if key == 'atm_pct' and not value < 1:
            raise FilterConfigError(f"{name} must be in (0, 1), got {value}")
        return float(value)
    if key == 'inpaint_method':
        if value not in INPAINT_METHODS:
            raise FilterConfigError(f"{name} must be one of {INPAINT_METHODS}, got {value!r}")
        return value
    if key == 'method':
        if value not in FOG_METHODS:
            raise FilterConfigError(f"{name} must be one of {FOG_METHODS}, got {value!r}")
        return value
    if key == 'night_gate':
        if value is None:
            return None
        if not _is_number(value) or not value > 0:
            raise FilterConfigError(f"{name} must be a positive number or null, got {value!r}")
        return float(value)
    raise FilterConfigError(f"unknown filter parameter {name}")


def config_from_dict(data: Dict) -> FilterConfig:
    """
    Build a FilterConfig from a (possibly partial) dictionary.

    Args:
        data: Parameter groups keyed by condition

    Returns:
        Validated configuration with missing keys taken from the defaults
    """
    if not isinstance(data, dict):
        raise FilterConfigError(f"filter configuration must be a JSON object, got {type(data).__name__}")
    merged = copy.deepcopy(DEFAULT_FILTER_CONFIG)
    for group, values in data.items():
        if group not in merged:
            raise FilterConfigError(f"unknown filter group {group}")
        if not isinstance(values, dict):
            raise FilterConfigError(f"{group} must be an object, got {values!r}")
        for key, value in values.items():
            if key not in merged[group]:
                raise FilterConfigError(f"unknown filter parameter {group}.{key}")
            merged[group][key] = value

    groups = {}
    for group, values in merged.items():
        checked = {key: _validate_value(group, key, value) for key, value in values.items()}
        groups[group] = _GROUP_TYPES[group](**checked)
    return FilterConfig(**groups)


def load_config(path: str = DEFAULT_CONFIG_PATH) -> FilterConfig:
    """Load filter parameters from a JSON file, filling missing keys with defaults."""
    with open(path, 'r') as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise FilterConfigError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    cfg = config_from_dict(data)
    logger.info(f"Loaded filter configuration from {path}")
    return cfg


def save_config(cfg: FilterConfig, path: str) -> None:
    with open(path, 'w') as f:
        json.dump(asdict(cfg), f, indent=2)
    logger.debug(f"Saved filter configuration to {path}")


def apply_recommendation(cfg: FilterConfig, condition: str, params: Dict) -> FilterConfig:
    """Merge recommended parameters into the group for ``condition``."""
    if condition not in _GROUP_TYPES or not params:
        return cfg
    merged = asdict(cfg)
    merged[condition].update(params)
    return config_from_dict(merged)


def alpha_for_severity(s: float) -> float:
    """DCP haze-removal strength, affine in severity: 0.5 + 0.4 s."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"severity must be in [0, 1], got {s}")
    return 0.5 + 0.4 * s


def gamma_for_luma(mu_l: float) -> float:
    return min(max(GAMMA_LUMA_TARGET / max(mu_l, GAMMA_LUMA_FLOOR), GAMMA_MIN), GAMMA_MAX)


def _elapsed_ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


def _replace_luma(frame: np.ndarray, l: np.ndarray) -> np.ndarray:
    if frame.ndim == 2:
        return l
    lab = to_lab(frame)
    lab[..., 0] = l
    return from_lab(lab)


def detect_streaks(l: np.ndarray, threshold: int = 8, kernel: int = 5) -> Tuple[np.ndarray, float]:
    """
    Stage 1: bright vertical streak mask and its pixel fraction.

    A pixel is a streak candidate when its luminance exceeds the local median
    by more than ``threshold``; candidates are opened with a 1x7 vertical
    element.
    """
    residual = l.astype(np.int16) - median(l, kernel).astype(np.int16)
    candidates = np.where(residual > threshold, 255, 0).astype(np.uint8)
    mask = morph_open_vertical(candidates)
    rho = float(np.count_nonzero(mask)) / mask.size
    return mask, rho


def remove_streaks(frame: np.ndarray, mask: np.ndarray, rho: float,
                   params: RainParams) -> Tuple[np.ndarray, str]:
    """Stage 2: inpaint moderate streak coverage, median-blend heavy coverage."""
    if RHO_MIN < rho < RHO_FALLBACK:
        if params.inpaint_method == 'NS':
            return ns_inpaint(frame, mask, params.inpaint_radius), 'inpaint'
        return telea_inpaint(frame, mask, params.inpaint_radius), 'inpaint'
    if rho >= RHO_FALLBACK:
        blurred = median(frame, params.median_kernel).astype(np.float64)
        blended = np.round(0.5 * frame.astype(np.float64) + 0.5 * blurred).astype(np.uint8)
        holes = mask > 0
        keep = holes if frame.ndim == 2 else holes[..., None]
        return np.where(keep, blended, frame).astype(np.uint8), 'median_blend'
    return frame.copy(), 'skip'


def derain(frame: np.ndarray, s: float, cfg: FilterConfig) -> Tuple[np.ndarray, EnhanceReport]:
    """
    Five-stage morphological derain.

    Stage 1 streak mask, stage 2 inpainting or median blend, stage 3
    conditional gamma on L for dark frames, stage 4 CLAHE on L, stage 5
    bilateral smoothing.
    """
    validate_raster(frame)
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"severity must be in [0, 1], got {s}")
    params = cfg.rain
    report = EnhanceReport(condition='rain', severity=s)

    start = time.perf_counter()
    mask, rho = detect_streaks(luma(frame), params.streak_threshold, params.median_kernel)
    report.rho_rain = rho
    report.timings_ms['streak_mask'] = _elapsed_ms(start)

    start = time.perf_counter()
    out, report.stage2 = remove_streaks(frame, mask, rho, params)
    report.timings_ms['streak_removal'] = _elapsed_ms(start)

    start = time.perf_counter()
    l = luma(out)
    mu_l = float(l.mean())
    if mu_l < GAMMA_LUMA_TARGET:
        report.gamma = gamma_for_luma(mu_l)
        l = gamma_correct(l, report.gamma)
    report.timings_ms['gamma'] = _elapsed_ms(start)

    start = time.perf_counter()
    l = clahe(l, params.clahe_clip)
    out = _replace_luma(out, l)
    report.timings_ms['clahe'] = _elapsed_ms(start)

    start = time.perf_counter()
    out = bilateral(out, params.bilateral_d, params.bilateral_sigma)
    report.timings_ms['bilateral'] = _elapsed_ms(start)

    logger.debug(f"Derain: {report.summary()}")
    return out, report


def _as_float_channels(frame: np.ndarray) -> np.ndarray:
    img = frame.astype(np.float64)
    return img[..., None] if img.ndim == 2 else img


def estimate_transmission(frame: np.ndarray, kernel: int, atm_pct: float,
                          alpha: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Dark-channel transmission and atmospheric light.

    Returns:
        (T, A): T clamped to [0.1, 1] per pixel, A per channel
    """
    img = _as_float_channels(frame)
    height, width, channels = img.shape

    dark = minimum_filter(img.min(axis=2), size=kernel, mode='nearest')
    n_top = max(1, math.ceil(atm_pct * height * width))
    brightest = np.argsort(-dark.ravel(), kind='stable')[:n_top]
    atmosphere = img.reshape(-1, channels)[brightest].mean(axis=0)
    if np.any(atmosphere <= 0):
        raise DegenerateFrameError("atmospheric light is zero in at least one channel")

    normalised = (img / atmosphere).min(axis=2)
    transmission = 1.0 - alpha * minimum_filter(normalised, size=kernel, mode='nearest')
    return np.clip(transmission, TRANSMISSION_MIN, 1.0), atmosphere


def recover_scene(frame: np.ndarray, transmission: np.ndarray, atmosphere: np.ndarray) -> np.ndarray:
    """Invert the scattering model: J = (I - A) / T + A, clamped to [0, 255]."""
    img = _as_float_channels(frame)
    scene = (img - atmosphere) / transmission[..., None] + atmosphere
    scene = np.clip(np.round(scene), 0, 255).astype(np.uint8)
    return scene[..., 0] if frame.ndim == 2 else scene


def dehaze_dcp(frame: np.ndarray, s: float, cfg: FilterConfig,
               alpha: Optional[float] = None) -> Tuple[np.ndarray, EnhanceReport]:
    """
    Dark channel prior dehazing followed by CLAHE on L.

    Args:
        frame: Hazy raster
        s: Severity in [0, 1]; sets alpha = 0.5 + 0.4 s
        cfg: Filter configuration
        alpha: Explicit haze-removal strength, overriding the severity mapping

    Returns:
        (dehazed raster, report)
    """
    validate_raster(frame)
    params = cfg.fog
    a = alpha_for_severity(s) if alpha is None else float(alpha)
    report = EnhanceReport(condition='fog', severity=s, alpha=a)

    start = time.perf_counter()
    transmission, atmosphere = estimate_transmission(frame, params.dcp_kernel, params.atm_pct, a)
    report.atmosphere = tuple(float(v) for v in atmosphere)
    report.timings_ms['transmission'] = _elapsed_ms(start)

    start = time.perf_counter()
    out = recover_scene(frame, transmission, atmosphere)
    report.timings_ms['recover'] = _elapsed_ms(start)

    start = time.perf_counter()
    out = clahe_lab(out, params.post_clahe_clip)
    report.timings_ms['clahe'] = _elapsed_ms(start)

    logger.debug(f"DCP: {report.summary()}")
    return out, report


def enhance(frame: np.ndarray, est: WeatherEstimate, cfg: FilterConfig,
            night_gate: Optional[float] = None) -> Tuple[np.ndarray, EnhanceReport]:
    """
    Dispatch to the filter for the estimated condition.

    Args:
        frame: Input raster
        est: Weather estimate (condition and severity)
        cfg: Filter configuration
        night_gate: Luminance below which fog frames take the CLAHE branch;
            overrides fog.night_gate when given

    Returns:
        (enhanced raster, report); the output always has the input's shape
    """
    validate_raster(frame)
    condition, s = est.condition, est.severity

    if condition == 'clear':
        return frame.copy(), EnhanceReport(condition='clear', severity=s)

    if condition == 'rain':
        return derain(frame, s, cfg)

    if condition == 'fog':
        gate = night_gate if night_gate is not None else cfg.fog.night_gate
        if gate is not None:
            mu_l = float(luma(frame).mean())
            if mu_l < gate:
                start = time.perf_counter()
                out = clahe_lab(frame, cfg.fog.post_clahe_clip)
                report = EnhanceReport(condition='fog', severity=s, night_gate_fired=True)
                report.timings_ms['clahe'] = _elapsed_ms(start)
                logger.debug(f"Night gate: mean L {mu_l:.1f} < {gate}, using CLAHE instead of DCP")
                return out, report
        return dehaze_dcp(frame, s, cfg)

    if condition in ('sand', 'snow'):
        start = time.perf_counter()
        out = clahe_lab(frame, getattr(cfg, condition).clahe_clip)
        report = EnhanceReport(condition=condition, severity=s)
        report.timings_ms['clahe'] = _elapsed_ms(start)
        return out, report

    raise ValueError(f"unknown weather condition {condition!r}")


def passthrough(frame: np.ndarray, est: WeatherEstimate, cfg: FilterConfig,
                night_gate: Optional[float] = None) -> Tuple[np.ndarray, EnhanceReport]:
    """Enhancer that returns the frame unchanged (CAPE ablation)."""
    validate_raster(frame)
    return frame.copy(), EnhanceReport(condition=est.condition, severity=est.severity)
