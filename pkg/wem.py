#!/usr/bin/env python3
"""
Weather Estimation Module

Heuristic weather condition and severity estimation from the five LAB/HSV
frame features, with disambiguation from the analytics thread's zero-shot
label when the heuristic is unsure.

Each boolean rule is turned into a margin score in [0, 1]:

    fog   sigma_L < 35  and rho_e < 0.1
    rain  r_v > 3.0     and mu_S < 60
    sand  mu_S < 40     and sigma_L < 45   (the haze rule)

A rule's score is the smallest normalised margin over its conjuncts, clamped
to [0, 1]. The estimate is the best-scoring rule; the spread is the gap to
the runner-up. No rule detects snow; snow only arrives through the slot
label or explicit ground-truth routing.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Dict, Optional

import numpy as np

from imaging import LabStats, lab_stats

if TYPE_CHECKING:
    from sed import SlotRecord

logger = logging.getLogger(__name__)

CONDITIONS = ('rain', 'fog', 'sand', 'snow', 'clear')
SOURCES = ('heuristic', 'slot', 'label')

# Ties between rule scores resolve in this order
RULE_PRIORITY = ('fog', 'rain', 'sand')

FOG_SIGMA_L = 35.0
FOG_RHO_E = 0.1
RAIN_R_V = 3.0
RAIN_MU_S = 60.0
HAZE_MU_S = 40.0
HAZE_SIGMA_L = 45.0

DEFAULT_SPREAD_THRESHOLD = 0.15


@dataclass(frozen=True)
class WeatherEstimate:
    condition: str
    severity: float
    spread: float = 0.0
    source: str = 'heuristic'
    scores: Dict[str, float] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown weather condition {self.condition!r}")
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError(f"severity must be in [0, 1], got {self.severity}")
        if self.spread < 0:
            raise ValueError(f"spread must be >= 0, got {self.spread}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown estimate source {self.source!r}")


def _clamp01(value: float) -> float:
    return float(np.clip(value, 0.0, 1.0))


def rule_scores(stats: LabStats) -> Dict[str, float]:
    """Margin score of every heuristic rule, each in [0, 1]."""
    fog = min((FOG_SIGMA_L - stats.sigma_L) / FOG_SIGMA_L,
              (FOG_RHO_E - stats.rho_e) / FOG_RHO_E)
    rain = min((stats.r_v - RAIN_R_V) / RAIN_R_V,
               (RAIN_MU_S - stats.mu_S) / RAIN_MU_S)
    sand = min((HAZE_MU_S - stats.mu_S) / HAZE_MU_S,
               (HAZE_SIGMA_L - stats.sigma_L) / HAZE_SIGMA_L)
    return {'fog': _clamp01(fog), 'rain': _clamp01(rain), 'sand': _clamp01(sand)}


def severity_for(condition: str, stats: LabStats) -> float:
    """
    Severity from the magnitude of a condition's leading feature.

    Args:
        condition: Weather condition
        stats: Frame features

    Returns:
        Severity in [0, 1]; 0 for conditions whose filter ignores severity
    """
    if condition == 'fog':
        return _clamp01(1.0 - stats.sigma_L / FOG_SIGMA_L)
    if condition == 'rain':
        return _clamp01((stats.r_v - RAIN_R_V) / RAIN_R_V)
    if condition == 'sand':
        return _clamp01(1.0 - stats.mu_S / HAZE_MU_S)
    if condition in ('snow', 'clear'):
        return 0.0
    raise ValueError(f"unknown weather condition {condition!r}")


def classify(stats: LabStats) -> WeatherEstimate:
    scores = rule_scores(stats)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], RULE_PRIORITY.index(kv[0])))
    (top, top_score), (_, second_score) = ranked[0], ranked[1]

    if top_score <= 0.0:
        return WeatherEstimate('clear', 0.0, 0.0, 'heuristic', scores)

    return WeatherEstimate(
        condition=top,
        severity=severity_for(top, stats),
        spread=top_score - second_score,
        source='heuristic',
        scores=scores,
    )


def estimate(frame) -> WeatherEstimate:
    """Classify an RGB raster."""
    return classify(lab_stats(frame))


def resolve(est: WeatherEstimate, slot: Optional['SlotRecord'],
            threshold: float = DEFAULT_SPREAD_THRESHOLD) -> WeatherEstimate:
    """
    Substitute the zero-shot label when the heuristic is unsure.

    The severity is always the heuristic one; only the label changes.
    """
    if slot is None or not slot.clip_label:
        return est
    if est.spread >= threshold:
        return est
    logger.debug(f"Spread {est.spread:.3f} below {threshold}, using slot label {slot.clip_label} "
                 f"(slot version {slot.version})")
    return replace(est, condition=slot.clip_label, source='slot')
