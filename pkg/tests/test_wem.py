# tests/test_wem.py
import pytest

import numpy as np

import wem
from imaging import LabStats
from sed import SlotRecord
from wem import WeatherEstimate

pytestmark = pytest.mark.unit


def _stats(mu_L=150.0, sigma_L=60.0, mu_S=100.0, rho_e=0.2, r_v=1.0):
    return LabStats(mu_L=mu_L, sigma_L=sigma_L, mu_S=mu_S, rho_e=rho_e, r_v=r_v)


def test_rule_scores_margins():
    """Test that each rule score is the smallest normalised margin of its conjuncts."""
    scores = wem.rule_scores(_stats(sigma_L=17.5, rho_e=0.05, mu_S=100.0))
    assert scores['fog'] == pytest.approx(0.5)
    assert scores['rain'] == 0.0
    assert scores['sand'] == 0.0


def test_classify_clear_when_no_rule_fires():
    """Test that a contrasty, saturated frame is classified clear."""
    est = wem.classify(_stats())
    assert est.condition == 'clear'
    assert est.severity == 0.0
    assert est.spread == 0.0


def test_classify_fog_with_severity_and_spread():
    """Test the fog estimate for a flat, edge-poor, saturated frame."""
    est = wem.classify(_stats(mu_L=200, sigma_L=10, mu_S=50, rho_e=0.01, r_v=1.0))
    assert est.condition == 'fog'
    assert est.severity == pytest.approx(1 - 10 / 35)
    assert est.spread == pytest.approx(1 - 10 / 35)
    assert est.source == 'heuristic'


def test_classify_rain():
    """Test that strong vertical structure on a desaturated frame is rain."""
    est = wem.classify(_stats(sigma_L=60, mu_S=45, rho_e=0.2, r_v=7.5))
    assert est.condition == 'rain'
    assert est.severity == pytest.approx(1.0)


def test_classify_haze_maps_to_sand():
    """Test that a gray low-contrast frame without edges reads as sand."""
    est = wem.classify(_stats(sigma_L=20, mu_S=0, rho_e=0.05))
    assert est.scores['sand'] > est.scores['fog']
    assert est.condition == 'sand'
    assert est.severity == 1.0


def test_severity_for_conditions():
    """Test severity mapping for conditions without a severity-driven filter."""
    stats = _stats()
    assert wem.severity_for('snow', stats) == 0.0
    assert wem.severity_for('clear', stats) == 0.0
    with pytest.raises(ValueError):
        wem.severity_for('hail', stats)


def test_weather_estimate_validation():
    """Test that invalid labels, severities and sources are refused."""
    with pytest.raises(ValueError):
        WeatherEstimate('hail', 0.5)
    with pytest.raises(ValueError):
        WeatherEstimate('fog', 1.5)
    with pytest.raises(ValueError):
        WeatherEstimate('fog', 0.5, source='guess')


def test_estimate_returns_valid_estimate(fog_frame):
    """Test that estimating a synthetic frame yields a well-formed result."""
    est = wem.estimate(fog_frame.raster)
    assert est.condition in wem.CONDITIONS
    assert 0.0 <= est.severity <= 1.0


def _slot(label, version=3):
    return SlotRecord(clip_label=label, clip_scores=(1.0,), recommendation=None, version=version)


def test_resolve_uses_slot_label_when_unsure():
    """Test that a low spread defers to the zero-shot label and keeps the severity."""
    est = WeatherEstimate('sand', 0.4, spread=0.05)
    resolved = wem.resolve(est, _slot('fog'))
    assert resolved.condition == 'fog'
    assert resolved.severity == 0.4
    assert resolved.source == 'slot'


def test_resolve_keeps_confident_estimate():
    """Test that a spread at or above the threshold keeps the heuristic label."""
    est = WeatherEstimate('sand', 0.4, spread=0.15)
    assert wem.resolve(est, _slot('fog')) is est


def test_resolve_without_slot():
    """Test that an empty or missing slot leaves the estimate untouched."""
    est = WeatherEstimate('fog', 0.4, spread=0.0)
    assert wem.resolve(est, None) is est
    assert wem.resolve(est, _slot('')) is est
