import pytest
import json
from unittest.mock import patch, MagicMock

import numpy as np

from geometry import Box, Detection, GtBox
from detectors import Frame
from synthetic import degrade, render_scene


@pytest.fixture
def rng():
    """Fixture providing a seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def clean_scene():
    """Fixture providing a clean synthetic scene and its ground truth."""
    return render_scene(np.random.default_rng(7))


@pytest.fixture
def fog_frame(clean_scene):
    """Fixture providing a heavily fogged frame with its sidecar annotations."""
    scene, gts = clean_scene
    return Frame(raster=degrade(scene, 'fog', 0.8), t_index=0, annotations=gts)


@pytest.fixture
def gradient_scene():
    """Fixture providing a smooth horizontal gray ramp (RGB)."""
    ramp = np.round(np.linspace(60, 180, 192)).astype(np.uint8)
    gray = np.tile(ramp, (128, 1))
    return np.repeat(gray[..., None], 3, axis=2)


@pytest.fixture
def make_detection():
    """Fixture providing a Detection factory with sensible defaults."""
    def _make(x1, y1, x2, y2, conf=0.9, class_id=2, source='S', score=None):
        return Detection(box=Box(x1, y1, x2, y2), class_id=class_id, conf=conf,
                         source=source, score=score)
    return _make


@pytest.fixture
def gt_boxes():
    """Fixture providing two well-separated ground-truth boxes."""
    return [
        GtBox(2, Box(10, 10, 40, 40), 'car'),
        GtBox(2, Box(100, 20, 140, 60), 'car'),
    ]


@pytest.fixture
def temp_files(tmp_path):
    """Fixture providing temporary config, database and output paths."""
    return {
        'run_config': str(tmp_path / 'cadenet-config.json'),
        'filter_config': str(tmp_path / 'filters.json'),
        'sed': str(tmp_path / 'scenes.sed'),
        'out_dir': str(tmp_path / 'out'),
        'image': str(tmp_path / 'frame.png'),
    }


@pytest.fixture
def write_json():
    """Fixture providing a helper that dumps a dictionary to a JSON file."""
    def _write(path, data):
        with open(path, 'w') as f:
            json.dump(data, f)
        return path
    return _write


@pytest.fixture
def isolated_cwd(tmp_path, monkeypatch):
    """Fixture running a test from an empty directory with no run config in the environment."""
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv('CADENET_CONFIG', raising=False)
    with patch('cadenet.configure_logging', MagicMock()):
        yield tmp_path
