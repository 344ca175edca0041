# tests/test_synthetic.py
import pytest
import csv
import os

import numpy as np

import synthetic
from evaluation import parse_voc

pytestmark = pytest.mark.unit


def test_render_scene_is_deterministic():
    """Test that the same seed renders the same scene."""
    a, gts_a = synthetic.render_scene(np.random.default_rng(4))
    b, gts_b = synthetic.render_scene(np.random.default_rng(4))
    assert np.array_equal(a, b)
    assert gts_a == gts_b


def test_render_scene_objects(clean_scene):
    """Test object placement and the recorded reference contrast."""
    scene, gts = clean_scene
    assert scene.shape == (128, 192, 3)
    assert len(gts) == 3
    for gt in gts:
        assert 0 <= gt.box.x1 and gt.box.x2 <= 192
        assert 128 // 5 < gt.box.y1 and gt.box.y2 <= 128
        assert gt.box.width == synthetic.OBJECT_SIZE
        assert gt.ref_contrast == pytest.approx(80.0)
        assert gt.class_id == synthetic.OBJECT_CLASS


def test_render_scene_rejects_crowding():
    """Test that too many objects for the width are refused."""
    with pytest.raises(ValueError, match="too small"):
        synthetic.render_scene(np.random.default_rng(0), width=100, n_objects=3)


def test_fog_follows_scattering_model(clean_scene):
    """Test that fog blends every pixel towards the atmospheric light."""
    scene, gts = clean_scene
    foggy = synthetic.degrade(scene, 'fog', 0.5)
    t0 = synthetic.fog_transmission(0.5)
    expected = np.round(scene.astype(float) * t0 + 230 * (1 - t0))
    assert np.abs(foggy.astype(float) - expected).max() <= 1
    assert np.all(foggy[0] == 230)


def test_rain_streaks_are_thin_and_vertical(clean_scene):
    """Test streak geometry: at most 2 px wide, never shorter than the opening length."""
    scene, _ = clean_scene
    rainy, mask = synthetic.add_rain_streaks(scene, 0.5, np.random.default_rng(1))
    assert mask.any()
    for row in mask:
        runs = np.diff(np.flatnonzero(np.diff(np.concatenate(([0], row.astype(int), [0])))))[::2]
        assert runs.max(initial=0) <= 2
    assert np.all(rainy[mask] >= scene[mask])


@pytest.mark.parametrize('condition', ['sand', 'snow'])
def test_sand_and_snow_compress_contrast(clean_scene, condition):
    """Test that sand and snow lower object contrast."""
    from imaging import rms_contrast
    scene, gts = clean_scene
    degraded = synthetic.degrade(scene, condition, 1.0)
    assert rms_contrast(degraded, gts[0].box) < rms_contrast(scene, gts[0].box)


def test_degrade_validation(clean_scene):
    """Test severity range and unknown degradations."""
    scene, _ = clean_scene
    assert np.array_equal(synthetic.degrade(scene, 'clear', 0.3), scene)
    with pytest.raises(ValueError):
        synthetic.degrade(scene, 'fog', 1.5)
    with pytest.raises(ValueError, match="unknown degradation"):
        synthetic.degrade(scene, 'hail', 0.5)


def test_generate_corpus(tmp_path):
    """Test that the corpus writer emits images, VOC XML and a manifest."""
    out = str(tmp_path / 'corpus')
    names = synthetic.generate_corpus(out, 4, conditions=('fog', 'rain'), seed=2)
    assert names == [f"img_{i:04d}.png" for i in range(4)]
    for name in names:
        assert os.path.exists(os.path.join(out, name))

    with open(os.path.join(out, 'labels.csv')) as f:
        rows = list(csv.DictReader(f))
    assert [r['condition'] for r in rows] == ['fog', 'rain', 'fog', 'rain']
    assert all(0.6 <= float(r['severity']) <= 1.0 for r in rows)

    image = parse_voc(os.path.join(out, 'img_0000.xml'))
    assert len(image.boxes) == 3
    assert all(b.class_id == 2 for b in image.boxes)


def test_generate_corpus_validation(tmp_path):
    """Test severity range and condition checks."""
    with pytest.raises(ValueError, match="severity range"):
        synthetic.generate_corpus(str(tmp_path), 1, severity_range=(0.8, 0.2))
    with pytest.raises(ValueError, match="unknown degradation"):
        synthetic.generate_corpus(str(tmp_path), 1, conditions=('hail',))


def test_synthetic_sequence_motion():
    """Test frame timing, annotations and bounded object motion."""
    frames = synthetic.synthetic_sequence(20, 'fog', 0.5, seed=3, fps=25)
    assert len(frames) == 20
    assert [f.t_index for f in frames] == list(range(20))
    assert frames[4].t_capture == pytest.approx(160.0)
    for prev, cur in zip(frames, frames[1:]):
        assert len(cur.annotations) == 3
        for a, b in zip(prev.annotations, cur.annotations):
            assert abs(a.box.x1 - b.box.x1) <= 2
            assert a.box.y1 == b.box.y1


def test_synthetic_sequence_is_deterministic():
    """Test that sequences repeat for the same seed."""
    a = synthetic.synthetic_sequence(5, 'rain', 0.7, seed=9)
    b = synthetic.synthetic_sequence(5, 'rain', 0.7, seed=9)
    assert all(np.array_equal(x.raster, y.raster) for x, y in zip(a, b))


def test_synthetic_sequence_rejects_short_frames():
    """Test that lanes must fit in the frame height."""
    with pytest.raises(ValueError, match="too small"):
        synthetic.synthetic_sequence(2, height=90)
