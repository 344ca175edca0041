# tests/test_pee.py
import pytest

import numpy as np

import pee
from pee import ReliabilityLookupError, ReliabilityMap

pytestmark = pytest.mark.unit


def test_constant_patch_is_fully_reliable():
    """Test that a flat patch has zero entropy and R = 1."""
    rmap = pee.entropy_map(np.full((16, 16), 93, dtype=np.uint8))
    assert rmap.grid.shape == (1, 1)
    assert rmap.grid[0, 0] == pytest.approx(1.0)


def test_uniform_histogram_patch_is_unreliable():
    """Test that a patch spread evenly over all 16 bins has R = 0."""
    gray = (np.arange(256, dtype=np.int64) // 16 * 16).astype(np.uint8).reshape(16, 16)
    rmap = pee.entropy_map(gray)
    assert rmap.grid[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_two_bin_patch():
    """Test that an even two-bin split gives H = 1 bit and R = 0.75."""
    gray = np.zeros((16, 16), dtype=np.uint8)
    gray[:, 8:] = 255
    rmap = pee.entropy_map(gray)
    assert rmap.grid[0, 0] == pytest.approx(0.75)


def test_edge_patches_normalised_by_pixel_count():
    """Test that partial edge patches of a flat raster are still fully reliable."""
    rmap = pee.entropy_map(np.full((20, 20), 10, dtype=np.uint8))
    assert rmap.grid.shape == (2, 2)
    assert np.allclose(rmap.grid, 1.0)


def test_reliability_bounds_on_random_rasters():
    """Test that R stays within [0, 1] across a thousand random rasters."""
    rng = np.random.default_rng(3)
    for _ in range(1000):
        h, w = (int(v) for v in rng.integers(1, 40, 2))
        gray = rng.integers(0, 256, (h, w), dtype=np.uint8)
        grid = pee.entropy_map(gray).grid
        assert grid.min() >= 0.0 and grid.max() <= 1.0


def test_entropy_map_requires_single_channel():
    """Test that colour rasters are refused."""
    with pytest.raises(ValueError):
        pee.entropy_map(np.zeros((16, 16, 3), dtype=np.uint8))


def test_reliability_map_shape_check():
    """Test that a grid not matching the source size is refused."""
    with pytest.raises(ValueError, match="does not match"):
        ReliabilityMap(grid=np.ones((2, 2)), patch_size=16, source_dims=(48, 32))


def test_reliability_at_patch_centre_and_clamping():
    """Test bilinear lookups at patch centres, between them and at the border."""
    grid = np.array([[0.0, 1.0]])
    rmap = ReliabilityMap(grid=grid, patch_size=16, source_dims=(16, 32))
    assert pee.reliability_at(rmap, 8, 8) == pytest.approx(0.0)
    assert pee.reliability_at(rmap, 24, 8) == pytest.approx(1.0)
    assert pee.reliability_at(rmap, 16, 8) == pytest.approx(0.5)
    assert pee.reliability_at(rmap, 0, 0) == pytest.approx(0.0)
    assert pee.reliability_at(rmap, 32, 16) == pytest.approx(1.0)


@pytest.mark.parametrize('x,y', [(-1, 5), (5, 17), (33, 0)])
def test_reliability_at_outside_frame(x, y):
    """Test that lookups outside the source frame raise."""
    rmap = pee.uniform_map(16, 32, 0.5)
    with pytest.raises(ReliabilityLookupError):
        pee.reliability_at(rmap, x, y)


def test_uniform_map_and_upsample():
    """Test that a uniform map upsamples to a constant dense map."""
    rmap = pee.uniform_map(40, 50, 0.25)
    assert rmap.grid.shape == (3, 4)
    dense = pee.upsample(rmap)
    assert dense.shape == (40, 50)
    assert np.allclose(dense, 0.25)


def test_render_heatmap_and_format_grid():
    """Test heatmap rendering and the text grid dump."""
    rmap = pee.uniform_map(40, 50, 0.5)
    heat = pee.render_heatmap(rmap)
    assert heat.shape == (40, 50, 3)
    assert heat.dtype == np.uint8
    text = pee.format_grid(rmap)
    lines = text.strip().split('\n')
    assert lines[0] == "# patch_size=16 source=50x40"
    assert len(lines) == 4
    assert lines[1] == "0.500 0.500 0.500 0.500"
