# tests/test_imaging.py
import pytest
from unittest.mock import patch

import numpy as np

import imaging
from geometry import Box
from imaging import RasterError

pytestmark = pytest.mark.unit


def test_validate_raster_accepts_gray_and_rgb():
    """Test that HxW and HxWx3 uint8 arrays are valid rasters."""
    gray = np.zeros((4, 5), dtype=np.uint8)
    rgb = np.zeros((4, 5, 3), dtype=np.uint8)
    assert imaging.validate_raster(gray) is gray
    assert imaging.validate_raster(rgb, 3) is rgb


@pytest.mark.parametrize('array', [
    np.zeros((4, 4), dtype=np.float32),
    np.zeros((4, 4, 4), dtype=np.uint8),
    np.zeros((0, 4), dtype=np.uint8),
    [[0, 1], [2, 3]],
])
def test_validate_raster_rejects_bad_arrays(array):
    """Test that wrong dtypes, shapes and non-arrays raise RasterError."""
    with pytest.raises(RasterError):
        imaging.validate_raster(array)


def test_validate_raster_channel_mismatch():
    """Test that a grayscale raster is rejected where colour is required."""
    with pytest.raises(RasterError, match="3-channel"):
        imaging.validate_raster(np.zeros((4, 4), dtype=np.uint8), 3)


def test_lab_round_trip_on_gray():
    """Test that gray pixels survive an RGB -> LAB -> RGB round trip."""
    r = np.full((8, 8, 3), 128, dtype=np.uint8)
    back = imaging.from_lab(imaging.to_lab(r))
    assert np.abs(back.astype(int) - 128).max() <= 2


def test_luma_of_gray_raster_is_identity():
    """Test that luma returns single-channel rasters untouched."""
    gray = np.arange(64, dtype=np.uint8).reshape(8, 8)
    assert imaging.luma(gray) is gray


def test_clahe_rejects_bad_clip():
    """Test that a non-positive clip limit is refused."""
    with pytest.raises(ValueError, match="clip"):
        imaging.clahe(np.zeros((16, 16), dtype=np.uint8), 0.0)


def test_clahe_tiny_raster_uses_single_tile():
    """Test that rasters smaller than the tile grid still equalise."""
    tiny = np.arange(16, dtype=np.uint8).reshape(4, 4) * 10
    with patch('imaging.logger') as mock_logger:
        out = imaging.clahe(tiny, 2.0)
    assert out.shape == tiny.shape
    assert out.dtype == np.uint8
    mock_logger.debug.assert_called_once()


def test_clahe_lab_keeps_shape():
    """Test that CLAHE on luminance preserves the raster shape."""
    r = np.random.default_rng(0).integers(0, 256, (32, 48, 3), dtype=np.uint8)
    out = imaging.clahe_lab(r, 2.0)
    assert out.shape == r.shape


def test_gamma_lut_identity_and_brightening():
    """Test the gamma LUT at g = 1 and g = 2."""
    assert np.array_equal(imaging.gamma_lut(1.0), np.arange(256, dtype=np.uint8))
    lut = imaging.gamma_lut(2.0)
    assert lut[64] == 128
    assert lut[0] == 0 and lut[255] == 255


def test_gamma_below_one_rejected():
    """Test that darkening gamma values are refused."""
    with pytest.raises(ValueError):
        imaging.gamma_lut(0.5)


@pytest.mark.parametrize('k', [2, 1, 4])
def test_median_kernel_validation(k):
    """Test that even or too small median kernels are refused."""
    with pytest.raises(ValueError):
        imaging.median(np.zeros((8, 8), dtype=np.uint8), k)


def test_bilateral_validation_and_identity():
    """Test bilateral argument checks and the d = 1 identity."""
    r = np.random.default_rng(1).integers(0, 256, (16, 16, 3), dtype=np.uint8)
    with pytest.raises(ValueError):
        imaging.bilateral(r, 4, 10.0)
    with pytest.raises(ValueError):
        imaging.bilateral(r, 5, 0.0)
    assert np.array_equal(imaging.bilateral(r, 1, 10.0), r)


def test_morph_open_keeps_vertical_runs_only():
    """Test that the vertical opening keeps tall streaks and erases horizontal ones."""
    mask = np.zeros((20, 20), dtype=np.uint8)
    mask[2:12, 5] = 255
    mask[15, 8:18] = 255
    opened = imaging.morph_open_vertical(mask)
    assert np.array_equal(opened[:, 5], mask[:, 5])
    assert not opened[15].any()


def test_morph_open_requires_binary_mask():
    """Test that non-binary masks are refused."""
    mask = np.full((8, 8), 7, dtype=np.uint8)
    with pytest.raises(RasterError):
        imaging.morph_open_vertical(mask)


def test_telea_inpaint_leaves_unmasked_pixels_identical(rng):
    """Test that inpainting only writes masked pixels."""
    r = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    mask = np.zeros((32, 32), dtype=np.uint8)
    mask[10:20, 14:16] = 255
    out = imaging.telea_inpaint(r, mask)
    outside = mask == 0
    assert np.array_equal(out[outside], r[outside])


def test_inpaint_empty_and_full_masks(rng):
    """Test that an empty mask is a copy and a full mask is refused."""
    r = rng.integers(0, 256, (16, 16), dtype=np.uint8)
    empty = np.zeros((16, 16), dtype=np.uint8)
    assert np.array_equal(imaging.ns_inpaint(r, empty), r)
    with pytest.raises(RasterError, match="fully masked"):
        imaging.telea_inpaint(r, np.full((16, 16), 255, dtype=np.uint8))


def test_inpaint_mask_shape_mismatch():
    """Test that a mask of the wrong size is refused."""
    with pytest.raises(RasterError, match="does not match"):
        imaging.telea_inpaint(np.zeros((8, 8), dtype=np.uint8), np.zeros((4, 4), dtype=np.uint8))


def test_edge_features_vertical_bars():
    """Test that vertical bars yield a high vertical-edge ratio."""
    cols = (np.arange(64) // 8) % 2 * 255
    gray = np.tile(cols.astype(np.uint8), (64, 1))
    rho_e, r_v = imaging.edge_features(gray)
    assert rho_e > 0
    assert r_v > 3.0
    # no horizontal structure: the ratio is the vertical count itself
    assert r_v == pytest.approx(rho_e * gray.size)


def test_lab_stats_of_flat_gray():
    """Test that a flat gray frame has no spread, saturation or edges."""
    stats = imaging.lab_stats(np.full((32, 32, 3), 128, dtype=np.uint8))
    assert stats.sigma_L == 0.0
    assert stats.mu_S == 0.0
    assert stats.rho_e == 0.0
    assert stats.r_v == 0.0


def test_rms_contrast_checkerboard():
    """Test RMS contrast of a two-level checkerboard and of an off-frame box."""
    yy, xx = np.mgrid[0:8, 0:8]
    gray = np.where((yy + xx) % 2 == 0, 40, 200).astype(np.uint8)
    assert imaging.rms_contrast(gray, Box(0, 0, 8, 8)) == pytest.approx(80.0)
    assert imaging.rms_contrast(gray, Box(20, 20, 30, 30)) == 0.0


@pytest.mark.parametrize('name', ['frame.png', 'frame.ppm'])
def test_write_read_round_trip(tmp_path, rng, name):
    """Test that PNG and PPM rasters are read back unchanged."""
    r = rng.integers(0, 256, (12, 10, 3), dtype=np.uint8)
    path = str(tmp_path / name)
    imaging.write_raster(path, r)
    assert np.array_equal(imaging.read_raster(path), r)


def test_read_missing_raster(tmp_path):
    """Test that an unreadable path raises RasterError."""
    with pytest.raises(RasterError, match="could not read"):
        imaging.read_raster(str(tmp_path / 'missing.png'))


def test_encode_png_signature():
    """Test that PNG encoding yields a PNG byte stream."""
    data = imaging.encode_png(np.zeros((4, 4, 3), dtype=np.uint8))
    assert data[:8] == b'\x89PNG\r\n\x1a\n'
