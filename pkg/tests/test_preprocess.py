"""
Unit tests for CT volume preprocessing.
"""
import numpy as np
import pytest

from annotator.preprocess import (
    PATCH_SIZE,
    Volume,
    clamp_bbox,
    crop_patch,
    extract_slices,
    load_volume,
    make_patch,
    normalize_intensity,
    resample_inplane,
    save_volume,
)
from utils.errors import DataError


def _ramp_volume(nz=7, ny=60, nx=50, spacing=(0.8, 0.8, 2.0)):
    """Voxel value = 10 * x_mm + 0.5 * y_mm + z_mm (linear in physical space)."""
    sx, sy, sz = spacing
    z = np.arange(nz)[:, None, None] * sz
    y = np.arange(ny)[None, :, None] * sy
    x = np.arange(nx)[None, None, :] * sx
    return Volume(10.0 * x + 0.5 * y + z, spacing)


class TestNormalizeIntensity:
    def test_endpoints(self):
        """Test the window endpoints map to 0 and 1."""
        assert normalize_intensity(np.array([-1024.0]))[0] == 0.0
        assert normalize_intensity(np.array([3071.0]))[0] == 1.0

    def test_water(self):
        """Test 0 HU maps to 1024/4095."""
        assert normalize_intensity(np.array([0.0]))[0] == pytest.approx(1024.0 / 4095.0)

    def test_clipping(self):
        """Test values outside the window are clipped."""
        out = normalize_intensity(np.array([-5000.0, 9000.0]))
        assert out.tolist() == [0.0, 1.0]


class TestResample:
    def test_output_spacing_is_one_mm(self):
        """Test resampled spacing and size."""
        v = _ramp_volume(ny=60, nx=50, spacing=(0.8, 0.5, 2.0))
        out = resample_inplane(v)
        assert out.spacing_mm == (1.0, 1.0, 2.0)
        assert out.voxels.shape == (7, 30, 40)

    def test_identity_at_one_mm(self):
        """Test 1 mm volumes are unchanged."""
        v = _ramp_volume(spacing=(1.0, 1.0, 2.0))
        assert np.array_equal(resample_inplane(v).voxels, v.voxels)

    def test_ramp_is_preserved(self):
        """Test bilinear resampling reproduces a linear ramp exactly."""
        v = _ramp_volume(spacing=(0.8, 0.8, 2.0))
        out = resample_inplane(v).voxels
        nz, ny, nx = out.shape
        expected = (
            10.0 * np.arange(nx)[None, None, :]
            + 0.5 * np.arange(ny)[None, :, None]
            + 2.0 * np.arange(nz)[:, None, None]
        )
        assert np.allclose(out, expected, atol=1e-6)

    def test_upsampling(self):
        """Test coarse spacing increases the pixel count."""
        v = _ramp_volume(ny=10, nx=12, spacing=(2.0, 2.0, 2.0))
        assert resample_inplane(v).voxels.shape == (7, 20, 24)


class TestExtractSlices:
    def setup_method(self):
        """Setup test fixtures."""
        # value equals z position in mm; slices every 2.5 mm
        voxels = np.broadcast_to(np.arange(9)[:, None, None] * 2.5, (9, 4, 4)).copy()
        self.volume = Volume(voxels, (1.0, 1.0, 2.5))

    def test_interpolates_offsets(self):
        """Test planes sit at -2, 0 and +2 mm."""
        planes = extract_slices(self.volume, 10.0)
        assert planes.shape == (3, 4, 4)
        assert np.allclose(planes[:, 0, 0], [8.0, 10.0, 12.0])

    def test_clamps_at_volume_ends(self):
        """Test offsets beyond the volume reuse the edge slice."""
        planes = extract_slices(self.volume, 0.0)
        assert np.allclose(planes[:, 0, 0], [0.0, 0.0, 2.0])

    def test_out_of_range(self):
        """Test slice positions outside the volume."""
        with pytest.raises(DataError) as info:
            extract_slices(self.volume, 25.0)
        assert info.value.code == "slice_out_of_range"


class TestCropPatch:
    def test_center_pixel(self):
        """Test the rounded centre lands on pixel (60, 60)."""
        ys, xs = np.mgrid[0:80, 0:90]
        imgs = np.stack([xs + 1000.0 * ys] * 3)
        out = crop_patch(imgs, (30.4, 20.6))
        assert out.shape == (3, PATCH_SIZE, PATCH_SIZE)
        assert out[0, 60, 60] == 30 + 1000 * 21
        assert out[0, 60, 61] == 31 + 1000 * 21

    def test_fill_outside(self):
        """Test pixels outside the image are air."""
        out = crop_patch(np.zeros((3, 10, 10)), (5.0, 5.0))
        assert out[0, 0, 0] == -1024.0
        assert out[0, 60, 60] == 0.0

    def test_rejects_2d(self):
        """Test image stacks must be 3D."""
        with pytest.raises(DataError):
            crop_patch(np.zeros((10, 10)), (5.0, 5.0))


class TestMakePatch:
    def setup_method(self):
        """Setup test fixtures."""
        self.volume = _ramp_volume(nz=5, ny=200, nx=200, spacing=(0.8, 0.8, 2.0))
        self.bbox = (50.0, 50.0, 70.0, 70.0)

    def test_shape_and_range(self):
        """Test patches are 3x120x120 in [0, 1]."""
        patch = make_patch(self.volume, (80.0, 80.0), 4.0, self.bbox)
        assert patch.pixels.shape == (3, 120, 120)
        assert patch.pixels.min() >= 0.0 and patch.pixels.max() <= 1.0
        assert patch.lesion_bbox_px == self.bbox
        assert patch.center_mm == (80.0, 80.0, 4.0)

    def test_translation_consistency(self):
        """Test moving the centre by 3 mm shifts the patch by 3 pixels."""
        a = make_patch(self.volume, (70.0, 75.0), 4.0, self.bbox).pixels
        b = make_patch(self.volume, (73.0, 75.0), 4.0, self.bbox).pixels
        assert np.allclose(a[:, 10:110, 13:110], b[:, 10:110, 10:107], atol=1e-6)

    def test_default_center(self):
        """Test a missing centre uses the volume's in-plane centre."""
        patch = make_patch(self.volume, None, 4.0, self.bbox)
        assert patch.center_mm[:2] == self.volume.inplane_center_mm()

    def test_bbox_is_clamped(self):
        """Test boxes are clamped into the patch."""
        assert clamp_bbox((-5.0, 10.0, 130.0, 50.0)) == (0.0, 10.0, 120.0, 50.0)


class TestVolumeStore:
    def test_round_trip(self, tmp_path):
        """Test int16 volume store with spacing and origin sidecar."""
        voxels = np.arange(2 * 3 * 4, dtype=np.float64).reshape(2, 3, 4) - 10.0
        v = Volume(voxels, (0.7, 0.7, 2.5), (1.0, 2.0, -3.0))
        path = tmp_path / "vol.i16"
        save_volume(path, v)
        loaded = load_volume(path)
        assert np.array_equal(loaded.voxels, voxels)
        assert loaded.spacing_mm == (0.7, 0.7, 2.5)
        assert loaded.origin_mm == (1.0, 2.0, -3.0)

    def test_invalid_volume(self):
        """Test non-3D arrays and non-positive spacing are rejected."""
        with pytest.raises(DataError):
            Volume(np.zeros((4, 4)), (1.0, 1.0, 1.0))
        with pytest.raises(DataError):
            Volume(np.zeros((2, 4, 4)), (1.0, 0.0, 1.0))
