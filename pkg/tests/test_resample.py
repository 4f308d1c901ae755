"""
Tests for trilinear resampling.
"""
import numpy as np
import pytest

from src.imaging.resample import InvalidSpacing, resample_isotropic, resampled_dims, trilinear_resample
from tests.test_utils import brute_trilinear, make_hu_volume


class TestResample:
    """Tests for trilinear_resample."""

    def test_identity(self, rng):
        vol = make_hu_volume(rng.integers(-1024, 3072, size=(5, 6, 7)), spacing=(2.0, 1.5, 1.5))
        out = trilinear_resample(vol, (2.0, 1.5, 1.5))
        assert out == vol

    def test_constant_volume_stays_constant(self):
        vol = make_hu_volume(np.full((10, 12, 9), -700), spacing=(2.5, 0.7, 0.9))
        out = resample_isotropic(vol, 1.5)
        assert out.dims == resampled_dims(vol.dims, vol.spacing_mm, (1.5, 1.5, 1.5))
        assert np.all(out.voxels == -700)

    def test_slice_count_doubles(self):
        vol = make_hu_volume(np.zeros((100, 4, 4)), spacing=(3.0, 1.5, 1.5))
        out = trilinear_resample(vol, 1.5)
        assert out.dims == (200, 4, 4)
        assert out.spacing_mm == (1.5, 1.5, 1.5)

    def test_dims_never_zero(self):
        assert resampled_dims((1, 1, 1), (0.5, 0.5, 0.5), (10.0, 10.0, 10.0)) == (1, 1, 1)

    def test_dims_round_half_away(self):
        # 5 * 0.5 / 1.0 = 2.5 -> 3
        assert resampled_dims((5, 5, 5), (0.5, 0.5, 0.5), (1.0, 1.0, 1.0)) == (3, 3, 3)

    def test_ramp_matches_scalar_reference(self):
        """Rounded output stays within half an HU of the scalar trilinear value."""
        z, y, x = np.meshgrid(np.arange(6), np.arange(5), np.arange(7), indexing="ij")
        ramp = -500 + 37 * z + 11 * y - 5 * x
        vol = make_hu_volume(ramp, spacing=(2.0, 1.2, 0.8))
        target = (1.3, 0.9, 1.1)
        out = trilinear_resample(vol, target)
        expected = brute_trilinear(vol.voxels.astype(np.float64), vol.spacing_mm, target, out.dims)
        assert np.max(np.abs(out.voxels - expected)) <= 0.5 + 1e-9

    def test_random_volume_matches_scalar_reference(self, rng):
        vol = make_hu_volume(rng.integers(-1024, 3072, size=(4, 5, 3)), spacing=(1.7, 2.3, 0.6))
        out = trilinear_resample(vol, (1.1, 1.9, 0.45))
        expected = brute_trilinear(vol.voxels.astype(np.float64), vol.spacing_mm, (1.1, 1.9, 0.45), out.dims)
        assert np.max(np.abs(out.voxels - expected)) <= 1.0

    def test_random_small_instances(self, rng):
        for _ in range(500):
            dims = tuple(int(v) for v in rng.integers(1, 5, size=3))
            spacing = tuple(float(v) for v in rng.uniform(0.5, 3.0, size=3))
            target = tuple(float(v) for v in rng.uniform(0.5, 3.0, size=3))
            vol = make_hu_volume(rng.integers(-1024, 3072, size=dims), spacing=spacing)
            out = trilinear_resample(vol, target)
            expected = brute_trilinear(vol.voxels.astype(np.float64), spacing, target, out.dims)
            assert np.max(np.abs(out.voxels - expected)) <= 0.5 + 1e-6

    def test_values_stay_in_hu_range(self, rng):
        vol = make_hu_volume(rng.choice([-1024, 3071], size=(6, 6, 6)), spacing=(1.0, 1.0, 1.0))
        out = trilinear_resample(vol, 0.7)
        assert out.voxels.min() >= -1024 and out.voxels.max() <= 3071

    def test_resampling_twice_is_stable(self, rng):
        vol = make_hu_volume(rng.integers(-1024, 400, size=(8, 8, 8)), spacing=(2.5, 0.8, 0.8))
        once = resample_isotropic(vol)
        twice = resample_isotropic(once)
        assert twice == once

    @pytest.mark.parametrize("target", [0.0, -1.0, (1.0, 1.0), (1.0, float("nan"), 1.0)])
    def test_invalid_spacing(self, target):
        vol = make_hu_volume(np.zeros((2, 2, 2)))
        with pytest.raises(InvalidSpacing):
            trilinear_resample(vol, target)
