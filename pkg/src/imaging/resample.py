"""
Trilinear resampling onto a new voxel grid.

Convention: voxel centers are aligned at the origin corner, so voxel
index ``i`` along an axis sits at physical coordinate ``i * spacing``.
Output voxel ``j`` samples the input at ``j * target / spacing_in``;
samples beyond the last input voxel take the border value.
"""
import logging
from typing import Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from src.imaging.volume_core import HuVolume
from src.utils.error_handling import LungRiskError
from src.utils.numeric import HU_MAX, HU_MIN, round_half_away

logger = logging.getLogger(__name__)

DEFAULT_SPACING_MM = 1.5


class InvalidSpacing(LungRiskError, ValueError):
    """Target spacing components must be finite and > 0."""


def _as_spacing(target: Union[float, Sequence[float]]) -> Tuple[float, float, float]:
    if np.isscalar(target):
        target = (target, target, target)  # type: ignore[assignment]
    spacing = tuple(float(t) for t in target)  # type: ignore[union-attr]
    if len(spacing) != 3 or not all(np.isfinite(t) and t > 0 for t in spacing):
        raise InvalidSpacing(f"target spacing must be three values > 0, got {target}")
    return spacing  # type: ignore[return-value]


def resampled_dims(dims: Sequence[int], spacing_mm: Sequence[float],
                   target_mm: Sequence[float]) -> Tuple[int, int, int]:
    """``max(1, round(dims * spacing / target))`` per axis."""
    return tuple(  # type: ignore[return-value]
        max(1, int(round_half_away(d * s / t)))
        for d, s, t in zip(dims, spacing_mm, target_mm)
    )


def trilinear_resample(vol: HuVolume, target_spacing_mm: Union[float, Sequence[float]]) -> HuVolume:
    """
    Resample an HU volume to a new spacing with trilinear interpolation.

    Interpolation accumulates in float64; the result is rounded half away
    from zero back to int16 HU. Resampling to the input spacing returns
    an identical volume.

    Raises:
        InvalidSpacing: If a target spacing component is not > 0
    """
    target = _as_spacing(target_spacing_mm)
    out_dims = resampled_dims(vol.dims, vol.spacing_mm, target)
    # input coordinate = output index * scale, per axis
    scale = np.array([t / s for t, s in zip(target, vol.spacing_mm)], dtype=np.float64)

    if out_dims == vol.dims and np.all(scale == 1.0):
        return HuVolume(voxels=vol.voxels, spacing_mm=target)

    sampled = ndimage.affine_transform(
        vol.voxels.astype(np.float64),
        scale,
        offset=0.0,
        output_shape=out_dims,
        output=np.float64,
        order=1,
        mode="nearest",
        prefilter=False,
    )
    voxels = np.clip(round_half_away(sampled), HU_MIN, HU_MAX).astype(np.int16)
    logger.debug(f"Resampled {vol.dims} @ {vol.spacing_mm} -> {out_dims} @ {target}")
    return HuVolume(voxels=voxels, spacing_mm=target)


def resample_isotropic(vol: HuVolume, spacing_mm: float = DEFAULT_SPACING_MM) -> HuVolume:
    """Resample to an isotropic grid (1.5 mm by default)."""
    return trilinear_resample(vol, (spacing_mm, spacing_mm, spacing_mm))
