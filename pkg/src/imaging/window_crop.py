"""
Radiodensity windowing and fixed-size cropping.
"""
import logging
from typing import Sequence, Tuple, TypeVar, Union

import numpy as np

from src.imaging.volume_core import HuVolume, PreprocessedTensor, Volume
from src.utils.error_handling import LungRiskError
from src.utils.numeric import round_half_away

logger = logging.getLogger(__name__)

V = TypeVar("V", bound=Volume)

DEFAULT_WINDOW_HU = (-1000, 400)
DEFAULT_CROP_SIZE = (160, 160, 160)
# Windowed image of air; padding with it is indistinguishable from air
WINDOW_PAD_VALUE = 0


class InvalidWindow(LungRiskError, ValueError):
    """Window bounds must satisfy lo < hi."""


class InvalidCropSize(LungRiskError, ValueError):
    """Crop size components must be > 0."""


def window_hu(vol: HuVolume, lo_hu: int = DEFAULT_WINDOW_HU[0], hi_hu: int = DEFAULT_WINDOW_HU[1]) -> PreprocessedTensor:
    """
    Clip HU to [lo, hi] and quantize to 0..255.

    ``q = round((clamp(hu, lo, hi) - lo) / (hi - lo) * 255)``, ties away
    from zero. Dims and spacing are preserved.
    """
    if lo_hu >= hi_hu:
        raise InvalidWindow(f"window lower bound {lo_hu} must be below upper bound {hi_hu}",
                            details={"lo_hu": lo_hu, "hi_hu": hi_hu})
    clipped = np.clip(vol.voxels.astype(np.float64), lo_hu, hi_hu)
    # multiply before dividing keeps midpoints such as 127.5 exact
    scaled = (clipped - lo_hu) * 255.0 / float(hi_hu - lo_hu)
    return PreprocessedTensor(voxels=round_half_away(scaled).astype(np.uint8), spacing_mm=vol.spacing_mm)


def crop_centered(
    vol: V,
    center: Sequence[int],
    size: Sequence[int],
    pad_value: Union[int, float] = WINDOW_PAD_VALUE,
) -> V:
    """
    Extract a `size` block whose floor-midpoint is `center`.

    Output index ``o`` reads input index ``center - size // 2 + o``;
    reads outside the input produce `pad_value`. Every center is valid.
    """
    size = tuple(int(s) for s in size)
    if len(size) != 3 or any(s <= 0 for s in size):
        raise InvalidCropSize(f"crop size must be three values > 0, got {size}")

    out = np.full(size, pad_value, dtype=vol.voxels.dtype)
    src_slices = []
    dst_slices = []
    for c, s, n in zip(center, size, vol.dims):
        start = int(c) - s // 2
        lo = max(start, 0)
        hi = min(start + s, n)
        if hi <= lo:
            logger.debug(f"Crop at {tuple(center)} misses the volume entirely")
            return type(vol)(voxels=out, spacing_mm=vol.spacing_mm)
        src_slices.append(slice(lo, hi))
        dst_slices.append(slice(lo - start, hi - start))
    out[tuple(dst_slices)] = vol.voxels[tuple(src_slices)]
    return type(vol)(voxels=out, spacing_mm=vol.spacing_mm)


def volume_center(dims: Sequence[int]) -> Tuple[int, int, int]:
    """Geometric center ``floor(dims / 2)``; the crop center when segmentation fails."""
    return tuple(int(d) // 2 for d in dims)  # type: ignore[return-value]


def preprocess_volume(
    vol: HuVolume,
    center: Sequence[int],
    crop_size: Sequence[int] = DEFAULT_CROP_SIZE,
    window: Tuple[int, int] = DEFAULT_WINDOW_HU,
) -> PreprocessedTensor:
    """Window then crop around `center`, padding with windowed air."""
    windowed = window_hu(vol, window[0], window[1])
    tensor = crop_centered(windowed, center, crop_size, pad_value=WINDOW_PAD_VALUE)
    assert tensor.dims == tuple(crop_size)
    return tensor
