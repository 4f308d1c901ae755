"""
Numeric helpers shared by the integer-producing pipeline steps.
"""
from typing import Union

import numpy as np

ArrayLike = Union[float, np.ndarray]

# 12-bit CT range after rescale
HU_MIN = -1024
HU_MAX = 3071


def round_half_away(x: ArrayLike) -> np.ndarray:
    """
    Round to the nearest integer, ties away from zero.

    numpy's `np.round` rounds ties to even; every integer-producing step
    in the pipeline (rescale, resample, window, phantom) uses this rule
    instead so results are reproducible from the documented formulas.
    """
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def to_hu(x: ArrayLike) -> np.ndarray:
    """Round half away from zero and clamp into the CT range as int16."""
    return np.clip(round_half_away(x), HU_MIN, HU_MAX).astype(np.int16)
