"""
2D -> 3D filter inflation and a small dense convolution engine.

A 2D kernel is inflated by repeating it ``N`` times along a new depth
axis and dividing by ``N``. On a "boring" input (all frames identical)
a valid-in-depth 3D convolution of depth ``N`` then reproduces the 2D
convolution of a single frame, which is how 2D ImageNet weights seed a
3D network.

The engine (cross-correlation with stride and valid/same padding, max
pooling) exists to check that property; it is not a training framework.

Layouts: images ``(cin, H, W)``, volumes ``(cin, D, H, W)``, kernels
``(kh, kw, cin, cout)`` and ``(kt, kh, kw, cin, cout)``.

LVW weight file (little-endian)::

    b"LVW1" | rank u32 | shape rank x u32 | weights f32 (C order) | bias cout x f32
"""
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.utils.error_handling import BadMagic, FormatError, LungRiskError, TruncatedPayload

logger = logging.getLogger(__name__)

Padding = Union[str, Sequence[str]]
Stride = Union[int, Sequence[int]]

LVW_MAGIC = b"LVW1"


class ShapeMismatch(LungRiskError, ValueError):
    """Input, kernel, window or stride shapes are incompatible."""


@dataclass(frozen=True)
class Kernel2D:
    weights: np.ndarray
    bias: Optional[np.ndarray] = field(default=None)

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.ndim != 4 or min(weights.shape) < 1:
            raise ShapeMismatch(f"Kernel2D weights must be (kh, kw, cin, cout), got {weights.shape}")
        _set_params(self, weights, self.bias)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.weights.shape


@dataclass(frozen=True)
class Kernel3D:
    weights: np.ndarray
    bias: Optional[np.ndarray] = field(default=None)

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.ndim != 5 or min(weights.shape) < 1:
            raise ShapeMismatch(f"Kernel3D weights must be (kt, kh, kw, cin, cout), got {weights.shape}")
        _set_params(self, weights, self.bias)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.weights.shape


def _set_params(kernel: object, weights: np.ndarray, bias: Optional[np.ndarray]) -> None:
    cout = weights.shape[-1]
    bias = np.zeros(cout) if bias is None else np.asarray(bias, dtype=np.float64).reshape(-1)
    if bias.shape != (cout,):
        raise ShapeMismatch(f"bias must have {cout} entries, got {bias.shape}")
    if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
        raise ValueError("kernel weights and bias must be finite")
    object.__setattr__(kernel, "weights", weights)
    object.__setattr__(kernel, "bias", bias)


def inflate_kernel(k: Kernel2D, depth: int) -> Kernel3D:
    """
    Repeat a 2D kernel `depth` times along a new leading axis, scaled by 1/depth.

    ``out[t, h, w, i, o] = k[h, w, i, o] / depth``; bias is copied.
    """
    if depth < 1:
        raise ValueError(f"inflation depth must be >= 1, got {depth}")
    frame = k.weights / depth
    return Kernel3D(weights=np.repeat(frame[np.newaxis], depth, axis=0), bias=k.bias.copy())


def inflate_pool_window(window: Sequence[int], depth: int) -> Tuple[int, int, int]:
    """Extend a 2D pooling window with a depth extent."""
    if depth < 1 or len(window) != 2 or min(window) < 1:
        raise ShapeMismatch(f"cannot inflate pooling window {tuple(window)} to depth {depth}")
    return (int(depth), int(window[0]), int(window[1]))


def boring_volume(img: np.ndarray, depth: int) -> np.ndarray:
    """Stack `depth` copies of a (cin, H, W) image into (cin, depth, H, W)."""
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    img = np.asarray(img)
    return np.repeat(img[:, np.newaxis], depth, axis=1)


def _per_axis(value: Union[int, str, Sequence], ndim: int, name: str) -> tuple:
    if isinstance(value, (int, np.integer, str)):
        return (value,) * ndim
    value = tuple(value)
    if len(value) != ndim:
        raise ShapeMismatch(f"{name} needs {ndim} entries, got {value}")
    return value


def _pad_amounts(size: int, extent: int, stride: int, mode: str) -> Tuple[int, int]:
    """Zero padding (low, high) for one axis; extra padding goes to the high side."""
    if mode == "valid":
        return (0, 0)
    if mode == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + extent - size, 0)
        return (total // 2, total - total // 2)
    raise ShapeMismatch(f"padding must be 'valid' or 'same', got {mode!r}")


def _convnd(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
            stride: Stride, padding: Padding, dtype: Union[str, np.dtype]) -> np.ndarray:
    nd = weights.ndim - 2
    x = np.asarray(x)
    if x.ndim != nd + 1:
        raise ShapeMismatch(f"expected input with {nd + 1} axes (cin, ...), got shape {x.shape}")
    extents = weights.shape[:nd]
    cin, cout = weights.shape[nd], weights.shape[nd + 1]
    if x.shape[0] != cin:
        raise ShapeMismatch(f"input has {x.shape[0]} channels, kernel expects {cin}")
    strides = tuple(int(s) for s in _per_axis(stride, nd, "stride"))
    if min(strides) < 1:
        raise ShapeMismatch(f"strides must be >= 1, got {strides}")
    modes = _per_axis(padding, nd, "padding")

    pads = [_pad_amounts(n, k, s, m) for n, k, s, m in zip(x.shape[1:], extents, strides, modes)]
    x = np.pad(x.astype(dtype, copy=False), [(0, 0)] + pads)
    for n, k in zip(x.shape[1:], extents):
        if n < k:
            raise ShapeMismatch(f"input extent {n} smaller than kernel extent {k}")

    windows = sliding_window_view(x, extents, axis=tuple(range(1, nd + 1)))
    windows = windows[(slice(None),) + tuple(slice(None, None, s) for s in strides)]
    # windows: (cin, *out, *k); contract k axes and cin against weights (*k, cin, cout)
    out = np.tensordot(
        windows,
        weights.astype(dtype, copy=False),
        axes=(list(range(nd + 1, 2 * nd + 1)) + [0], list(range(nd)) + [nd]),
    )
    out = np.moveaxis(out, -1, 0)
    return out + bias.astype(dtype).reshape((cout,) + (1,) * nd)


def conv2d(img: np.ndarray, k: Kernel2D, stride: Stride = 1, padding: Padding = "valid",
           dtype: Union[str, np.dtype] = np.float64) -> np.ndarray:
    """
    Cross-correlate a (cin, H, W) image with a 2D kernel, plus bias.

    ``padding`` is ``"valid"`` or ``"same"`` (zeros, extra on the high
    side), either for all axes or per axis. ``dtype`` selects the
    accumulation precision (float64 reference, float32 serving).
    """
    return _convnd(img, k.weights, k.bias, stride, padding, dtype)


def conv3d(vol: np.ndarray, k: Kernel3D, stride: Stride = 1, padding: Padding = "valid",
           dtype: Union[str, np.dtype] = np.float64) -> np.ndarray:
    """3D analogue of :func:`conv2d` on (cin, D, H, W) volumes."""
    return _convnd(vol, k.weights, k.bias, stride, padding, dtype)


def _maxpoolnd(x: np.ndarray, window: Sequence[int], stride: Optional[Stride]) -> np.ndarray:
    nd = len(window)
    x = np.asarray(x)
    if x.ndim != nd + 1:
        raise ShapeMismatch(f"expected input with {nd + 1} axes (c, ...), got shape {x.shape}")
    window = tuple(int(w) for w in window)
    if min(window) < 1:
        raise ShapeMismatch(f"window components must be >= 1, got {window}")
    strides = window if stride is None else tuple(int(s) for s in _per_axis(stride, nd, "stride"))
    if min(strides) < 1:
        raise ShapeMismatch(f"strides must be >= 1, got {strides}")
    for n, w in zip(x.shape[1:], window):
        if n < w:
            raise ShapeMismatch(f"input extent {n} smaller than window extent {w}")
    windows = sliding_window_view(x, window, axis=tuple(range(1, nd + 1)))
    windows = windows[(slice(None),) + tuple(slice(None, None, s) for s in strides)]
    return windows.max(axis=tuple(range(nd + 1, 2 * nd + 1)))


def maxpool2d(img: np.ndarray, window: Sequence[int], stride: Optional[Stride] = None) -> np.ndarray:
    """Valid max pooling of (c, H, W); stride defaults to the window."""
    return _maxpoolnd(img, window, stride)


def maxpool3d(vol: np.ndarray, window: Sequence[int], stride: Optional[Stride] = None) -> np.ndarray:
    """Valid max pooling of (c, D, H, W); stride defaults to the window."""
    return _maxpoolnd(vol, window, stride)


def write_lvw(kernel: Union[Kernel2D, Kernel3D], path: Union[str, Path]) -> None:
    """Write a kernel as an LVW file (weights and bias as f32)."""
    shape = kernel.weights.shape
    header = LVW_MAGIC + struct.pack(f"<I{len(shape)}I", len(shape), *shape)
    payload = (kernel.weights.astype("<f4").tobytes(order="C")
               + kernel.bias.astype("<f4").tobytes())
    Path(path).write_bytes(header + payload)


def read_lvw(path: Union[str, Path]) -> Union[Kernel2D, Kernel3D]:
    """
    Read an LVW file. Rank 4 gives a Kernel2D, rank 5 a Kernel3D.

    Raises:
        BadMagic, TruncatedPayload, FormatError
    """
    blob = Path(path).read_bytes()
    if blob[:4] != LVW_MAGIC:
        raise BadMagic(f"{path}: not an LVW file", details={"magic": blob[:4].hex()})
    if len(blob) < 8:
        raise TruncatedPayload(f"{path}: header truncated")
    (rank,) = struct.unpack_from("<I", blob, 4)
    if rank not in (4, 5):
        raise FormatError(f"{path}: kernel rank {rank} not supported", details={"rank": rank})
    offset = 8 + 4 * rank
    if len(blob) < offset:
        raise TruncatedPayload(f"{path}: shape truncated")
    shape = struct.unpack_from(f"<{rank}I", blob, 8)
    count = int(np.prod(shape, dtype=np.int64))
    cout = shape[-1]
    expected = offset + 4 * (count + cout)
    if len(blob) < expected:
        raise TruncatedPayload(f"{path}: payload has {len(blob) - offset} bytes, expected {expected - offset}",
                               details={"expected": expected - offset, "actual": len(blob) - offset})
    if len(blob) > expected:
        raise FormatError(f"{path}: {len(blob) - expected} unexpected trailing bytes")
    weights = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
    bias = np.frombuffer(blob, dtype="<f4", count=cout, offset=offset + 4 * count)
    cls = Kernel2D if rank == 4 else Kernel3D
    return cls(weights=weights.astype(np.float64), bias=bias.astype(np.float64))
