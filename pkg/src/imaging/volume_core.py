"""
Core volume types and the LVOL intermediate file format.

Volumes are stored on disk as integers (i16 Hounsfield units or u8
windowed values); conversion to floats happens only in
`load_tensor_trichannel`, at load time.

LVOL layout (little-endian, 32-byte header, then the payload)::

    offset  size  field
    0       4     magic  b"LVOL"
    4       2     version (u16, = 1)
    6       2     dtype code (u16: 1=u8, 2=i16, 3=f32)
    8       12    dims (3 x u32: depth, height, width)
    20      12    spacing (3 x f32, mm: dz, dy, dx)
    32      ...   voxels, depth-major (C order)
"""
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar, Dict, Tuple, Type, Union

import numpy as np

from src.utils.error_handling import (
    BadMagic,
    FormatError,
    LungRiskError,
    TruncatedPayload,
    UnsupportedVersion,
)
from src.utils.numeric import HU_MAX, HU_MIN

logger = logging.getLogger(__name__)

Dims = Tuple[int, int, int]
Spacing = Tuple[float, float, float]

LVOL_MAGIC = b"LVOL"
LVOL_VERSION = 1
_HEADER = struct.Struct("<4sHH3I3f")


class VolumeError(LungRiskError, ValueError):
    """A volume violates its type invariants."""


class WrongDtype(FormatError):
    """The file holds a different voxel dtype than the caller requires."""


@dataclass(frozen=True)
class Volume:
    """
    Dense 3D grid with per-axis spacing in mm.

    Subclasses fix the voxel dtype. The voxel array is copied on
    construction and marked read-only, so volumes can be shared freely
    between threads.
    """
    voxels: np.ndarray
    spacing_mm: Spacing

    dtype: ClassVar[np.dtype] = np.dtype(np.float32)
    dtype_code: ClassVar[int] = 3

    def __post_init__(self) -> None:
        voxels = np.array(self.voxels, dtype=self.dtype, order="C", copy=True)
        if voxels.ndim != 3 or min(voxels.shape) < 1:
            raise VolumeError(f"{type(self).__name__} needs a non-empty 3D grid, got shape {voxels.shape}")
        spacing = tuple(float(s) for s in self.spacing_mm)
        if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
            raise VolumeError(f"spacing components must be > 0, got {self.spacing_mm}")
        voxels.setflags(write=False)
        object.__setattr__(self, "voxels", voxels)
        object.__setattr__(self, "spacing_mm", spacing)
        self._check_values()

    def _check_values(self) -> None:
        pass

    @property
    def dims(self) -> Dims:
        return tuple(int(d) for d in self.voxels.shape)  # type: ignore[return-value]

    def __eq__(self, other: object) -> bool:
        if type(other) is not type(self):
            return NotImplemented
        return self.spacing_mm == other.spacing_mm and np.array_equal(self.voxels, other.voxels)


@dataclass(frozen=True, eq=False)
class HuVolume(Volume):
    """Hounsfield-unit volume: int16 voxels within [-1024, 3071]."""
    dtype: ClassVar[np.dtype] = np.dtype(np.int16)
    dtype_code: ClassVar[int] = 2

    def _check_values(self) -> None:
        lo, hi = int(self.voxels.min()), int(self.voxels.max())
        if lo < HU_MIN or hi > HU_MAX:
            raise VolumeError(f"HU values must lie in [{HU_MIN}, {HU_MAX}], got [{lo}, {hi}]")


@dataclass(frozen=True, eq=False)
class PreprocessedTensor(Volume):
    """
    Windowed, 8-bit quantized volume.

    The batch pipeline only emits tensors whose dims equal the configured
    crop size; the type itself accepts any dims so the windowing step can
    produce it before cropping.
    """
    dtype: ClassVar[np.dtype] = np.dtype(np.uint8)
    dtype_code: ClassVar[int] = 1


@dataclass(frozen=True, eq=False)
class FloatVolume(Volume):
    """Single-precision volume (LVOL dtype 3)."""


AnyVolume = Union[HuVolume, PreprocessedTensor, FloatVolume]

_BY_CODE: Dict[int, Type[Volume]] = {
    cls.dtype_code: cls for cls in (PreprocessedTensor, HuVolume, FloatVolume)
}


@dataclass(frozen=True)
class LvolHeader:
    version: int
    dtype_code: int
    dims: Dims
    spacing_mm: Spacing

    @property
    def volume_type(self) -> Type[Volume]:
        return _BY_CODE[self.dtype_code]

    @property
    def payload_size(self) -> int:
        itemsize = self.volume_type.dtype.itemsize
        return int(np.prod(self.dims, dtype=np.int64)) * itemsize


def _decode_header(blob: bytes, path: Union[str, Path]) -> LvolHeader:
    if len(blob) < 4 or blob[:4] != LVOL_MAGIC:
        raise BadMagic(f"{path}: not an LVOL file", details={"magic": blob[:4].hex()})
    if len(blob) < _HEADER.size:
        raise TruncatedPayload(f"{path}: header is {len(blob)} bytes, expected {_HEADER.size}")
    _, version, code, d, h, w, sz, sy, sx = _HEADER.unpack_from(blob)
    if version != LVOL_VERSION:
        raise UnsupportedVersion(f"{path}: LVOL version {version} not supported",
                                 details={"version": version})
    if code not in _BY_CODE:
        raise FormatError(f"{path}: unknown dtype code {code}", details={"dtype_code": code})
    return LvolHeader(version, code, (d, h, w), (sz, sy, sx))


def write_lvol(volume: Volume, path: Union[str, Path]) -> None:
    """Write a volume as LVOL. Spacing is stored as f32."""
    path = Path(path)
    d, h, w = volume.dims
    header = _HEADER.pack(LVOL_MAGIC, LVOL_VERSION, volume.dtype_code, d, h, w, *volume.spacing_mm)
    payload = volume.voxels.astype(volume.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
    path.write_bytes(header + payload)
    logger.debug(f"Wrote {path} ({type(volume).__name__} {volume.dims})")


def read_lvol_header(path: Union[str, Path]) -> LvolHeader:
    """Read only the LVOL header."""
    with open(path, "rb") as fh:
        return _decode_header(fh.read(_HEADER.size), path)


def read_lvol(path: Union[str, Path]) -> AnyVolume:
    """
    Read an LVOL file.

    Returns the volume type matching the stored dtype code.

    Raises:
        BadMagic, UnsupportedVersion, TruncatedPayload, FormatError
    """
    blob = Path(path).read_bytes()
    header = _decode_header(blob, path)
    payload = blob[_HEADER.size:]
    expected = header.payload_size
    if len(payload) < expected:
        raise TruncatedPayload(
            f"{path}: payload has {len(payload)} bytes, header declares {expected}",
            details={"expected": expected, "actual": len(payload)},
        )
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} unexpected trailing bytes")
    cls = header.volume_type
    voxels = np.frombuffer(payload, dtype=cls.dtype.newbyteorder("<")).reshape(header.dims)
    return cls(voxels=voxels, spacing_mm=header.spacing_mm)  # type: ignore[return-value]


def load_tensor_trichannel(path: Union[str, Path], dtype: Union[str, np.dtype] = np.float32) -> np.ndarray:
    """
    Load a u8 preprocessed tensor as a (3, D, H, W) float array in [-1, 1].

    Each value v maps to v / 255 * 2 - 1; the single stored channel is
    replicated into three identical channels (the model expects RGB input).

    Raises:
        WrongDtype: If the file does not hold u8 voxels
    """
    header = read_lvol_header(path)
    if header.dtype_code != PreprocessedTensor.dtype_code:
        raise WrongDtype(
            f"{path}: expected u8 tensor, found {header.volume_type.__name__}",
            details={"dtype_code": header.dtype_code},
        )
    tensor = read_lvol(path)
    lut = (np.arange(256, dtype=np.float64) / 255.0 * 2.0 - 1.0).astype(dtype)
    single = lut[tensor.voxels]
    return np.repeat(single[np.newaxis], 3, axis=0)
