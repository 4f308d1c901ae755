"""
Minimal DICOM writer for synthetic CT series.

Emits uncompressed little-endian CT Image Storage slices in Explicit or
Implicit VR, with or without the 128-byte preamble and file meta group.
Output is byte-deterministic: UIDs are derived from the caller's keys,
never from clocks or random sources.
"""
import hashlib
import logging
import struct
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from src.imaging.dicom_ingest import (
    BITS_ALLOCATED,
    COLUMNS,
    EXPLICIT_VR_LITTLE_ENDIAN,
    IMAGE_POSITION_PATIENT,
    IMPLICIT_VR_LITTLE_ENDIAN,
    MAGIC,
    PIXEL_DATA,
    PIXEL_REPRESENTATION,
    PIXEL_SPACING,
    PREAMBLE_LENGTH,
    RESCALE_INTERCEPT,
    RESCALE_SLOPE,
    ROWS,
    SLICE_THICKNESS,
    SUPPORTED_TRANSFER_SYNTAXES,
    TRANSFER_SYNTAX_UID,
    Tag,
)
from src.utils.numeric import HU_MAX, HU_MIN

logger = logging.getLogger(__name__)

CT_IMAGE_STORAGE = "1.2.840.10008.5.1.4.1.1.2"
IMPLEMENTATION_CLASS_UID = "2.25.1180561297453815316373024542733162471"
IMPLEMENTATION_VERSION = "LUNGRISK_010"

# raw = HU + 1024 keeps every HU in the 12-bit unsigned range
HU_OFFSET = -HU_MIN

_LONG_VRS = {"OB", "OW", "SQ", "UN", "UT"}


def make_uid(*parts: object) -> str:
    """Deterministic ``2.25.<int>`` UID from the SHA-256 of the joined parts."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return f"2.25.{int.from_bytes(digest[:16], 'big')}"


def _format_ds(value: float) -> str:
    text = f"{float(value):.10g}"
    if len(text) > 16:
        text = f"{float(value):.6g}"
    return text


def _pad(value: bytes, vr: str) -> bytes:
    if len(value) % 2:
        value += b"\x00" if vr in ("UI", "OB") else b" "
    return value


def _element(tag: Tag, vr: str, value: bytes, explicit: bool) -> bytes:
    value = _pad(value, vr)
    head = struct.pack("<HH", *tag)
    if not explicit:
        return head + struct.pack("<I", len(value)) + value
    if vr in _LONG_VRS:
        return head + vr.encode("ascii") + b"\x00\x00" + struct.pack("<I", len(value)) + value
    return head + vr.encode("ascii") + struct.pack("<H", len(value)) + value


def _text(tag: Tag, vr: str, text: str, explicit: bool) -> bytes:
    return _element(tag, vr, text.encode("ascii"), explicit)


def _us(tag: Tag, value: int, explicit: bool) -> bytes:
    return _element(tag, "US", struct.pack("<H", value), explicit)


def _file_meta(sop_instance_uid: str, transfer_syntax: str) -> bytes:
    body = b"".join(
        [
            _element((0x0002, 0x0001), "OB", b"\x00\x01", True),
            _text((0x0002, 0x0002), "UI", CT_IMAGE_STORAGE, True),
            _text((0x0002, 0x0003), "UI", sop_instance_uid, True),
            _text(TRANSFER_SYNTAX_UID, "UI", transfer_syntax, True),
            _text((0x0002, 0x0012), "UI", IMPLEMENTATION_CLASS_UID, True),
            _text((0x0002, 0x0013), "SH", IMPLEMENTATION_VERSION, True),
        ]
    )
    group_length = _element((0x0002, 0x0000), "UL", struct.pack("<I", len(body)), True)
    return group_length + body


def encode_dicom_slice(
    raw_pixels: np.ndarray,
    pixel_spacing: Tuple[float, float],
    slice_thickness_mm: float,
    z_mm: float,
    rescale_slope: float = 1.0,
    rescale_intercept: float = float(-HU_OFFSET),
    pixel_representation: int = 0,
    transfer_syntax: str = EXPLICIT_VR_LITTLE_ENDIAN,
    preamble: bool = True,
    instance_number: int = 1,
    series_uid: str = "",
    include_rescale: bool = True,
) -> bytes:
    """
    Encode one 16-bit CT slice.

    Args:
        raw_pixels: (rows, cols) stored values; unsigned unless
            `pixel_representation` is 1
        preamble: Emit the 128-byte preamble, ``DICM`` and the file meta group
        include_rescale: Emit RescaleSlope/RescaleIntercept (omit to exercise
            the reader's defaults)

    Returns:
        bytes: The encoded file
    """
    if transfer_syntax not in SUPPORTED_TRANSFER_SYNTAXES:
        raise ValueError(f"cannot encode transfer syntax {transfer_syntax}")
    raw = np.asarray(raw_pixels)
    if raw.ndim != 2:
        raise ValueError(f"raw_pixels must be 2D, got shape {raw.shape}")
    rows, cols = raw.shape
    dtype = "<i2" if pixel_representation == 1 else "<u2"
    pixel_bytes = raw.astype(dtype).tobytes()

    explicit = transfer_syntax == EXPLICIT_VR_LITTLE_ENDIAN
    series_uid = series_uid or make_uid("series", rows, cols, slice_thickness_mm)
    sop_instance_uid = make_uid(series_uid, instance_number, z_mm)
    study_uid = make_uid("study", series_uid)

    dataset = [
        _text((0x0008, 0x0016), "UI", CT_IMAGE_STORAGE, explicit),
        _text((0x0008, 0x0018), "UI", sop_instance_uid, explicit),
        _text((0x0008, 0x0060), "CS", "CT", explicit),
        _text(SLICE_THICKNESS, "DS", _format_ds(slice_thickness_mm), explicit),
        _text((0x0020, 0x000D), "UI", study_uid, explicit),
        _text((0x0020, 0x000E), "UI", series_uid, explicit),
        _text((0x0020, 0x0013), "IS", str(int(instance_number)), explicit),
        _text(IMAGE_POSITION_PATIENT, "DS", f"0\\0\\{_format_ds(z_mm)}", explicit),
        _us((0x0028, 0x0002), 1, explicit),
        _text((0x0028, 0x0004), "CS", "MONOCHROME2", explicit),
        _us(ROWS, rows, explicit),
        _us(COLUMNS, cols, explicit),
        _text(PIXEL_SPACING, "DS", "\\".join(_format_ds(s) for s in pixel_spacing), explicit),
        _us(BITS_ALLOCATED, 16, explicit),
        _us((0x0028, 0x0101), 16, explicit),
        _us((0x0028, 0x0102), 15, explicit),
        _us(PIXEL_REPRESENTATION, pixel_representation, explicit),
    ]
    if include_rescale:
        dataset.append(_text(RESCALE_INTERCEPT, "DS", _format_ds(rescale_intercept), explicit))
        dataset.append(_text(RESCALE_SLOPE, "DS", _format_ds(rescale_slope), explicit))
    dataset.append(_element(PIXEL_DATA, "OW", pixel_bytes, explicit))

    head = b""
    if preamble:
        head = b"\x00" * PREAMBLE_LENGTH + MAGIC + _file_meta(sop_instance_uid, transfer_syntax)
    return head + b"".join(dataset)


def hu_to_raw(hu: np.ndarray) -> np.ndarray:
    """Stored values for an HU grid under slope 1, intercept -1024."""
    hu = np.asarray(hu)
    if hu.size and (hu.min() < HU_MIN or hu.max() > HU_MAX):
        raise ValueError(f"HU values must lie in [{HU_MIN}, {HU_MAX}]")
    return (hu.astype(np.int32) + HU_OFFSET).astype(np.uint16)


def write_series(
    hu: np.ndarray,
    spacing_mm: Sequence[float],
    out_dir: Union[str, Path],
    series_key: str,
    transfer_syntax: str = EXPLICIT_VR_LITTLE_ENDIAN,
    preamble: bool = True,
) -> List[Path]:
    """
    Write an HU grid as one file per slice, ``slice_{k:04d}.dcm`` at ``z = k * dz``.

    Returns:
        list: Written paths in slice order
    """
    hu = np.asarray(hu)
    dz, dy, dx = (float(s) for s in spacing_mm)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    raw = hu_to_raw(hu)
    series_uid = make_uid("series", series_key)

    paths = []
    for k in range(hu.shape[0]):
        data = encode_dicom_slice(
            raw[k],
            pixel_spacing=(dy, dx),
            slice_thickness_mm=dz,
            z_mm=k * dz,
            transfer_syntax=transfer_syntax,
            preamble=preamble,
            instance_number=k + 1,
            series_uid=series_uid,
        )
        path = out_dir / f"slice_{k:04d}.dcm"
        path.write_bytes(data)
        paths.append(path)
    logger.debug(f"Wrote {len(paths)} slices to {out_dir}")
    return paths


__all__ = [
    "CT_IMAGE_STORAGE",
    "EXPLICIT_VR_LITTLE_ENDIAN",
    "IMPLICIT_VR_LITTLE_ENDIAN",
    "encode_dicom_slice",
    "hu_to_raw",
    "make_uid",
    "write_series",
]
