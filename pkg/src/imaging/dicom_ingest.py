"""
DICOM series ingestion.

Parses uncompressed little-endian DICOM slice files (Explicit or Implicit
VR) into `DicomSlice` records and assembles a series into a calibrated
Hounsfield-unit volume.

Only the two uncompressed little-endian transfer syntaxes are accepted;
sequences are skipped over, compressed or multi-frame pixel data is not
supported.
"""
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.imaging.volume_core import HuVolume
from src.utils.error_handling import LungRiskError
from src.utils.numeric import to_hu

logger = logging.getLogger(__name__)

Tag = Tuple[int, int]

IMPLICIT_VR_LITTLE_ENDIAN = "1.2.840.10008.1.2"
EXPLICIT_VR_LITTLE_ENDIAN = "1.2.840.10008.1.2.1"
SUPPORTED_TRANSFER_SYNTAXES = (IMPLICIT_VR_LITTLE_ENDIAN, EXPLICIT_VR_LITTLE_ENDIAN)

PREAMBLE_LENGTH = 128
MAGIC = b"DICM"
UNDEFINED_LENGTH = 0xFFFFFFFF

TRANSFER_SYNTAX_UID: Tag = (0x0002, 0x0010)
ROWS: Tag = (0x0028, 0x0010)
COLUMNS: Tag = (0x0028, 0x0011)
PIXEL_SPACING: Tag = (0x0028, 0x0030)
BITS_ALLOCATED: Tag = (0x0028, 0x0100)
PIXEL_REPRESENTATION: Tag = (0x0028, 0x0103)
RESCALE_INTERCEPT: Tag = (0x0028, 0x1052)
RESCALE_SLOPE: Tag = (0x0028, 0x1053)
SLICE_THICKNESS: Tag = (0x0018, 0x0050)
IMAGE_POSITION_PATIENT: Tag = (0x0020, 0x0032)
PIXEL_DATA: Tag = (0x7FE0, 0x0010)

ITEM: Tag = (0xFFFE, 0xE000)
ITEM_DELIMITER: Tag = (0xFFFE, 0xE00D)
SEQUENCE_DELIMITER: Tag = (0xFFFE, 0xE0DD)

# VRs whose explicit encoding uses 2 reserved bytes + a 4-byte length
_LONG_VRS = {b"OB", b"OD", b"OF", b"OL", b"OV", b"OW", b"SQ", b"SV", b"UC", b"UN", b"UR", b"UT", b"UV"}
_KNOWN_VRS = _LONG_VRS | {
    b"AE", b"AS", b"AT", b"CS", b"DA", b"DS", b"DT", b"FD", b"FL", b"IS", b"LO",
    b"LT", b"PN", b"SH", b"SL", b"SS", b"ST", b"TM", b"UI", b"UL", b"US",
}

# Implicit VR carries no VR; the tags the parser interprets are typed here
_IMPLICIT_VRS: Dict[Tag, bytes] = {
    TRANSFER_SYNTAX_UID: b"UI",
    ROWS: b"US",
    COLUMNS: b"US",
    BITS_ALLOCATED: b"US",
    PIXEL_REPRESENTATION: b"US",
    PIXEL_SPACING: b"DS",
    RESCALE_INTERCEPT: b"DS",
    RESCALE_SLOPE: b"DS",
    SLICE_THICKNESS: b"DS",
    IMAGE_POSITION_PATIENT: b"DS",
    PIXEL_DATA: b"OW",
}

_TAG_NAMES: Dict[Tag, str] = {
    ROWS: "Rows",
    COLUMNS: "Columns",
    BITS_ALLOCATED: "BitsAllocated",
    PIXEL_REPRESENTATION: "PixelRepresentation",
    RESCALE_INTERCEPT: "RescaleIntercept",
    RESCALE_SLOPE: "RescaleSlope",
    PIXEL_SPACING: "PixelSpacing",
    SLICE_THICKNESS: "SliceThickness",
    IMAGE_POSITION_PATIENT: "ImagePositionPatient",
    PIXEL_DATA: "PixelData",
}

# Relative deviation of a slice gap from the median gap before a series is rejected
SLICE_GAP_TOLERANCE = 0.15


class DicomError(LungRiskError):
    """Base class for DICOM ingestion errors."""


class UnsupportedTransferSyntax(DicomError):
    """Compressed, big-endian or otherwise unsupported encoding."""


class UnsupportedPixelFormat(DicomError):
    """Pixel data layout other than 16 bits allocated."""


class MissingTag(DicomError):
    """A required tag without a default is absent."""

    def __init__(self, tag: Tag):
        self.tag = tag
        name = _TAG_NAMES.get(tag, "unknown")
        super().__init__(f"Missing required tag ({tag[0]:04X},{tag[1]:04X}) {name}",
                         details={"tag": f"({tag[0]:04X},{tag[1]:04X})", "name": name})


class MalformedElement(DicomError):
    """An element header or value overruns the buffer or cannot be decoded."""


class InvalidSlice(DicomError, ValueError):
    """Decoded values violate the DicomSlice invariants."""


class InsufficientSlices(DicomError):
    """A series needs at least two slices."""


class InconsistentGeometry(DicomError):
    """Slices of one series disagree on rows, columns or pixel spacing."""


class DuplicateSlicePosition(DicomError):
    """Two slices share the same z position."""


class NonUniformSpacing(DicomError):
    """A slice gap deviates from the median gap by more than the tolerance."""


class SeriesNotFound(DicomError):
    """The series directory is missing or empty."""


@dataclass(frozen=True)
class DicomSlice:
    """One decoded CT slice."""
    rows: int
    cols: int
    bits_allocated: int
    pixel_representation: int
    rescale_slope: float
    rescale_intercept: float
    pixel_spacing: Tuple[float, float]
    slice_thickness_mm: float
    image_position_z_mm: float
    raw_pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.rows <= 0 or self.cols <= 0:
            raise InvalidSlice(f"rows and cols must be > 0, got {self.rows}x{self.cols}")
        pixels = np.asarray(self.raw_pixels)
        if pixels.size != self.rows * self.cols:
            raise InvalidSlice(f"expected {self.rows * self.cols} pixels, got {pixels.size}")
        if any(s <= 0 for s in self.pixel_spacing):
            raise InvalidSlice(f"pixel spacing must be > 0, got {self.pixel_spacing}")
        pixels = pixels.reshape(self.rows, self.cols).copy()
        pixels.setflags(write=False)
        object.__setattr__(self, "raw_pixels", pixels)
        object.__setattr__(self, "pixel_spacing", tuple(float(s) for s in self.pixel_spacing))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DicomSlice):
            return NotImplemented
        return (
            (self.rows, self.cols, self.bits_allocated, self.pixel_representation)
            == (other.rows, other.cols, other.bits_allocated, other.pixel_representation)
            and self.rescale_slope == other.rescale_slope
            and self.rescale_intercept == other.rescale_intercept
            and self.pixel_spacing == other.pixel_spacing
            and self.slice_thickness_mm == other.slice_thickness_mm
            and self.image_position_z_mm == other.image_position_z_mm
            and np.array_equal(self.raw_pixels, other.raw_pixels)
        )


@dataclass(frozen=True)
class SeriesMeta:
    slice_spacing_mm: float
    in_plane_spacing_mm: Tuple[float, float]
    slice_count: int
    z_positions_mm: Tuple[float, ...] = ()


class _Reader:
    """Sequential little-endian element reader over an in-memory buffer."""

    def __init__(self, data: bytes, offset: int, explicit_vr: bool):
        self.data = data
        self.pos = offset
        self.explicit_vr = explicit_vr

    def at_end(self) -> bool:
        return self.pos >= len(self.data)

    def _take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise MalformedElement(
                f"{what} at offset {self.pos} needs {n} bytes, {len(self.data) - self.pos} left",
                details={"offset": self.pos},
            )
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def peek_tag(self) -> Optional[Tag]:
        if self.pos + 4 > len(self.data):
            return None
        return struct.unpack_from("<HH", self.data, self.pos)  # type: ignore[return-value]

    def read_header(self) -> Tuple[Tag, bytes, int]:
        group, element = struct.unpack("<HH", self._take(4, "tag"))
        tag = (group, element)
        if group == 0xFFFE:
            # Item and delimiter headers have no VR in either encoding
            (length,) = struct.unpack("<I", self._take(4, "item length"))
            return tag, b"", length
        if self.explicit_vr:
            vr = self._take(2, "VR")
            if vr in _LONG_VRS:
                self._take(2, "reserved")
                (length,) = struct.unpack("<I", self._take(4, "length"))
            else:
                (length,) = struct.unpack("<H", self._take(2, "length"))
        else:
            vr = _IMPLICIT_VRS.get(tag, b"UN")
            (length,) = struct.unpack("<I", self._take(4, "length"))
        return tag, vr, length

    def read_value(self, tag: Tag, length: int) -> bytes:
        return self._take(length, f"value of ({tag[0]:04X},{tag[1]:04X})")

    def skip_undefined_sequence(self) -> None:
        """Skip items until the sequence delimiter."""
        while True:
            tag, _, length = self.read_header()
            if tag == SEQUENCE_DELIMITER:
                return
            if tag != ITEM:
                raise MalformedElement(f"unexpected ({tag[0]:04X},{tag[1]:04X}) inside sequence")
            if length == UNDEFINED_LENGTH:
                self.skip_undefined_item()
            else:
                self._take(length, "sequence item")

    def skip_undefined_item(self) -> None:
        while True:
            tag, vr, length = self.read_header()
            if tag == ITEM_DELIMITER:
                return
            if length == UNDEFINED_LENGTH:
                self.skip_undefined_sequence()
            else:
                self.read_value(tag, length)


def _looks_explicit(data: bytes, offset: int) -> bool:
    return data[offset + 4:offset + 6] in _KNOWN_VRS


def _read_elements(reader: _Reader, stop_group: Optional[int] = None) -> Dict[Tag, bytes]:
    """Collect element values; sequences are skipped. Stops before `stop_group` ends."""
    elements: Dict[Tag, bytes] = {}
    while not reader.at_end():
        if stop_group is not None:
            nxt = reader.peek_tag()
            if nxt is None or nxt[0] != stop_group:
                break
        tag, vr, length = reader.read_header()
        if length == UNDEFINED_LENGTH:
            if tag == PIXEL_DATA:
                raise UnsupportedTransferSyntax("encapsulated (compressed) pixel data is not supported")
            reader.skip_undefined_sequence()
            continue
        value = reader.read_value(tag, length)
        if vr != b"SQ":
            elements[tag] = value
        if tag == PIXEL_DATA:
            break
    return elements


def _decode_us(tag: Tag, value: bytes) -> int:
    if len(value) < 2:
        raise MalformedElement(f"US value of ({tag[0]:04X},{tag[1]:04X}) too short")
    return struct.unpack_from("<H", value)[0]


def _decode_ds(tag: Tag, value: bytes) -> List[float]:
    try:
        text = value.decode("ascii").strip("\x00 ")
        return [float(part) for part in text.split("\\") if part.strip()]
    except (UnicodeDecodeError, ValueError) as e:
        raise MalformedElement(f"bad decimal string {value!r} in ({tag[0]:04X},{tag[1]:04X})") from e


def _decode_uid(value: bytes) -> str:
    return value.decode("ascii", errors="replace").strip("\x00 ")


def _require(elements: Dict[Tag, bytes], tag: Tag) -> bytes:
    if tag not in elements:
        raise MissingTag(tag)
    return elements[tag]


def parse_dicom_file(data: bytes) -> DicomSlice:
    """
    Parse one DICOM slice from its bytes.

    Accepts Part-10 files (128-byte preamble + ``DICM``) and bare datasets
    that start at the first data element. Missing RescaleSlope defaults
    to 1 and missing RescaleIntercept to 0.

    Raises:
        UnsupportedTransferSyntax: Compressed or big-endian encodings
        MissingTag: A required tag is absent
        MalformedElement: A length overruns the buffer or a value is unreadable
        UnsupportedPixelFormat: BitsAllocated other than 16
    """
    if len(data) >= PREAMBLE_LENGTH + 4 and data[PREAMBLE_LENGTH:PREAMBLE_LENGTH + 4] == MAGIC:
        meta_reader = _Reader(data, PREAMBLE_LENGTH + 4, explicit_vr=True)
        meta = _read_elements(meta_reader, stop_group=0x0002)
        syntax = _decode_uid(meta[TRANSFER_SYNTAX_UID]) if TRANSFER_SYNTAX_UID in meta else None
        if syntax is None:
            raise MissingTag(TRANSFER_SYNTAX_UID)
        if syntax not in SUPPORTED_TRANSFER_SYNTAXES:
            raise UnsupportedTransferSyntax(f"transfer syntax {syntax} is not supported",
                                            details={"transfer_syntax": syntax})
        reader = _Reader(data, meta_reader.pos, explicit_vr=syntax == EXPLICIT_VR_LITTLE_ENDIAN)
    else:
        if len(data) < 8:
            raise MalformedElement("buffer too short for a data element")
        reader = _Reader(data, 0, explicit_vr=_looks_explicit(data, 0))

    elements = _read_elements(reader)

    rows = _decode_us(ROWS, _require(elements, ROWS))
    cols = _decode_us(COLUMNS, _require(elements, COLUMNS))
    bits = _decode_us(BITS_ALLOCATED, _require(elements, BITS_ALLOCATED))
    representation = _decode_us(PIXEL_REPRESENTATION, _require(elements, PIXEL_REPRESENTATION))
    spacing = _decode_ds(PIXEL_SPACING, _require(elements, PIXEL_SPACING))
    thickness = _decode_ds(SLICE_THICKNESS, _require(elements, SLICE_THICKNESS))
    position = _decode_ds(IMAGE_POSITION_PATIENT, _require(elements, IMAGE_POSITION_PATIENT))
    pixel_bytes = _require(elements, PIXEL_DATA)

    slope = _decode_ds(RESCALE_SLOPE, elements[RESCALE_SLOPE])[0] if RESCALE_SLOPE in elements else 1.0
    intercept = (_decode_ds(RESCALE_INTERCEPT, elements[RESCALE_INTERCEPT])[0]
                 if RESCALE_INTERCEPT in elements else 0.0)

    if len(spacing) < 2 or len(position) < 3 or not thickness:
        raise MalformedElement("PixelSpacing, ImagePositionPatient or SliceThickness has too few values")
    if bits != 16:
        raise UnsupportedPixelFormat(f"BitsAllocated {bits} is not supported (16 only)",
                                     details={"bits_allocated": bits})

    count = rows * cols
    if len(pixel_bytes) < 2 * count:
        raise MalformedElement(f"PixelData holds {len(pixel_bytes)} bytes, {2 * count} needed")
    dtype = "<i2" if representation == 1 else "<u2"
    raw = np.frombuffer(pixel_bytes, dtype=dtype, count=count).reshape(rows, cols)

    return DicomSlice(
        rows=rows,
        cols=cols,
        bits_allocated=bits,
        pixel_representation=representation,
        rescale_slope=slope,
        rescale_intercept=intercept,
        pixel_spacing=(spacing[0], spacing[1]),
        slice_thickness_mm=thickness[0],
        image_position_z_mm=position[2],
        raw_pixels=raw,
    )


def assemble_series(slices: Sequence[DicomSlice]) -> Tuple[HuVolume, SeriesMeta]:
    """
    Stack slices into an HU volume.

    Slices are sorted by z; each raw value becomes
    ``round(slope * raw + intercept)`` clamped to [-1024, 3071]. The slice
    spacing is the median z gap.

    Raises:
        InsufficientSlices, InconsistentGeometry, DuplicateSlicePosition, NonUniformSpacing
    """
    if len(slices) < 2:
        raise InsufficientSlices(f"a series needs at least 2 slices, got {len(slices)}")

    first = slices[0]
    for s in slices[1:]:
        if (s.rows, s.cols) != (first.rows, first.cols) or any(
            abs(a - b) > 1e-6 for a, b in zip(s.pixel_spacing, first.pixel_spacing)
        ):
            raise InconsistentGeometry(
                f"slice geometry {s.rows}x{s.cols} @ {s.pixel_spacing} differs from "
                f"{first.rows}x{first.cols} @ {first.pixel_spacing}"
            )

    ordered = sorted(slices, key=lambda s: s.image_position_z_mm)
    z = np.array([s.image_position_z_mm for s in ordered], dtype=np.float64)
    gaps = np.diff(z)
    if np.any(gaps <= 0):
        at = float(z[1:][gaps <= 0][0])
        raise DuplicateSlicePosition(f"two slices at z = {at} mm", details={"z_mm": at})

    median_gap = float(np.median(gaps))
    deviation = np.abs(gaps - median_gap) / median_gap
    if np.any(deviation > SLICE_GAP_TOLERANCE):
        worst = float(gaps[np.argmax(deviation)])
        raise NonUniformSpacing(
            f"slice gap {worst} mm deviates more than {SLICE_GAP_TOLERANCE:.0%} from median {median_gap} mm",
            details={"gap_mm": worst, "median_mm": median_gap},
        )

    hu = np.empty((len(ordered), first.rows, first.cols), dtype=np.int16)
    for k, s in enumerate(ordered):
        hu[k] = to_hu(s.rescale_slope * s.raw_pixels.astype(np.float64) + s.rescale_intercept)

    row_mm, col_mm = first.pixel_spacing
    volume = HuVolume(voxels=hu, spacing_mm=(median_gap, row_mm, col_mm))
    meta = SeriesMeta(
        slice_spacing_mm=median_gap,
        in_plane_spacing_mm=(row_mm, col_mm),
        slice_count=len(ordered),
        z_positions_mm=tuple(float(v) for v in z),
    )
    return volume, meta


def read_series_directory(path: Union[str, Path]) -> List[DicomSlice]:
    """
    Parse every non-hidden regular file of a series directory.

    Files are visited in name order; the result order does not matter to
    `assemble_series`, which sorts by position.
    """
    path = Path(path)
    if not path.is_dir():
        raise SeriesNotFound(f"series directory {path} does not exist", details={"path": str(path)})
    files = sorted(p for p in path.iterdir() if p.is_file() and not p.name.startswith("."))
    if not files:
        raise SeriesNotFound(f"series directory {path} holds no files", details={"path": str(path)})
    logger.debug(f"Parsing {len(files)} slice files from {path}")
    slices = []
    for file in files:
        try:
            slices.append(parse_dicom_file(file.read_bytes()))
        except DicomError as e:
            e.details.setdefault("file", os.fspath(file))
            raise
    return slices


def load_series(path: Union[str, Path]) -> Tuple[HuVolume, SeriesMeta]:
    """Read and assemble a series directory."""
    return assemble_series(read_series_directory(path))
