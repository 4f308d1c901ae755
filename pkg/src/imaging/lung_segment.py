"""
Coarse lung segmentation.

The lungs are found as the largest air pockets that do not connect to
the volume border: threshold air, label connected components, drop
everything touching a boundary face, keep the two largest survivors and
close small holes (vessels, nodules). The bounding box of the result
gives the crop center.
"""
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import ndimage

from src.imaging.volume_core import HuVolume
from src.utils.error_handling import LungRiskError

logger = logging.getLogger(__name__)

Index3 = Tuple[int, int, int]

DEFAULT_THRESHOLD_HU = -320
DEFAULT_CLOSE_RADIUS = 2
DEFAULT_CONNECTIVITY = 6


class SegmentationError(LungRiskError):
    """Base class for segmentation errors."""


class SegmentationEmpty(SegmentationError):
    """No air component remains after removing border-connected ones."""


class EmptyMask(SegmentationError, ValueError):
    """A bounding box was requested for a mask without set voxels."""


class ShapeMismatch(SegmentationError, ValueError):
    """Mask, label map and volume dims disagree."""


@dataclass(frozen=True)
class Mask:
    """Dense boolean grid, depth-major."""
    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.array(self.bits, dtype=bool, copy=True)
        if bits.ndim != 3:
            raise ShapeMismatch(f"mask must be 3D, got shape {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def dims(self) -> Index3:
        return tuple(int(d) for d in self.bits.shape)  # type: ignore[return-value]

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Mask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)


@dataclass(frozen=True)
class LabelMap:
    """Component labels: 0 is background, 1..component_count in scan order."""
    labels: np.ndarray
    component_count: int

    @property
    def dims(self) -> Index3:
        return tuple(int(d) for d in self.labels.shape)  # type: ignore[return-value]


@dataclass(frozen=True)
class BBox:
    """Inclusive voxel bounds and the floor midpoint."""
    min: Index3
    max: Index3

    @property
    def center(self) -> Index3:
        return tuple((a + b) // 2 for a, b in zip(self.min, self.max))  # type: ignore[return-value]


@dataclass(frozen=True)
class SegmentationResult:
    mask: Mask
    bbox: BBox


def binarize_air(vol: HuVolume, threshold_hu: int = DEFAULT_THRESHOLD_HU) -> Mask:
    """Set every voxel whose HU is strictly below the threshold."""
    return Mask(vol.voxels < threshold_hu)


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


def connected_components(mask: Mask, connectivity: int = DEFAULT_CONNECTIVITY) -> LabelMap:
    """
    Label connected set voxels.

    Labels are renumbered by first encounter in depth-major scan order, so
    the result does not depend on how the labelling backend numbers
    provisional components.
    """
    raw, count = ndimage.label(mask.bits, structure=_structure(connectivity))
    if count == 0:
        return LabelMap(labels=np.zeros(mask.dims, dtype=np.int32), component_count=0)

    flat = raw.ravel()
    present, first_index = np.unique(flat, return_index=True)
    fg = present > 0
    order = present[fg][np.argsort(first_index[fg], kind="stable")]
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[order] = np.arange(1, len(order) + 1, dtype=np.int32)
    return LabelMap(labels=remap[raw], component_count=int(count))


def _border_labels(labels: np.ndarray) -> np.ndarray:
    faces = [
        labels[0], labels[-1],
        labels[:, 0], labels[:, -1],
        labels[:, :, 0], labels[:, :, -1],
    ]
    touching = np.unique(np.concatenate([f.ravel() for f in faces]))
    return touching[touching > 0]


def extract_lung_mask(labels: LabelMap, vol_dims: Sequence[int]) -> Mask:
    """
    Keep the (up to) two largest components that do not touch the border.

    Raises:
        SegmentationEmpty: If every component touches a boundary face
    """
    if tuple(vol_dims) != labels.dims:
        raise ShapeMismatch(f"label map dims {labels.dims} differ from volume dims {tuple(vol_dims)}")

    sizes = np.bincount(labels.labels.ravel(), minlength=labels.component_count + 1)
    interior = np.ones(labels.component_count + 1, dtype=bool)
    interior[0] = False
    interior[_border_labels(labels.labels)] = False
    candidates = np.flatnonzero(interior)
    if candidates.size == 0:
        raise SegmentationEmpty(
            "no interior air component remains after removing border-connected air",
            details={"components": labels.component_count},
        )

    # Largest first; ties keep the earlier label
    ranked = candidates[np.lexsort((candidates, -sizes[candidates]))]
    keep = ranked[:2]
    logger.debug(f"Keeping components {keep.tolist()} of sizes {sizes[keep].tolist()}")
    return Mask(np.isin(labels.labels, keep))


def ball(radius: int) -> np.ndarray:
    """Discrete ball: offsets with z^2 + y^2 + x^2 <= r^2."""
    r = int(radius)
    z, y, x = np.ogrid[-r:r + 1, -r:r + 1, -r:r + 1]
    return (z * z + y * y + x * x) <= r * r


def morphological_close(mask: Mask, radius_voxels: int = DEFAULT_CLOSE_RADIUS) -> Mask:
    """
    Dilate then erode by a discrete ball. Radius 0 is the identity.

    Outside the grid counts as unset for both steps, so set voxels within
    `radius_voxels` of the border may be removed by the erosion.
    """
    if radius_voxels < 0:
        raise ValueError(f"radius must be >= 0, got {radius_voxels}")
    if radius_voxels == 0 or not mask.bits.any():
        return Mask(mask.bits)
    return Mask(ndimage.binary_closing(mask.bits, structure=ball(radius_voxels)))


def bounding_box(mask: Mask) -> BBox:
    """
    Tight axis-aligned bounds of the set voxels.

    Raises:
        EmptyMask: If no voxel is set
    """
    coords = np.argwhere(mask.bits)
    if coords.size == 0:
        raise EmptyMask("bounding box of an empty mask")
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    return BBox(min=tuple(int(v) for v in lo), max=tuple(int(v) for v in hi))  # type: ignore[arg-type]


def dice(a: Mask, b: Mask) -> float:
    """2|A∩B| / (|A|+|B|); two empty masks score 1."""
    if a.dims != b.dims:
        raise ShapeMismatch(f"dice of masks with dims {a.dims} and {b.dims}")
    total = a.count + b.count
    if total == 0:
        return 1.0
    return 2.0 * float(np.count_nonzero(a.bits & b.bits)) / float(total)


def segment_lungs(
    vol: HuVolume,
    threshold_hu: int = DEFAULT_THRESHOLD_HU,
    close_radius: int = DEFAULT_CLOSE_RADIUS,
    connectivity: int = DEFAULT_CONNECTIVITY,
) -> SegmentationResult:
    """
    Full coarse segmentation: binarize, label, extract, close, bound.

    Raises:
        SegmentationEmpty: If no interior air component exists
    """
    air = binarize_air(vol, threshold_hu)
    labels = connected_components(air, connectivity)
    lungs = extract_lung_mask(labels, vol.dims)
    closed = morphological_close(lungs, close_radius)
    if not closed.bits.any():
        # only possible when every lung voxel lies within the radius of the border
        closed = lungs
    bbox = bounding_box(closed)
    logger.debug(f"Lung bbox {bbox.min}..{bbox.max}, center {bbox.center}")
    return SegmentationResult(mask=closed, bbox=bbox)
