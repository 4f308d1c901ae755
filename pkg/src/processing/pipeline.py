"""
Per-case preprocessing pipeline.

assemble -> resample -> segment -> window -> crop -> write. A volume
without an interior air component is not an error: the crop falls back to
the volume center and the case is flagged ``segmentation-fallback``.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

from src.config.run_config import RunConfig
from src.imaging.dicom_ingest import load_series
from src.imaging.lung_segment import SegmentationEmpty, segment_lungs
from src.imaging.resample import trilinear_resample
from src.imaging.volume_core import HuVolume, PreprocessedTensor, write_lvol
from src.imaging.window_crop import preprocess_volume, volume_center
from src.processing.report import STATUS_FALLBACK, STATUS_OK
from src.utils.error_handling import describe_error

logger = logging.getLogger(__name__)

LVOL_SUFFIX = ".lvol"


@dataclass(frozen=True)
class PreprocessOutcome:
    tensor: PreprocessedTensor
    status: str
    center: Tuple[int, int, int]
    resampled_dims: Tuple[int, int, int]
    message: str = ""


def preprocess_hu(vol: HuVolume, config: RunConfig) -> PreprocessOutcome:
    """Run every step after assembly on an in-memory HU volume."""
    resampled = trilinear_resample(vol, config.target_spacing_mm)
    status, message = STATUS_OK, ""
    try:
        segmentation = segment_lungs(
            resampled,
            threshold_hu=config.segmentation_threshold_hu,
            close_radius=config.close_radius,
            connectivity=config.connectivity,
        )
        center = segmentation.bbox.center
    except SegmentationEmpty as e:
        center = volume_center(resampled.dims)
        status, message = STATUS_FALLBACK, describe_error(e)
        logger.warning(f"Segmentation found no lungs, cropping at volume center {center}")

    tensor = preprocess_volume(
        resampled,
        center,
        crop_size=config.crop_size,
        window=(config.window_lo_hu, config.window_hi_hu),
    )
    return PreprocessOutcome(tensor=tensor, status=status, center=center,
                             resampled_dims=resampled.dims, message=message)


def output_path(out_dir: Union[str, Path], case_id: str) -> Path:
    return Path(out_dir) / f"{case_id}{LVOL_SUFFIX}"


def preprocess_case(case_id: str, series_dir: Union[str, Path], out_dir: Union[str, Path],
                    config: RunConfig) -> PreprocessOutcome:
    """
    Preprocess one series directory into ``<out_dir>/<case_id>.lvol``.

    Errors other than an empty segmentation propagate to the caller.
    """
    vol, meta = load_series(series_dir)
    logger.debug(f"{case_id}: {meta.slice_count} slices, spacing {vol.spacing_mm}")
    outcome = preprocess_hu(vol, config)
    write_lvol(outcome.tensor, output_path(out_dir, case_id))
    return outcome
