"""
Synthetic thorax phantoms with exact ground truth.

A phantom is a body ellipsoid holding two lung ellipsoids, optionally
with spherical nodules inside a lung. Voxel ``(k, j, i)`` sits at
``(k * dz, j * dy, i * dx)`` mm, the same convention the resampler uses,
so ground truth can be rasterized on any grid.

Tissue values: +40 HU body, -850 HU lung, nodules in [-100, 100] HU,
-1000 HU outside the body, plus seeded Gaussian noise.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage

from src.imaging.dicom_ingest import EXPLICIT_VR_LITTLE_ENDIAN
from src.imaging.lung_segment import BBox, Mask, bounding_box
from src.phantom.dicom_writer import write_series
from src.utils.error_handling import LungRiskError
from src.utils.numeric import round_half_away, to_hu
from src.utils.random import derive_seed, seeded_permutation

logger = logging.getLogger(__name__)

Triple = Tuple[float, float, float]

BODY_HU = 40
LUNG_HU = -850
AIR_HU = -1000
NODULE_HU_RANGE = (-100, 100)
DEFAULT_NOISE_SIGMA_HU = 20.0

DEFAULT_COHORT_DIMS = (96, 96, 96)
DEFAULT_COHORT_SPACING_MM = (2.5, 2.0, 2.0)
DEFAULT_POSITIVE_FRAC = 0.34

MANIFEST_NAME = "manifest.csv"
FEATURES_NAME = "features.csv"
FEATURE_COLUMNS = ["lung_volume_fraction", "mean_lung_hu", "max_blob_hu"]

# Points per unit sphere used to check containment of one solid in another
_SURFACE_SAMPLES = 2000


class InvalidSpec(LungRiskError, ValueError):
    """Phantom geometry violates a containment or positivity rule."""


class Ellipsoid(BaseModel):
    model_config = ConfigDict(frozen=True)

    center_mm: Triple
    semi_axes_mm: Triple

    def normalized_radius(self, points: np.ndarray) -> np.ndarray:
        """Squared normalized radius of (..., 3) points; < 1 inside."""
        d = (points - np.asarray(self.center_mm)) / np.asarray(self.semi_axes_mm)
        return np.sum(d * d, axis=-1)

    def surface(self) -> np.ndarray:
        return np.asarray(self.center_mm) + _unit_sphere() * np.asarray(self.semi_axes_mm)


class Nodule(BaseModel):
    model_config = ConfigDict(frozen=True)

    center_mm: Triple
    radius_mm: float
    hu: int = Field(default=0, description="Nodule density in HU")

    def surface(self) -> np.ndarray:
        return np.asarray(self.center_mm) + _unit_sphere() * self.radius_mm


class PhantomSpec(BaseModel):
    """
    Geometry and acquisition parameters of one phantom.

    Coordinates and spacing are (z, y, x) in mm. Call :meth:`check`
    before rendering; :func:`render_phantom` does so itself.
    """
    model_config = ConfigDict(frozen=True)

    case_id: str = Field(default="phantom", description="Case identifier, also keys the noise stream")
    dims: Tuple[int, int, int] = Field(default=DEFAULT_COHORT_DIMS, description="(slices, rows, cols)")
    spacing_mm: Triple = Field(default=DEFAULT_COHORT_SPACING_MM, description="(dz, dy, dx) in mm")
    body: Ellipsoid
    lungs: Tuple[Ellipsoid, Ellipsoid]
    nodules: Tuple[Nodule, ...] = ()
    noise_sigma_hu: float = Field(default=DEFAULT_NOISE_SIGMA_HU, description="Gaussian noise sigma")
    seed: int = Field(default=0, description="Run seed")

    def check(self) -> "PhantomSpec":
        """
        Raises:
            InvalidSpec: Non-positive sizes, lungs not strictly inside the
                body, or a nodule not strictly inside a lung
        """
        if min(self.dims) < 1 or min(self.spacing_mm) <= 0:
            raise InvalidSpec(f"dims and spacing must be positive, got {self.dims} @ {self.spacing_mm}")
        if self.noise_sigma_hu < 0:
            raise InvalidSpec(f"noise sigma must be >= 0, got {self.noise_sigma_hu}")
        for solid in (self.body, *self.lungs):
            if min(solid.semi_axes_mm) <= 0:
                raise InvalidSpec(f"semi-axes must be > 0, got {solid.semi_axes_mm}")
        for side, lung in enumerate(self.lungs):
            if np.max(self.body.normalized_radius(lung.surface())) >= 1.0:
                raise InvalidSpec(f"lung {side} is not strictly inside the body",
                                  details={"lung": side})
        for n, nodule in enumerate(self.nodules):
            if nodule.radius_mm <= 0:
                raise InvalidSpec(f"nodule {n} radius must be > 0, got {nodule.radius_mm}")
            lo, hi = NODULE_HU_RANGE
            if not lo <= nodule.hu <= hi:
                raise InvalidSpec(f"nodule {n} HU {nodule.hu} outside [{lo}, {hi}]")
            points = nodule.surface()
            if not any(np.max(lung.normalized_radius(points)) < 1.0 for lung in self.lungs):
                raise InvalidSpec(f"nodule {n} is not strictly inside a lung", details={"nodule": n})
        return self


@dataclass(frozen=True)
class PhantomFeatures:
    lung_volume_fraction: float
    mean_lung_hu: float
    max_blob_hu: float

    def as_row(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in FEATURE_COLUMNS}


@dataclass(frozen=True)
class PhantomTruth:
    """Ground truth of a rendered phantom; `label` is 1 iff a nodule exists."""
    lung_mask: Mask
    lung_bbox: BBox
    label: int
    features: PhantomFeatures
    nodules: Tuple[Nodule, ...] = field(default=())


def _unit_sphere() -> np.ndarray:
    """Fibonacci lattice on the unit sphere, (n, 3) in (z, y, x)."""
    i = np.arange(_SURFACE_SAMPLES, dtype=np.float64) + 0.5
    z = 1.0 - 2.0 * i / _SURFACE_SAMPLES
    r = np.sqrt(1.0 - z * z)
    theta = np.pi * (1.0 + 5.0 ** 0.5) * i
    return np.stack([z, r * np.sin(theta), r * np.cos(theta)], axis=-1)


def _grid(dims: Sequence[int], spacing_mm: Sequence[float]) -> List[np.ndarray]:
    return [
        (np.arange(n, dtype=np.float64) * s).reshape([-1 if a == axis else 1 for a in range(3)])
        for axis, (n, s) in enumerate(zip(dims, spacing_mm))
    ]


def _inside(center: Sequence[float], semi_axes: Sequence[float], grid: List[np.ndarray]) -> np.ndarray:
    total = sum(((g - c) / a) ** 2 for g, c, a in zip(grid, center, semi_axes))
    return total <= 1.0


def _regions(spec: PhantomSpec, dims: Sequence[int], spacing_mm: Sequence[float]):
    grid = _grid(dims, spacing_mm)
    body = np.broadcast_to(_inside(spec.body.center_mm, spec.body.semi_axes_mm, grid), tuple(dims))
    lungs = np.zeros(tuple(dims), dtype=bool)
    for lung in spec.lungs:
        lungs |= _inside(lung.center_mm, lung.semi_axes_mm, grid)
    nodule_masks = [
        np.broadcast_to(_inside(n.center_mm, (n.radius_mm,) * 3, grid), tuple(dims)) for n in spec.nodules
    ]
    return body, lungs, nodule_masks


def rasterize_lungs(spec: PhantomSpec, dims: Optional[Sequence[int]] = None,
                    spacing_mm: Optional[Sequence[float]] = None) -> Mask:
    """Lung parenchyma (lungs minus nodules) sampled on any grid; defaults to the phantom's own grid."""
    dims = tuple(dims or spec.dims)
    spacing_mm = tuple(spacing_mm or spec.spacing_mm)
    _, lungs, nodule_masks = _regions(spec, dims, spacing_mm)
    parenchyma = lungs.copy()
    for nodule in nodule_masks:
        parenchyma &= ~nodule
    return Mask(parenchyma)


def render_phantom(spec: PhantomSpec) -> Tuple[np.ndarray, PhantomTruth]:
    """
    Render the HU grid and its ground truth without touching the filesystem.

    Noise is drawn from a generator seeded with
    ``derive_seed(spec.seed, case_id + "/noise")``, so a case renders the
    same whatever else runs alongside it.
    """
    spec.check()
    body, lungs, nodule_masks = _regions(spec, spec.dims, spec.spacing_mm)

    hu = np.full(spec.dims, AIR_HU, dtype=np.float64)
    hu[body] = BODY_HU
    hu[lungs] = LUNG_HU
    for nodule, inside in zip(spec.nodules, nodule_masks):
        hu[inside] = nodule.hu
    if spec.noise_sigma_hu > 0:
        rng = np.random.default_rng(derive_seed(spec.seed, f"{spec.case_id}/noise"))
        hu += rng.normal(0.0, spec.noise_sigma_hu, size=hu.shape)
    hu_grid = to_hu(hu)

    parenchyma = lungs.copy()
    for inside in nodule_masks:
        parenchyma &= ~inside
    lung_mask = Mask(parenchyma)

    # 3x3x3 means whose window lies wholly inside the lungs
    interior = ndimage.binary_erosion(lungs, structure=np.ones((3, 3, 3), dtype=bool))
    region = interior if interior.any() else lungs
    blob = ndimage.uniform_filter(hu_grid.astype(np.float64), size=3, mode="nearest")
    features = PhantomFeatures(
        lung_volume_fraction=float(np.count_nonzero(parenchyma)) / float(max(np.count_nonzero(body), 1)),
        mean_lung_hu=float(hu_grid[parenchyma].mean()) if parenchyma.any() else float(AIR_HU),
        max_blob_hu=float(blob[region].max()) if region.any() else float(AIR_HU),
    )
    truth = PhantomTruth(
        lung_mask=lung_mask,
        lung_bbox=bounding_box(lung_mask),
        label=1 if spec.nodules else 0,
        features=features,
        nodules=tuple(spec.nodules),
    )
    return hu_grid, truth


def generate_phantom(
    spec: PhantomSpec,
    out_dir: Union[str, Path],
    transfer_syntax: str = EXPLICIT_VR_LITTLE_ENDIAN,
    preamble: bool = True,
) -> Tuple[Path, PhantomTruth]:
    """
    Write a phantom as a DICOM series directory.

    Raw values are ``HU + 1024`` with intercept -1024, so reading the
    series back reproduces the rendered HU grid exactly.
    """
    hu, truth = render_phantom(spec)
    out_dir = Path(out_dir)
    write_series(hu, spec.spacing_mm, out_dir, series_key=f"{spec.seed}/{spec.case_id}",
                 transfer_syntax=transfer_syntax, preamble=preamble)
    return out_dir, truth


def default_body(dims: Sequence[int] = DEFAULT_COHORT_DIMS,
                 spacing_mm: Sequence[float] = DEFAULT_COHORT_SPACING_MM) -> Ellipsoid:
    """Body ellipsoid of the default family, scaled to the grid extent."""
    extent = np.array([(n - 1) * s for n, s in zip(dims, spacing_mm)])
    reference = np.array([(n - 1) * s for n, s in zip(DEFAULT_COHORT_DIMS, DEFAULT_COHORT_SPACING_MM)])
    semi = np.array([100.0, 75.0, 85.0]) * extent / reference
    return Ellipsoid(center_mm=tuple(extent / 2.0), semi_axes_mm=tuple(semi))


def sample_case_spec(
    case_id: str,
    label: int,
    seed: int,
    dims: Sequence[int] = DEFAULT_COHORT_DIMS,
    spacing_mm: Sequence[float] = DEFAULT_COHORT_SPACING_MM,
    noise_sigma_hu: float = DEFAULT_NOISE_SIGMA_HU,
) -> PhantomSpec:
    """
    Draw a randomized member of the default phantom family.

    Lung semi-axes vary by up to 8% and centers by up to 3 mm; positive
    cases get one nodule of radius 5-10 mm placed in a random lung.
    """
    rng = np.random.default_rng(derive_seed(seed, f"{case_id}/geometry"))
    body = default_body(dims, spacing_mm)
    scale = np.asarray(body.semi_axes_mm) / np.array([100.0, 75.0, 85.0])
    center = np.asarray(body.center_mm)

    lungs = []
    for side in (-1.0, 1.0):
        offset = np.array([0.0, 0.0, side * 38.0]) * scale
        jitter = rng.uniform(-3.0, 3.0, size=3)
        semi = np.array([70.0, 50.0, 30.0]) * scale * rng.uniform(0.92, 1.08, size=3)
        lungs.append(Ellipsoid(center_mm=tuple(center + offset + jitter), semi_axes_mm=tuple(semi)))

    nodules: Tuple[Nodule, ...] = ()
    if label:
        lung = lungs[int(rng.integers(0, 2))]
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        # half-scale interior point: a ball of radius min_semi/2 around it stays in the lung
        u = direction * rng.uniform(0.0, 1.0) ** (1.0 / 3.0) * 0.5
        radius = min(rng.uniform(5.0, 10.0), 0.45 * min(lung.semi_axes_mm))
        nodules = (
            Nodule(
                center_mm=tuple(np.asarray(lung.center_mm) + u * np.asarray(lung.semi_axes_mm)),
                radius_mm=float(radius),
                hu=int(rng.integers(NODULE_HU_RANGE[0], NODULE_HU_RANGE[1] + 1)),
            ),
        )

    return PhantomSpec(
        case_id=case_id,
        dims=tuple(int(n) for n in dims),
        spacing_mm=tuple(float(s) for s in spacing_mm),
        body=body,
        lungs=(lungs[0], lungs[1]),
        nodules=nodules,
        noise_sigma_hu=noise_sigma_hu,
        seed=seed,
    )


def cohort_labels(n: int, positive_frac: float = DEFAULT_POSITIVE_FRAC, seed: int = 0) -> List[int]:
    """Exactly ``round(n * positive_frac)`` ones, placed by the seeded permutation."""
    if not 0.0 <= positive_frac <= 1.0:
        raise ValueError(f"positive_frac must lie in [0, 1], got {positive_frac}")
    positives = int(round_half_away(n * positive_frac))
    labels = [0] * n
    for index in seeded_permutation(n, seed)[:positives]:
        labels[int(index)] = 1
    return labels


@dataclass(frozen=True)
class CohortCase:
    case_id: str
    path: str
    label: int
    features: PhantomFeatures


def _generate_case(args: Tuple[PhantomSpec, str, str]) -> PhantomFeatures:
    spec, case_dir, transfer_syntax = args
    _, truth = generate_phantom(spec, case_dir, transfer_syntax=transfer_syntax)
    return truth.features


def generate_cohort(
    out_dir: Union[str, Path],
    n: int,
    positive_frac: float = DEFAULT_POSITIVE_FRAC,
    seed: int = 0,
    dims: Sequence[int] = DEFAULT_COHORT_DIMS,
    spacing_mm: Sequence[float] = DEFAULT_COHORT_SPACING_MM,
    noise_sigma_hu: float = DEFAULT_NOISE_SIGMA_HU,
    workers: int = 1,
    transfer_syntax: str = EXPLICIT_VR_LITTLE_ENDIAN,
) -> List[CohortCase]:
    """
    Write a labelled cohort: one series directory per case under
    ``cases/``, plus ``manifest.csv`` (``case_id,path,label``, paths
    relative to the manifest) and ``features.csv``.

    Every case is seeded from ``(seed, case_id)``, so the files do not
    depend on `workers`.
    """
    if n < 0:
        raise ValueError(f"cohort size must be >= 0, got {n}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = cohort_labels(n, positive_frac, seed)

    jobs = []
    rel_paths = []
    for index, label in enumerate(labels):
        case_id = f"case_{index:04d}"
        spec = sample_case_spec(case_id, label, seed, dims, spacing_mm, noise_sigma_hu)
        rel = f"cases/{case_id}"
        rel_paths.append(rel)
        jobs.append((spec, str(out_dir / rel), transfer_syntax))

    logger.info(f"Generating {n} phantom cases ({sum(labels)} positive) with {workers} worker(s)")
    if workers > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            features = list(pool.map(_generate_case, jobs))
    else:
        features = [_generate_case(job) for job in jobs]

    cases = [
        CohortCase(case_id=spec.case_id, path=rel, label=label, features=feat)
        for (spec, _, _), rel, label, feat in zip(jobs, rel_paths, labels, features)
    ]
    pd.DataFrame(
        [{"case_id": c.case_id, "path": c.path, "label": c.label} for c in cases],
        columns=["case_id", "path", "label"],
    ).to_csv(out_dir / MANIFEST_NAME, index=False)
    pd.DataFrame(
        [{"case_id": c.case_id, "label": c.label, **c.features.as_row()} for c in cases],
        columns=["case_id", "label", *FEATURE_COLUMNS],
    ).to_csv(out_dir / FEATURES_NAME, index=False)
    return cases
