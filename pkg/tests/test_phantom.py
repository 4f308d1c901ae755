"""
Tests for the synthetic phantom generator.
"""
import numpy as np
import pandas as pd
import pytest

from src.imaging.dicom_ingest import load_series
from src.phantom.dicom_writer import encode_dicom_slice, hu_to_raw, make_uid
from src.phantom.generator import (
    AIR_HU,
    BODY_HU,
    FEATURE_COLUMNS,
    LUNG_HU,
    Ellipsoid,
    InvalidSpec,
    Nodule,
    PhantomSpec,
    cohort_labels,
    generate_cohort,
    generate_phantom,
    rasterize_lungs,
    render_phantom,
)
from tests.conftest import SMALL_DIMS, SMALL_SPACING_MM


def _nearest_voxel(point_mm, spacing_mm):
    return tuple(int(round(p / s)) for p, s in zip(point_mm, spacing_mm))


class TestRenderPhantom:
    """Tests for render_phantom."""

    def test_tissue_values_without_noise(self, small_positive_spec):
        spec = small_positive_spec.model_copy(update={"noise_sigma_hu": 0.0})
        hu, truth = render_phantom(spec)
        assert hu.shape == spec.dims
        assert hu.dtype == np.int16
        assert hu[0, 0, 0] == AIR_HU
        assert hu[_nearest_voxel(spec.body.center_mm, spec.spacing_mm)] in (BODY_HU, LUNG_HU)
        for lung in spec.lungs:
            assert hu[_nearest_voxel(lung.center_mm, spec.spacing_mm)] in (LUNG_HU, spec.nodules[0].hu)
        nodule = spec.nodules[0]
        assert hu[_nearest_voxel(nodule.center_mm, spec.spacing_mm)] == nodule.hu
        assert truth.label == 1
        assert set(np.unique(hu)) <= {AIR_HU, BODY_HU, LUNG_HU, nodule.hu}

    def test_lung_mask_matches_lung_voxels(self, small_spec):
        spec = small_spec.model_copy(update={"noise_sigma_hu": 0.0})
        hu, truth = render_phantom(spec)
        np.testing.assert_array_equal(truth.lung_mask.bits, hu == LUNG_HU)
        assert truth.label == 0
        assert truth.lung_mask == rasterize_lungs(spec)

    def test_rendering_is_deterministic(self, small_spec):
        first, _ = render_phantom(small_spec)
        second, _ = render_phantom(small_spec)
        np.testing.assert_array_equal(first, second)

    def test_noise_depends_on_case_id(self, small_spec):
        other = small_spec.model_copy(update={"case_id": "another"})
        assert not np.array_equal(render_phantom(small_spec)[0], render_phantom(other)[0])

    def test_features(self, small_spec, small_positive_spec):
        _, negative = render_phantom(small_spec)
        _, positive = render_phantom(small_positive_spec)
        assert list(negative.features.as_row()) == FEATURE_COLUMNS
        assert 0.0 < negative.features.lung_volume_fraction < 1.0
        assert negative.features.mean_lung_hu == pytest.approx(LUNG_HU, abs=5.0)
        assert positive.features.max_blob_hu > negative.features.max_blob_hu + 50.0


class TestPhantomSpec:
    """Containment checks."""

    def _spec(self, **overrides):
        body = Ellipsoid(center_mm=(50.0, 50.0, 50.0), semi_axes_mm=(40.0, 40.0, 40.0))
        lungs = (
            Ellipsoid(center_mm=(50.0, 50.0, 35.0), semi_axes_mm=(20.0, 15.0, 10.0)),
            Ellipsoid(center_mm=(50.0, 50.0, 65.0), semi_axes_mm=(20.0, 15.0, 10.0)),
        )
        fields = dict(dims=(20, 20, 20), spacing_mm=(5.0, 5.0, 5.0), body=body, lungs=lungs, noise_sigma_hu=0.0)
        fields.update(overrides)
        return PhantomSpec(**fields)

    def test_valid_spec(self):
        spec = self._spec(nodules=(Nodule(center_mm=(50.0, 50.0, 35.0), radius_mm=4.0, hu=20),))
        assert spec.check() is spec

    def test_lung_outside_body(self):
        lung = Ellipsoid(center_mm=(50.0, 50.0, 85.0), semi_axes_mm=(20.0, 15.0, 10.0))
        with pytest.raises(InvalidSpec):
            self._spec(lungs=(self._spec().lungs[0], lung)).check()

    def test_nodule_crossing_lung_wall(self):
        nodule = Nodule(center_mm=(50.0, 50.0, 44.0), radius_mm=4.0, hu=20)
        with pytest.raises(InvalidSpec):
            render_phantom(self._spec(nodules=(nodule,)))

    def test_nodule_hu_range(self):
        nodule = Nodule(center_mm=(50.0, 50.0, 35.0), radius_mm=4.0, hu=300)
        with pytest.raises(InvalidSpec):
            self._spec(nodules=(nodule,)).check()

    def test_negative_noise(self):
        with pytest.raises(InvalidSpec):
            self._spec(noise_sigma_hu=-1.0).check()


class TestDicomWriter:
    """Tests for the DICOM writer helpers."""

    def test_uids_are_deterministic(self):
        assert make_uid("series", "a") == make_uid("series", "a")
        assert make_uid("series", "a") != make_uid("series", "b")
        uid = make_uid("x")
        assert uid.startswith("2.25.") and len(uid) <= 64

    def test_hu_to_raw(self):
        np.testing.assert_array_equal(hu_to_raw(np.array([-1024, 0, 3071])), [0, 1024, 4095])
        with pytest.raises(ValueError):
            hu_to_raw(np.array([-2000]))

    def test_encoding_is_deterministic(self):
        raw = np.arange(12, dtype=np.uint16).reshape(3, 4)
        assert encode_dicom_slice(raw, (1.0, 1.0), 2.0, 4.0) == encode_dicom_slice(raw, (1.0, 1.0), 2.0, 4.0)

    def test_unsupported_syntax(self):
        with pytest.raises(ValueError):
            encode_dicom_slice(np.zeros((2, 2)), (1.0, 1.0), 1.0, 0.0, transfer_syntax="1.2.840.10008.1.2.2")


class TestGeneratePhantom:
    """Tests for the on-disk phantom and cohort writers."""

    def test_round_trip_is_exact_without_noise(self, tmp_path, small_positive_spec):
        spec = small_positive_spec.model_copy(update={"noise_sigma_hu": 0.0})
        series_dir, truth = generate_phantom(spec, tmp_path / "case")
        vol, _ = load_series(series_dir)
        hu, _ = render_phantom(spec)
        np.testing.assert_array_equal(vol.voxels, hu)
        lung_center = _nearest_voxel(spec.lungs[0].center_mm, spec.spacing_mm)
        assert vol.voxels[lung_center] in (LUNG_HU, spec.nodules[0].hu)

    def test_files_are_byte_identical(self, tmp_path, small_spec):
        a, _ = generate_phantom(small_spec, tmp_path / "a")
        b, _ = generate_phantom(small_spec, tmp_path / "b")
        names = sorted(p.name for p in a.iterdir())
        assert len(names) == small_spec.dims[0]
        assert names == sorted(p.name for p in b.iterdir())
        for name in names:
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_cohort_labels(self):
        labels = cohort_labels(100, 0.34, seed=1)
        assert sum(labels) == 34
        assert cohort_labels(100, 0.34, seed=1) == labels
        assert sum(cohort_labels(10, 0.0, seed=1)) == 0
        assert sum(cohort_labels(10, 1.0, seed=1)) == 10
        with pytest.raises(ValueError):
            cohort_labels(10, 1.5)

    def test_cohort_layout(self, small_cohort):
        out, cases = small_cohort
        manifest = pd.read_csv(out / "manifest.csv", dtype=str)
        assert manifest.columns.tolist() == ["case_id", "path", "label"]
        assert manifest["case_id"].tolist() == [f"case_{i:04d}" for i in range(10)]
        assert manifest["label"].astype(int).sum() == 3
        for case, path in zip(cases, manifest["path"]):
            assert (out / path).is_dir()
            assert case.path == path
        features = pd.read_csv(out / "features.csv")
        assert features.columns.tolist() == ["case_id", "label", *FEATURE_COLUMNS]
        assert features["label"].tolist() == [c.label for c in cases]

    def test_cohort_independent_of_workers(self, tmp_path):
        kwargs = dict(n=3, positive_frac=0.34, seed=5, dims=SMALL_DIMS, spacing_mm=SMALL_SPACING_MM)
        generate_cohort(tmp_path / "one", workers=1, **kwargs)
        generate_cohort(tmp_path / "two", workers=2, **kwargs)
        for case in ("case_0000", "case_0001", "case_0002"):
            left = sorted((tmp_path / "one" / "cases" / case).iterdir())
            right = sorted((tmp_path / "two" / "cases" / case).iterdir())
            assert [p.name for p in left] == [p.name for p in right]
            assert all(a.read_bytes() == b.read_bytes() for a, b in zip(left, right))
        assert (tmp_path / "one" / "features.csv").read_bytes() == (tmp_path / "two" / "features.csv").read_bytes()
