"""
Tests for the per-case pipeline, the batch runner and the run report.
"""
import time

import numpy as np
import pandas as pd
import pytest

from src.config.run_config import RunConfig
from src.imaging.dicom_ingest import SeriesNotFound, load_series
from src.imaging.lung_segment import bounding_box, dice, segment_lungs
from src.imaging.resample import trilinear_resample
from src.imaging.volume_core import HuVolume, load_tensor_trichannel, read_lvol
from src.phantom.generator import generate_cohort, generate_phantom, rasterize_lungs, sample_case_spec
from src.processing.batch_runner import preprocess_batch, read_manifest, read_manifest_frame
from src.processing.pipeline import output_path, preprocess_case, preprocess_hu
from src.processing.report import (
    REPORT_NAME,
    STATUS_ERROR,
    STATUS_FALLBACK,
    STATUS_OK,
    CaseReport,
    ReportSink,
    RunReport,
)
from src.utils.error_handling import ManifestError, ManifestNotFound


def _write_manifest(path, rows):
    pd.DataFrame(rows, columns=["case_id", "path", "label"]).to_csv(path, index=False)
    return path


def _absolute_manifest(tmp_path, cohort_dir, extra=()):
    """Copy of the cohort manifest with absolute paths, plus extra rows."""
    frame = pd.read_csv(cohort_dir / "manifest.csv", dtype=str)
    frame["path"] = [str(cohort_dir / p) for p in frame["path"]]
    rows = frame.to_dict("records") + list(extra)
    return _write_manifest(tmp_path / "manifest.csv", rows)


class TestPipeline:
    """Tests for preprocess_hu and preprocess_case."""

    def test_phantom_case(self, tmp_path, small_spec, fast_config):
        """Test a phantom series becomes a crop-sized tensor centered on the lungs."""
        series_dir, _ = generate_phantom(small_spec, tmp_path / "series")
        outcome = preprocess_case("case_neg", series_dir, tmp_path / "out", fast_config)
        assert outcome.status == STATUS_OK
        assert outcome.tensor.dims == fast_config.crop_size
        saved = read_lvol(output_path(tmp_path / "out", "case_neg"))
        assert saved == outcome.tensor

    def test_all_air_falls_back_to_center(self, fast_config):
        """Test an all-air volume is cropped at the volume center and flagged."""
        vol = HuVolume(voxels=np.full((10, 12, 14), -1000, dtype=np.int16), spacing_mm=(3.0, 3.0, 3.0))
        outcome = preprocess_hu(vol, fast_config)
        assert outcome.status == STATUS_FALLBACK
        assert outcome.center == (5, 6, 7)
        assert outcome.tensor.dims == fast_config.crop_size
        assert "SegmentationEmpty" in outcome.message
        # air windows to 0 and the crop pads with windowed air
        assert int(outcome.tensor.voxels.max()) == 0

    def test_missing_series_propagates(self, tmp_path, fast_config):
        with pytest.raises(SeriesNotFound):
            preprocess_case("x", tmp_path / "nope", tmp_path / "out", fast_config)


class TestManifest:
    """Tests for manifest reading."""

    def test_relative_paths_resolve_against_manifest(self, small_cohort):
        out, cases = small_cohort
        rows = read_manifest(out / "manifest.csv")
        assert [r.case_id for r in rows] == [c.case_id for c in cases]
        assert rows[0].path == out / "cases" / "case_0000"
        assert [r.label for r in rows] == [c.label for c in cases]

    def test_label_column_is_optional(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("case_id,path\na,/data/a\n")
        rows = read_manifest(path)
        assert rows[0].label is None
        assert str(rows[0].path) == "/data/a"

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestNotFound):
            read_manifest(tmp_path / "missing.csv")

    def test_duplicate_case_ids(self, tmp_path):
        path = _write_manifest(tmp_path / "m.csv", [("a", "x", 0), ("a", "y", 1)])
        with pytest.raises(ManifestError, match="duplicate"):
            read_manifest_frame(path)

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("case_id,label\na,1\n")
        with pytest.raises(ManifestError, match="missing columns"):
            read_manifest(path)

    def test_blank_case_id(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("case_id,path\n ,x\n")
        with pytest.raises(ManifestError):
            read_manifest(path)

    def test_bad_label(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("case_id,path,label\na,x,yes\n")
        with pytest.raises(ManifestError):
            read_manifest(path)

    @pytest.mark.parametrize("label", ["7", "-1", "2"])
    def test_label_outside_zero_one(self, tmp_path, label):
        path = tmp_path / "m.csv"
        path.write_text(f"case_id,path,label\na,x,{label}\n")
        with pytest.raises(ManifestError, match="not 0 or 1"):
            read_manifest(path)

    @pytest.mark.parametrize("case_id", ["../escape", "sub/case", "win\\case", ".."])
    def test_path_like_case_id(self, tmp_path, case_id):
        path = tmp_path / "m.csv"
        path.write_text(f"case_id,path\n{case_id},x\n")
        with pytest.raises(ManifestError, match="file names"):
            read_manifest_frame(path)

    def test_path_like_case_id_writes_nothing(self, tmp_path, small_cohort, fast_config):
        out, cases = small_cohort
        path = tmp_path / "m.csv"
        path.write_text(f"case_id,path\n../escape,{out / 'cases' / cases[0].case_id}\n")
        with pytest.raises(ManifestError):
            preprocess_batch(path, tmp_path / "lvol", fast_config)
        assert not (tmp_path / "escape.lvol").exists()


class TestPreprocessBatch:
    """Tests for preprocess_batch."""

    def test_outputs_independent_of_threads(self, tmp_path, small_cohort, fast_config):
        """Test threads 1 and 4 give identical files and statuses."""
        out, cases = small_cohort
        single = preprocess_batch(out / "manifest.csv", tmp_path / "t1", fast_config)
        pooled = preprocess_batch(out / "manifest.csv", tmp_path / "t4",
                                  fast_config.model_copy(update={"threads": 4}))
        assert [c.status for c in single.cases] == [c.status for c in pooled.cases]
        assert [c.case_id for c in pooled.cases] == [c.case_id for c in cases]
        for case in cases:
            name = f"{case.case_id}.lvol"
            assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t4" / name).read_bytes()

    def test_all_cases_succeed(self, tmp_path, small_cohort, fast_config):
        out, cases = small_cohort
        report = preprocess_batch(out / "manifest.csv", tmp_path / "out", fast_config)
        assert not report.failed
        assert report.totals[STATUS_OK] == len(cases)
        assert (tmp_path / "out" / REPORT_NAME).is_file()
        tensor = load_tensor_trichannel(tmp_path / "out" / f"{cases[0].case_id}.lvol")
        assert tensor.shape == (3, 48, 48, 48)

    def test_failed_case_does_not_abort(self, tmp_path, small_cohort, fast_config):
        """Test a missing series is reported as an error while the others succeed."""
        out, cases = small_cohort
        manifest = _absolute_manifest(tmp_path, out, extra=[
            {"case_id": "ghost", "path": str(tmp_path / "ghost"), "label": "0"},
        ])
        report = preprocess_batch(manifest, tmp_path / "out", fast_config, report_path=tmp_path / "r.txt")
        assert report.failed
        assert report.cases[-1].case_id == "ghost"
        assert report.cases[-1].status == STATUS_ERROR
        assert "SeriesNotFound" in report.cases[-1].message
        assert all(c.status == STATUS_OK for c in report.cases[:-1])
        assert report.totals[STATUS_ERROR] == 1
        assert not (tmp_path / "out" / "ghost.lvol").exists()
        assert (tmp_path / "r.txt").is_file()

    def test_report_records_config(self, tmp_path, small_cohort, fast_config):
        out, _ = small_cohort
        preprocess_batch(out / "manifest.csv", tmp_path / "out", fast_config)
        parsed = RunReport.from_text((tmp_path / "out" / REPORT_NAME).read_text())
        assert parsed.config == fast_config
        assert len(parsed.cases) == 10


class TestRunReport:
    """Tests for the report text format and the sink."""

    def _report(self):
        return RunReport(
            config=RunConfig(seed=4, crop_size=(32, 40, 48)),
            cases=[
                CaseReport(case_id="a", status=STATUS_OK, wall_ms=12.5),
                CaseReport(case_id="b", status=STATUS_FALLBACK, wall_ms=3.0,
                           message="SegmentationEmpty: no\ninterior air"),
                CaseReport(case_id="c", status=STATUS_ERROR, wall_ms=1.25, message="SeriesNotFound: gone"),
            ],
        )

    def test_text_round_trip(self):
        report = self._report()
        back = RunReport.from_text(report.to_text())
        assert back.config == report.config
        assert [c.case_id for c in back.cases] == ["a", "b", "c"]
        assert back.cases[1].message == "SegmentationEmpty: no interior air"
        assert back.totals == report.totals

    def test_lines(self):
        lines = self._report().to_lines()
        assert "config.crop_size=32,40,48" in lines
        assert "case.0.status=ok" in lines
        assert "case.2.wall_ms=1.250" in lines
        assert "total.cases=3" in lines
        assert "total.segmentation-fallback=1" in lines
        assert all("=" in line for line in lines)

    def test_failed_ignores_fallbacks(self):
        report = self._report()
        assert report.failed
        report.cases.pop()
        assert not report.failed

    def test_sink_orders_by_index(self):
        sink = ReportSink(3)
        for i in (2, 0, 1):
            sink.add(i, CaseReport(case_id=str(i), status=STATUS_OK))
        assert [e.case_id for e in sink.entries()] == ["0", "1", "2"]
        assert sink.counts() == (3, 3)

    def test_sink_rejects_duplicates_and_gaps(self):
        sink = ReportSink(2)
        sink.add(0, CaseReport(case_id="a", status=STATUS_OK))
        with pytest.raises(ValueError):
            sink.add(0, CaseReport(case_id="a", status=STATUS_OK))
        with pytest.raises(ValueError):
            sink.entries()


@pytest.fixture(scope="module")
def full_cohort(tmp_path_factory):
    """64 default-family cases at 34% positive."""
    out = tmp_path_factory.mktemp("full_cohort")
    cases = generate_cohort(out, n=64, positive_frac=0.34, seed=0, workers=4)
    return out, cases


@pytest.mark.slow
def test_full_cohort_end_to_end(tmp_path, full_cohort):
    """Every case succeeds, matches ground truth and loads as a three-channel tensor."""
    out, cases = full_cohort
    assert sum(c.label for c in cases) == 22
    config = RunConfig()
    report = preprocess_batch(out / "manifest.csv", tmp_path / "lvol", config)
    assert report.totals[STATUS_OK] == 64

    for case in cases:
        tensor = load_tensor_trichannel(tmp_path / "lvol" / f"{case.case_id}.lvol")
        assert tensor.shape == (3, *config.crop_size)
        assert tensor.min() >= -1.0 and tensor.max() <= 1.0
        assert np.array_equal(tensor[0], tensor[1]) and np.array_equal(tensor[1], tensor[2])

        vol, _ = load_series(out / case.path)
        resampled = trilinear_resample(vol, config.target_spacing_mm)
        result = segment_lungs(resampled)
        spec = sample_case_spec(case.case_id, case.label, seed=0)
        truth = rasterize_lungs(spec, resampled.dims, resampled.spacing_mm)
        assert dice(result.mask, truth) >= 0.9, case.case_id
        truth_center = bounding_box(truth).center
        assert max(abs(a - b) for a, b in zip(result.bbox.center, truth_center)) <= 2, case.case_id


@pytest.mark.slow
def test_thread_scaling(tmp_path, full_cohort):
    """Outputs match across 1, 2, 4 and 8 workers and the pool speeds up the batch."""
    psutil = pytest.importorskip("psutil")
    cores = psutil.cpu_count(logical=False) or 1
    if cores < 4:
        pytest.skip(f"needs at least 4 physical cores, found {cores}")

    out, cases = full_cohort
    walls = {}
    for threads in (1, 2, 4, 8):
        config = RunConfig(threads=threads)
        started = time.perf_counter()
        preprocess_batch(out / "manifest.csv", tmp_path / f"t{threads}", config)
        walls[threads] = time.perf_counter() - started

    for case in cases:
        reference = (tmp_path / "t1" / f"{case.case_id}.lvol").read_bytes()
        for threads in (2, 4, 8):
            assert (tmp_path / f"t{threads}" / f"{case.case_id}.lvol").read_bytes() == reference

    for threads in (2, 4):
        assert walls[threads] <= walls[1] / (0.7 * threads), walls
