"""
Processing layer for batch preprocessing.

This package provides the per-case pipeline, the parallel batch runner
and the run report.
"""
from src.processing.batch_runner import ManifestRow, preprocess_batch, read_manifest
from src.processing.pipeline import PreprocessOutcome, preprocess_case, preprocess_hu
from src.processing.report import CaseReport, RunReport

__all__ = [
    "CaseReport",
    "ManifestRow",
    "PreprocessOutcome",
    "RunReport",
    "preprocess_batch",
    "preprocess_case",
    "preprocess_hu",
    "read_manifest",
]
