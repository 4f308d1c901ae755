"""
Deterministic parallel batch preprocessing.

Each manifest row is one unit of work. With ``threads == 1`` cases run
inline; otherwise they run in a pool of ``threads`` worker processes.
Every case depends only on its own input and the RunConfig, so output
files are bitwise identical for any worker count, and report rows are
kept in manifest order whatever the completion order.

A failing case is logged and reported; it never aborts the batch.
"""
import logging
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import pandas as pd

from src.config.run_config import RunConfig
from src.processing.pipeline import preprocess_case
from src.processing.report import REPORT_NAME, STATUS_ERROR, CaseReport, ReportSink, RunReport
from src.utils.error_handling import ManifestError, ManifestNotFound, describe_error, log_case_error
from src.utils.logging import configure_logging

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["case_id", "path", "label"]


@dataclass(frozen=True)
class ManifestRow:
    case_id: str
    path: Path
    label: Optional[int] = None


def read_manifest_frame(manifest_path: Union[str, Path]) -> pd.DataFrame:
    """
    Load a manifest CSV as strings, checking its columns and identifiers.

    Raises:
        ManifestNotFound: If the file does not exist
        ManifestError: Unreadable CSV, missing columns, blank, duplicate or
            path-like case ids
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise ManifestNotFound(f"manifest not found: {manifest_path}", details={"path": str(manifest_path)})
    try:
        frame = pd.read_csv(manifest_path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ManifestError(f"{manifest_path}: cannot parse manifest: {e}") from e

    missing = [c for c in ("case_id", "path") if c not in frame.columns]
    if missing:
        raise ManifestError(f"{manifest_path}: missing columns {missing}",
                            details={"columns": list(frame.columns)})
    frame["case_id"] = frame["case_id"].str.strip()
    blank = frame.index[frame["case_id"] == ""].tolist()
    if blank:
        raise ManifestError(f"{manifest_path}: blank case_id on data row(s) {[i + 1 for i in blank]}")
    unsafe = [c for c in frame["case_id"] if "/" in c or "\\" in c or c in (".", "..")]
    if unsafe:
        raise ManifestError(f"{manifest_path}: case_id(s) {unsafe} cannot be used as file names",
                            details={"case_ids": unsafe})
    duplicated = frame.loc[frame["case_id"].duplicated(), "case_id"].unique().tolist()
    if duplicated:
        raise ManifestError(f"{manifest_path}: duplicate case_id(s) {duplicated}",
                            details={"duplicates": duplicated})
    return frame


def read_manifest(manifest_path: Union[str, Path]) -> List[ManifestRow]:
    """
    Read manifest rows; relative paths resolve against the manifest's directory.

    The ``label`` column is optional for preprocessing.
    """
    manifest_path = Path(manifest_path)
    frame = read_manifest_frame(manifest_path)
    rows = []
    for record in frame.to_dict("records"):
        path = Path(record["path"])
        if not path.is_absolute():
            path = manifest_path.parent / path
        label = record.get("label", "")
        try:
            parsed_label = int(label) if str(label).strip() else None
        except ValueError as e:
            raise ManifestError(f"{manifest_path}: case {record['case_id']}: label {label!r} is not 0 or 1") from e
        if parsed_label not in (None, 0, 1):
            raise ManifestError(f"{manifest_path}: case {record['case_id']}: label {label!r} is not 0 or 1")
        rows.append(ManifestRow(case_id=record["case_id"], path=path, label=parsed_label))
    return rows


def _init_worker(log_level: str) -> None:
    configure_logging(log_level)


def _run_case(job: Tuple[int, str, str, str, RunConfig]) -> Tuple[int, CaseReport]:
    """Process one case and never raise; module level so worker processes can import it."""
    index, case_id, series_dir, out_dir, config = job
    started = time.perf_counter()
    try:
        outcome = preprocess_case(case_id, series_dir, out_dir, config)
        status, message = outcome.status, outcome.message
        logger.info(f"Case {case_id}: {status}")
    except Exception as e:
        log_case_error(e, case_id=case_id, context={"series_dir": series_dir})
        status, message = STATUS_ERROR, describe_error(e)
    wall_ms = (time.perf_counter() - started) * 1000.0
    return index, CaseReport(case_id=case_id, status=status, wall_ms=wall_ms, message=message)


def preprocess_batch(
    manifest_path: Union[str, Path],
    out_dir: Union[str, Path],
    config: RunConfig,
    report_path: Optional[Union[str, Path]] = None,
) -> RunReport:
    """
    Preprocess every manifest row into ``<out_dir>/<case_id>.lvol``.

    The report is written to `report_path`, by default
    ``<out_dir>/run_report.txt``.

    Raises:
        ManifestNotFound, ManifestError: The manifest cannot be used at all
    """
    rows = read_manifest(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(i, row.case_id, str(row.path), str(out_dir), config) for i, row in enumerate(rows)]
    sink = ReportSink(len(jobs))

    logger.info(f"Preprocessing {len(jobs)} case(s) with {config.threads} worker(s) into {out_dir}")
    started = time.perf_counter()
    if config.threads == 1 or len(jobs) <= 1:
        for job in jobs:
            sink.add(*_run_case(job))
    else:
        log_level = logging.getLevelName(logging.getLogger().getEffectiveLevel())
        with ProcessPoolExecutor(max_workers=config.threads, initializer=_init_worker,
                                 initargs=(log_level,)) as pool:
            futures = [pool.submit(_run_case, job) for job in jobs]
            for future in as_completed(futures):
                sink.add(*future.result())

    report = RunReport(config=config, cases=sink.entries())
    report.write(report_path or out_dir / REPORT_NAME)
    totals = report.totals
    logger.info(
        f"Batch done in {(time.perf_counter() - started):.1f}s: "
        + ", ".join(f"{k}={v}" for k, v in totals.items() if k != "wall_ms")
    )
    return report
