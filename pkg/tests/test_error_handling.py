import logging

import pytest

from src.imaging.dicom_ingest import MissingTag
from src.utils.error_handling import (
    BadMagic,
    ConfigError,
    FormatError,
    LungRiskError,
    ManifestError,
    ManifestNotFound,
    TruncatedPayload,
    UnsupportedVersion,
    UsageError,
    describe_error,
    format_error,
    log_case_error,
    summarize_outcomes,
)


def test_hierarchy():
    """Usage errors and format errors share the base class but not each other"""
    for cls in (ConfigError, ManifestNotFound, ManifestError):
        assert issubclass(cls, UsageError)
    for cls in (BadMagic, UnsupportedVersion, TruncatedPayload):
        assert issubclass(cls, FormatError)
    assert not issubclass(FormatError, UsageError)
    assert issubclass(UsageError, LungRiskError)


def test_error_carries_details():
    error = ManifestError("bad manifest", details={"row": 3})
    assert str(error) == "bad manifest"
    assert error.message == "bad manifest"
    assert error.details == {"row": 3}
    assert LungRiskError("plain").details == {}


def test_format_error():
    info = format_error(BadMagic("not an LVOL file", details={"magic": "00"}), context={"path": "x"})
    assert info["error_type"] == "BadMagic"
    assert info["error_message"] == "not an LVOL file"
    assert info["details"] == {"magic": "00"}
    assert info["context"] == {"path": "x"}
    assert "timestamp" in info
    assert "traceback" not in info


def test_format_error_with_traceback():
    try:
        raise ValueError("boom")
    except ValueError as e:
        info = format_error(e, include_traceback=True)
    assert "ValueError: boom" in info["traceback"]
    assert "details" not in info


def test_describe_error():
    assert describe_error(ConfigError("line 2: duplicate key 'seed'")) == \
        "ConfigError: line 2: duplicate key 'seed'"


def test_log_case_error(caplog):
    with caplog.at_level(logging.INFO, logger="src.utils.error_handling"):
        log_case_error(MissingTag((0x0028, 0x0010)), case_id="case_0003",
                       context={"series_dir": "/data/3"})
        log_case_error(TruncatedPayload("short"), case_id=None, level="warning")

    first, second = caplog.records
    assert first.levelno == logging.ERROR
    assert first.getMessage().startswith("Case case_0003 failed: MissingTag: Missing required tag (0028,0010)")
    assert first.error_info["case_id"] == "case_0003"
    assert first.error_info["context"] == {"series_dir": "/data/3"}
    assert second.levelno == logging.WARNING
    assert second.getMessage().startswith("Case ? failed")


def test_summarize_outcomes():
    totals = summarize_outcomes(["ok", "error", "ok"], [1.0, 2.5, 0.125], ["ok", "segmentation-fallback", "error"])
    assert totals == {"cases": 3, "ok": 2, "segmentation-fallback": 0, "error": 1, "wall_ms": 3.625}
    assert list(totals)[:4] == ["cases", "ok", "segmentation-fallback", "error"]


@pytest.mark.parametrize("statuses", [[], ["ok"]])
def test_summarize_outcomes_small(statuses):
    totals = summarize_outcomes(statuses, [0.0] * len(statuses), ["ok"])
    assert totals["cases"] == len(statuses)
    assert totals["wall_ms"] == 0.0
