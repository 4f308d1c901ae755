"""
Error handling utilities for the preprocessing toolkit.

This module provides the base exception hierarchy shared by every layer,
plus error formatters and logging helpers used by the batch runner and
the command-line interface.
"""
import logging
import traceback
from typing import Dict, Any, Optional, List, Sequence
from datetime import datetime


# Set up logger
logger = logging.getLogger(__name__)


class LungRiskError(Exception):
    """Base exception for all toolkit errors."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        self.message = message
        self.details = details or {}
        super().__init__(message)


class FormatError(LungRiskError):
    """A binary artifact (LVOL, LVW) could not be decoded."""


class BadMagic(FormatError):
    """The file does not start with the expected magic bytes."""


class UnsupportedVersion(FormatError):
    """The file declares a format version this reader does not know."""


class TruncatedPayload(FormatError):
    """The payload is shorter than the header declares."""


class UsageError(LungRiskError):
    """Invalid invocation: bad arguments, missing inputs, bad config."""


class ConfigError(UsageError):
    """A configuration file or value is invalid."""


class ManifestNotFound(UsageError):
    """The manifest CSV does not exist."""


class ManifestError(UsageError):
    """The manifest CSV exists but is not usable."""


def format_error(
    error: Exception,
    context: Optional[Dict[str, Any]] = None,
    include_traceback: bool = False
) -> Dict[str, Any]:
    """
    Format an error for logging or run reports.

    Args:
        error: The exception to format
        context: Additional context information
        include_traceback: Whether to include a traceback

    Returns:
        dict: Formatted error information
    """
    error_info = {
        "error_type": error.__class__.__name__,
        "error_message": str(error),
        "timestamp": datetime.now().isoformat()
    }

    if include_traceback:
        error_info["traceback"] = traceback.format_exc()

    if context:
        error_info["context"] = context

    # Structured errors carry their own details
    details = getattr(error, "details", None)
    if details:
        error_info["details"] = details

    return error_info


def describe_error(error: Exception) -> str:
    """One-line `ErrorType: message` description for report rows."""
    info = format_error(error)
    return f"{info['error_type']}: {info['error_message']}"


def log_case_error(
    error: Exception,
    case_id: Optional[str] = None,
    context: Optional[Dict[str, Any]] = None,
    level: str = "error"
) -> None:
    """
    Log a per-case processing error with context.

    Args:
        error: The exception to log
        case_id: Identifier of the case being processed (if known)
        context: Additional context information
        level: Log level (error, warning, info)
    """
    error_info = format_error(error, context, include_traceback=level == "error")
    if case_id is not None:
        error_info["case_id"] = case_id

    log_message = f"Case {case_id or '?'} failed: {describe_error(error)}"

    if level == "warning":
        logger.warning(log_message, extra={"error_info": error_info})
    elif level == "info":
        logger.info(log_message, extra={"error_info": error_info})
    else:
        logger.error(log_message, extra={"error_info": error_info})


def summarize_outcomes(
    statuses: Sequence[str],
    wall_ms: Sequence[float],
    known_statuses: List[str]
) -> Dict[str, Any]:
    """
    Build the totals block of a batch report.

    Args:
        statuses: One status string per processed case
        wall_ms: Wall time per case in milliseconds
        known_statuses: Status names that always appear in the totals

    Returns:
        dict: `cases`, one count per status, and the summed wall time
    """
    totals: Dict[str, Any] = {"cases": len(statuses)}
    for status in known_statuses:
        totals[status] = 0
    for status in statuses:
        totals[status] = totals.get(status, 0) + 1
    totals["wall_ms"] = round(float(sum(wall_ms)), 3)
    return totals
