"""
Run report for a preprocessing batch.

The report is line-oriented ``key=value`` text::

    config.<field>=<value>        one line per RunConfig field
    case.<i>.case_id=<id>         one block per manifest row, manifest order
    case.<i>.status=ok|segmentation-fallback|error
    case.<i>.wall_ms=<float>
    case.<i>.message=<text>
    total.<name>=<value>          cases, per-status counts, wall_ms

The config block parses back to the exact RunConfig of the run.
"""
import logging
import threading
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field

from src.config.run_config import RunConfig
from src.utils.error_handling import ConfigError, summarize_outcomes

logger = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_FALLBACK = "segmentation-fallback"
STATUS_ERROR = "error"
STATUSES = [STATUS_OK, STATUS_FALLBACK, STATUS_ERROR]

REPORT_NAME = "run_report.txt"

CaseStatus = Literal["ok", "segmentation-fallback", "error"]


class CaseReport(BaseModel):
    """Outcome of one manifest row."""
    model_config = ConfigDict(frozen=True)

    case_id: str = Field(..., description="Manifest case identifier")
    status: CaseStatus = Field(..., description="Processing outcome")
    wall_ms: float = Field(default=0.0, ge=0.0, description="Wall time spent on the case")
    message: str = Field(default="", description="Error or fallback description")


class RunReport(BaseModel):
    """Per-case outcomes of a batch plus the configuration that produced them."""
    config: RunConfig
    cases: List[CaseReport] = Field(default_factory=list)

    @property
    def totals(self) -> Dict[str, Union[int, float]]:
        return summarize_outcomes(
            [c.status for c in self.cases], [c.wall_ms for c in self.cases], STATUSES
        )

    @property
    def failed(self) -> bool:
        """True if any case failed hard; fallbacks do not count."""
        return any(c.status == STATUS_ERROR for c in self.cases)

    def to_lines(self) -> List[str]:
        lines = [f"config.{key}={value}" for key, value in self.config.to_items()]
        for i, case in enumerate(self.cases):
            message = " ".join(case.message.split())
            lines += [
                f"case.{i}.case_id={case.case_id}",
                f"case.{i}.status={case.status}",
                f"case.{i}.wall_ms={case.wall_ms:.3f}",
                f"case.{i}.message={message}",
            ]
        lines += [f"total.{key}={value}" for key, value in self.totals.items()]
        return lines

    def to_text(self) -> str:
        return "\n".join(self.to_lines()) + "\n"

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="utf-8")
        logger.info(f"Run report written to {path}")
        return path

    @classmethod
    def from_text(cls, text: str) -> "RunReport":
        """Parse a report produced by :meth:`to_text`; totals are recomputed."""
        config_lines = []
        cases: Dict[int, Dict[str, str]] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"report line {lineno}: expected key=value", details={"line": lineno})
            section, _, rest = key.partition(".")
            if section == "config":
                config_lines.append(f"{rest} = {value}")
            elif section == "case":
                index, _, name = rest.partition(".")
                cases.setdefault(int(index), {})[name] = value
        return cls(
            config=RunConfig.from_text("\n".join(config_lines)),
            cases=[CaseReport(**cases[i]) for i in sorted(cases)],
        )


class ReportSink:
    """
    Append-only collector shared by the batch workers.

    Entries arrive in completion order and are returned in manifest order.
    """

    def __init__(self, size: int):
        self._lock = threading.Lock()
        self._entries: List[Optional[CaseReport]] = [None] * size

    def add(self, index: int, entry: CaseReport) -> None:
        with self._lock:
            if self._entries[index] is not None:
                raise ValueError(f"report entry {index} already recorded")
            self._entries[index] = entry

    def entries(self) -> List[CaseReport]:
        with self._lock:
            missing = [i for i, e in enumerate(self._entries) if e is None]
            if missing:
                raise ValueError(f"report entries missing for rows {missing}")
            return list(self._entries)  # type: ignore[arg-type]

    def counts(self) -> Tuple[int, int]:
        """(recorded, expected)"""
        with self._lock:
            return sum(e is not None for e in self._entries), len(self._entries)
