"""
Scoring metrics for binary risk predictions.

This module provides the ROC curve with tie-grouped thresholds, the
Mann-Whitney AUC, thresholded accuracy, risk-bucket assignment, the
seeded train/test split, and the CSV readers/writers the CLI uses.

Both AUC computations are carried out on integer pair counts and divided
once, so the trapezoidal and rank-sum forms agree to rounding.
"""
import logging
import math
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from scipy.stats import rankdata
from sklearn.metrics import accuracy_score

from src.utils.error_handling import LungRiskError, UsageError
from src.utils.random import seeded_shuffle

logger = logging.getLogger(__name__)

T = TypeVar("T")

SCORE_COLUMNS = ["case_id", "label", "score"]
ROC_COLUMNS = ["threshold", "fpr", "tpr"]


class EvaluationError(LungRiskError):
    """Base class for metric errors."""


class DegenerateLabels(EvaluationError, ValueError):
    """Both classes must be present."""


class EmptyInput(EvaluationError, ValueError):
    """At least one case is required."""


class UnsortedThresholds(EvaluationError, ValueError):
    """Bucket thresholds must be strictly ascending and inside (0, 1)."""


class ScoresFileError(UsageError):
    """A scores CSV is missing or malformed."""


class ScoredCase(BaseModel):
    """A case identifier with its binary label and probability score."""
    model_config = ConfigDict(frozen=True)

    case_id: str = Field(..., description="Case identifier")
    label: int = Field(..., description="1 for cancer-positive, 0 otherwise")
    score: float = Field(..., ge=0.0, le=1.0, description="Predicted probability")

    @field_validator("label")
    @classmethod
    def label_is_binary(cls, v: int) -> int:
        if v not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {v}")
        return v


@dataclass(frozen=True)
class RocCurve:
    """
    ROC vertices from (0, 0) to (1, 1).

    ``thresholds[i]`` is the score cut producing ``points[i]``
    (predict positive when ``score >= threshold``); the first is ``inf``.
    """
    points: Tuple[Tuple[float, float], ...]
    thresholds: Tuple[float, ...]
    auc: float

    @property
    def fpr(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def tpr(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])


def _as_arrays(cases: Sequence[ScoredCase]) -> Tuple[np.ndarray, np.ndarray]:
    labels = np.array([c.label for c in cases], dtype=np.int64)
    scores = np.array([c.score for c in cases], dtype=np.float64)
    return labels, scores


def _class_counts(labels: np.ndarray) -> Tuple[int, int]:
    pos = int(np.count_nonzero(labels == 1))
    neg = int(labels.size - pos)
    if pos == 0 or neg == 0:
        raise DegenerateLabels(
            f"need both classes, got {pos} positive and {neg} negative",
            details={"positives": pos, "negatives": neg},
        )
    return pos, neg


def roc_curve_arrays(labels: np.ndarray, scores: np.ndarray) -> RocCurve:
    """ROC curve for parallel label/score arrays. See :func:`roc_curve`."""
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    pos, neg = _class_counts(labels)

    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    # last index of each tie group, scores descending
    group_ends = np.append(np.flatnonzero(np.diff(s) != 0), s.size - 1)
    tps = np.concatenate([[0], np.cumsum(y)[group_ends]])
    fps = np.concatenate([[0], group_ends + 1]) - tps

    twice_area = int(np.sum(np.diff(fps) * (tps[1:] + tps[:-1])))
    auc = twice_area / (2 * pos * neg)

    points = tuple(zip((fps / neg).tolist(), (tps / pos).tolist()))
    thresholds = (math.inf,) + tuple(s[group_ends].tolist())
    return RocCurve(points=points, thresholds=thresholds, auc=auc)


def roc_curve(cases: Sequence[ScoredCase]) -> RocCurve:
    """
    Sweep thresholds over the distinct scores, highest first.

    Tied scores enter together, giving one vertex per distinct score;
    the AUC is the trapezoidal area under the vertices.

    Raises:
        DegenerateLabels: If either class is absent
    """
    return roc_curve_arrays(*_as_arrays(cases))


def auc_mann_whitney_arrays(labels: np.ndarray, scores: np.ndarray) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    pos, neg = _class_counts(labels)
    # average ranks are half-integers, so twice the rank sum is exact
    ranks = rankdata(scores, method="average")
    twice_u = int(round(2.0 * ranks[labels == 1].sum())) - pos * (pos + 1)
    return twice_u / (2 * pos * neg)


def auc_mann_whitney(cases: Sequence[ScoredCase]) -> float:
    """
    Probability that a positive outscores a negative, ties counting half.

    Raises:
        DegenerateLabels: If either class is absent
    """
    return auc_mann_whitney_arrays(*_as_arrays(cases))


def accuracy_arrays(labels: np.ndarray, scores: np.ndarray, threshold: float = 0.5) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyInput("accuracy needs at least one case")
    predicted = (np.asarray(scores, dtype=np.float64) >= threshold).astype(np.int64)
    return float(accuracy_score(labels, predicted))


def accuracy(cases: Sequence[ScoredCase], threshold: float = 0.5) -> float:
    """Fraction of cases where ``score >= threshold`` matches the label."""
    if len(cases) == 0:
        raise EmptyInput("accuracy needs at least one case")
    return accuracy_arrays(*_as_arrays(cases), threshold=threshold)


def validate_thresholds(thresholds: Sequence[float]) -> Tuple[float, ...]:
    values = tuple(float(t) for t in thresholds)
    if any(not 0.0 < t < 1.0 for t in values) or any(a >= b for a, b in zip(values, values[1:])):
        raise UnsortedThresholds(
            f"thresholds must be strictly ascending inside (0, 1), got {list(values)}",
            details={"thresholds": list(values)},
        )
    return values


def assign_bucket(score: float, thresholds: Sequence[float]) -> int:
    """
    Risk bucket for a score: the number of thresholds ``<= score``.

    A score equal to a threshold falls in the upper bucket. No clinical
    thresholds are built in; callers supply them.
    """
    return bisect_right(validate_thresholds(thresholds), score)


def assign_buckets(scores: Sequence[float], thresholds: Sequence[float]) -> np.ndarray:
    """Vectorized :func:`assign_bucket`."""
    values = np.asarray(validate_thresholds(thresholds))
    return np.searchsorted(values, np.asarray(scores, dtype=np.float64), side="right")


def bucket_counts(scores: Sequence[float], thresholds: Sequence[float]) -> List[int]:
    """Number of scores per bucket, ``len(thresholds) + 1`` entries."""
    buckets = assign_buckets(scores, thresholds)
    return np.bincount(buckets, minlength=len(thresholds) + 1).tolist()


def split(ids: Sequence[T], train_frac: float = 0.7, seed: int = 0) -> Tuple[List[T], List[T]]:
    """
    Seeded train/test partition.

    The ids are shuffled with the platform-stable permutation and the
    first ``floor(n * train_frac)`` go to training.
    """
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must lie in (0, 1), got {train_frac}")
    n = len(ids)
    # 100 * 0.29 = 28.999999999999996 must still give 29
    n_train = math.floor(n * train_frac + 1e-9)
    shuffled = seeded_shuffle(ids, seed)
    train, test = shuffled[:n_train], shuffled[n_train:]
    logger.debug(f"Split {n} ids into {len(train)} train / {len(test)} test (seed={seed})")
    return train, test


def read_scores_csv(path: Union[str, Path]) -> List[ScoredCase]:
    """
    Read a ``case_id,label,score`` CSV.

    Raises:
        ScoresFileError: Missing file, missing columns or invalid rows
    """
    path = Path(path)
    if not path.is_file():
        raise ScoresFileError(f"scores file not found: {path}", details={"path": str(path)})
    try:
        frame = pd.read_csv(path, dtype={"case_id": str}, comment="#")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ScoresFileError(f"{path}: cannot parse scores CSV: {e}") from e

    missing = [c for c in SCORE_COLUMNS if c not in frame.columns]
    if missing:
        raise ScoresFileError(f"{path}: missing columns {missing}", details={"columns": list(frame.columns)})

    cases = []
    for row_number, row in enumerate(frame[SCORE_COLUMNS].itertuples(index=False), start=2):
        try:
            cases.append(ScoredCase(case_id=row.case_id, label=int(row.label), score=float(row.score)))
        except (ValidationError, ValueError, TypeError) as e:
            raise ScoresFileError(f"{path}:{row_number}: invalid row: {e}") from e
    return cases


def write_scores_csv(
    cases: Sequence[ScoredCase],
    path: Union[str, Path],
    buckets: Optional[Sequence[int]] = None,
) -> None:
    """Write cases as ``case_id,label,score`` with an optional ``bucket`` column."""
    frame = pd.DataFrame(
        {
            "case_id": [c.case_id for c in cases],
            "label": [c.label for c in cases],
            "score": [c.score for c in cases],
        }
    )
    if buckets is not None:
        frame["bucket"] = list(buckets)
    frame.to_csv(path, index=False)


def write_roc_csv(roc: RocCurve, path: Union[str, Path]) -> None:
    """Write ``threshold,fpr,tpr`` rows followed by a ``# auc=<value>`` line."""
    frame = pd.DataFrame(
        {
            "threshold": list(roc.thresholds),
            "fpr": [p[0] for p in roc.points],
            "tpr": [p[1] for p in roc.points],
        },
        columns=ROC_COLUMNS,
    )
    with open(path, "w", newline="") as f:
        frame.to_csv(f, index=False)
        f.write(f"# auc={roc.auc!r}\n")
