"""
Losses, dropout, Adam, and a desk-scale logistic trainer.

The trainer follows the usual fine-tuning setup for the 3D risk model
(mini-batches of 2, Adam at 5e-5, cross-entropy or focal loss) but fits
extracted scalar features instead of raw volumes. It does not backpropagate
through convolutions.

All losses work on scalars and on numpy arrays alike and are computed in
the logit domain, so ``ln 0`` is never evaluated.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple, Union

import numpy as np
from sklearn.preprocessing import StandardScaler

from src.analysis.evaluate import DegenerateLabels, RocCurve, accuracy_arrays, roc_curve_arrays
from src.utils.error_handling import LungRiskError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

DEFAULT_LR = 5e-5
DEFAULT_BATCH_SIZE = 2
FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0


class InvalidRate(LungRiskError, ValueError):
    """Dropout rate must lie in [0, 1)."""


class LengthMismatch(LungRiskError, ValueError):
    """Parameter and gradient vectors differ in length."""


class InsufficientSamples(LungRiskError, ValueError):
    """Training needs at least four samples."""


@dataclass(frozen=True)
class LossValue:
    value: ArrayLike
    grad_wrt_logit: ArrayLike


def _log_sigmoid(z: np.ndarray) -> np.ndarray:
    """ln(sigmoid(z)), stable for large |z|."""
    return -np.logaddexp(0.0, -z)


def _labels(y: ArrayLike) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return y


def _unwrap(x: np.ndarray) -> ArrayLike:
    return float(x) if np.ndim(x) == 0 else x


def sigmoid(z: ArrayLike) -> np.ndarray:
    return np.exp(_log_sigmoid(np.asarray(z, dtype=np.float64)))


def cross_entropy(logit: ArrayLike, y: ArrayLike) -> LossValue:
    """
    Binary cross-entropy on a logit.

    ``value = -[y ln p + (1 - y) ln(1 - p)]`` with ``p = sigmoid(logit)``;
    ``grad = p - y``.
    """
    z = np.asarray(logit, dtype=np.float64)
    y = _labels(y)
    log_p = _log_sigmoid(z)
    log_q = _log_sigmoid(-z)
    value = -(y * log_p + (1.0 - y) * log_q)
    grad = np.exp(log_p) - y
    return LossValue(_unwrap(value), _unwrap(grad))


def focal_loss(logit: ArrayLike, y: ArrayLike, alpha: float = FOCAL_ALPHA,
               gamma: float = FOCAL_GAMMA) -> LossValue:
    """
    Binary focal loss on a logit.

    ``value = -alpha y (1-p)^gamma ln p - (1-alpha)(1-y) p^gamma ln(1-p)``.
    With gamma = 0 and alpha = 0.5 it equals half the cross-entropy.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    z = np.asarray(logit, dtype=np.float64)
    y = _labels(y)
    log_p = _log_sigmoid(z)
    log_q = _log_sigmoid(-z)
    p = np.exp(log_p)
    q = np.exp(log_q)
    q_g = q ** gamma
    p_g = p ** gamma

    value = -alpha * y * q_g * log_p - (1.0 - alpha) * (1.0 - y) * p_g * log_q
    # d/dz of each branch, using dp/dz = p q
    grad_pos = alpha * q_g * (gamma * p * log_p - q)
    grad_neg = (1.0 - alpha) * p_g * (p - gamma * q * log_q)
    grad = y * grad_pos + (1.0 - y) * grad_neg
    return LossValue(_unwrap(value), _unwrap(grad))


@dataclass(frozen=True)
class AdamState:
    """Adam moments; `step` counts completed updates."""
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n_params: int, lr: float = DEFAULT_LR, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m=np.zeros(n_params), v=np.zeros(n_params), step=0,
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> Tuple[AdamState, np.ndarray]:
    """
    One bias-corrected Adam update. Returns the new state and parameters.

    Raises:
        LengthMismatch: If params, grads and moments differ in length
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if not (params.shape == grads.shape == state.m.shape == state.v.shape):
        raise LengthMismatch(
            f"params {params.shape}, grads {grads.shape}, state {state.m.shape} must match"
        )
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, step=t), new_params


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """
    Inverted dropout: zero each element with probability `rate`, scale survivors by 1/(1-rate).

    `rate` is the DROP probability.
    """
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"dropout rate must lie in [0, 1), got {rate}", details={"rate": rate})
    x = np.asarray(x, dtype=np.float64)
    if rate == 0.0:
        return x.copy()
    keep = rng.random(x.shape) >= rate
    return np.where(keep, x / (1.0 - rate), 0.0)


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "ce"
    epochs: int = 50
    batch_size: int = DEFAULT_BATCH_SIZE
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    focal_alpha: float = FOCAL_ALPHA
    focal_gamma: float = FOCAL_GAMMA
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.loss not in ("ce", "focal"):
            raise ValueError(f"loss must be 'ce' or 'focal', got {self.loss!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidRate(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_auc: float
    train_accuracy: float
    val_loss: Optional[float] = None
    val_auc: Optional[float] = None
    val_accuracy: Optional[float] = None
    val_roc: Optional[RocCurve] = None


@dataclass(frozen=True)
class TrainResult:
    """Weights (bias last) in standardized feature space, plus the fitted scaler."""
    weights: np.ndarray
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    trace: List[EpochRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights,
            "feature_mean": self.feature_mean,
            "feature_scale": self.feature_scale,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainResult":
        return cls(
            weights=np.asarray(data["weights"], dtype=np.float64),
            feature_mean=np.asarray(data["feature_mean"], dtype=np.float64),
            feature_scale=np.asarray(data["feature_scale"], dtype=np.float64),
        )


def _loss(cfg: TrainConfig, logits: np.ndarray, y: np.ndarray) -> LossValue:
    if cfg.loss == "focal":
        return focal_loss(logits, y, cfg.focal_alpha, cfg.focal_gamma)
    return cross_entropy(logits, y)


def _logits(weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    return x @ weights[:-1] + weights[-1]


def _standardize(result: TrainResult, features: np.ndarray) -> np.ndarray:
    return (np.asarray(features, dtype=np.float64) - result.feature_mean) / result.feature_scale


def predict_proba(result: TrainResult, features: np.ndarray) -> np.ndarray:
    """Probability scores for raw (unstandardized) feature rows."""
    return sigmoid(_logits(result.weights, _standardize(result, features)))


def _evaluate(cfg: TrainConfig, weights: np.ndarray, x: np.ndarray, y: np.ndarray):
    logits = _logits(weights, x)
    loss = float(np.mean(_loss(cfg, logits, y).value))
    scores = sigmoid(logits)
    roc = roc_curve_arrays(y.astype(np.int64), scores)
    return loss, roc, accuracy_arrays(y.astype(np.int64), scores)


def train_logistic(
    features: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    validation: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> TrainResult:
    """
    Mini-batch logistic regression with Adam.

    Features are standardized (scaler fitted on the training rows). Each
    epoch shuffles with a generator seeded from `cfg.seed`, then records
    full-dataset loss, AUC and accuracy after its updates. Weights start
    at zero.

    Raises:
        InsufficientSamples: Fewer than four rows
        DegenerateLabels: Only one class present
    """
    x_raw = np.asarray(features, dtype=np.float64)
    y = _labels(labels)
    if x_raw.ndim != 2 or x_raw.shape[0] != y.shape[0]:
        raise LengthMismatch(f"features {x_raw.shape} and labels {y.shape} do not align")
    n, d = x_raw.shape
    if n < 4:
        raise InsufficientSamples(f"training needs at least 4 samples, got {n}")
    if np.all(y == y[0]):
        raise DegenerateLabels("training labels contain a single class")

    scaler = StandardScaler().fit(x_raw)
    result = TrainResult(weights=np.zeros(d + 1), feature_mean=scaler.mean_.copy(),
                         feature_scale=scaler.scale_.copy())
    x = _standardize(result, x_raw)
    val = None
    if validation is not None:
        val = (_standardize(result, validation[0]), _labels(validation[1]))

    rng = np.random.default_rng(cfg.seed)
    weights = result.weights.copy()
    state = AdamState.fresh(d + 1, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    trace: List[EpochRecord] = []

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = x[idx]
            if cfg.dropout_rate > 0.0:
                xb = dropout(xb, cfg.dropout_rate, rng)
            grad_logit = np.asarray(_loss(cfg, _logits(weights, xb), y[idx]).grad_wrt_logit)
            grads = np.append(xb.T @ grad_logit, grad_logit.sum()) / len(idx)
            state, weights = adam_step(state, weights, grads)

        train_loss, train_roc, train_acc = _evaluate(cfg, weights, x, y)
        record = EpochRecord(epoch=epoch, train_loss=train_loss, train_auc=train_roc.auc,
                             train_accuracy=train_acc)
        if val is not None:
            val_loss, val_roc, val_acc = _evaluate(cfg, weights, val[0], val[1])
            record = replace(record, val_loss=val_loss, val_auc=val_roc.auc,
                             val_accuracy=val_acc, val_roc=val_roc)
        trace.append(record)
        logger.debug(f"epoch {epoch}: loss={train_loss:.6f} auc={train_roc.auc:.4f}")

    return replace(result, weights=weights, trace=trace)
