"""
Class-weighted, bootstrapped multi-label cross-entropy and its gradient.

    L = -sum_c [ w_pos[c] * t_c * log(s_c) + w_neg[c] * (1 - t_c) * log(1 - s_c) ]

with t = y (plain, weighted) or t = beta * y + (1 - beta) * s
(weighted_bootstrap). t is a constant in gradients. Batched inputs average
the per-sample losses.
"""
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import BaseModel, Field, field_validator

from mining.dataset import LabelStats
from utils.errors import DataError

logger = logging.getLogger(__name__)


class LossMode(str, Enum):
    PLAIN = "plain"
    WEIGHTED = "weighted"
    WEIGHTED_BOOTSTRAP = "weighted_bootstrap"


class LossConfig(BaseModel):
    mode: LossMode = LossMode.WEIGHTED_BOOTSTRAP
    beta: float = Field(default=0.9, ge=0.0, le=1.0)
    eps: float = 1e-7

    @field_validator("eps")
    @classmethod
    def eps_in_range(cls, v: float) -> float:
        if not 0.0 < v < 0.5:
            raise ValueError(f"eps must be in (0, 0.5), got {v}")
        return v

    @property
    def uses_weights(self) -> bool:
        return self.mode != LossMode.PLAIN


@dataclass(frozen=True)
class ClassWeights:
    w_pos: np.ndarray
    w_neg: np.ndarray

    @classmethod
    def ones(cls, n_labels: int) -> "ClassWeights":
        return cls(np.ones(n_labels), np.ones(n_labels))

    def __len__(self) -> int:
        return len(self.w_pos)


def class_weights(stats: LabelStats) -> ClassWeights:
    """w_pos = N / (2 N_pos), w_neg = N / (2 N_neg); an empty side counts as 1."""
    n_pos = np.asarray(stats.n_pos, dtype=np.float64)
    n_neg = np.asarray(stats.n_neg, dtype=np.float64)
    total = n_pos + n_neg
    if np.any(total <= 0):
        bad = [int(i) for i in np.flatnonzero(total <= 0)]
        raise DataError(
            f"Labels {bad} have neither positive nor negative training cases",
            code="empty_label_counts",
        )
    empty = (n_pos == 0) | (n_neg == 0)
    if np.any(empty):
        logger.warning(
            f"{int(empty.sum())} labels have no positive or no negative training cases; "
            "their empty side is weighted as if it had one case"
        )
    w_pos = total / (2.0 * np.maximum(n_pos, 1.0))
    w_neg = total / (2.0 * np.maximum(n_neg, 1.0))
    return ClassWeights(w_pos=w_pos, w_neg=w_neg)


def bootstrap_target(y, s, beta: float):
    """Soft target beta * y + (1 - beta) * s."""
    return beta * np.asarray(y, dtype=np.float64) + (1.0 - beta) * np.asarray(s, dtype=np.float64)


def _prepare(y, s, w: ClassWeights, cfg: LossConfig):
    y = np.asarray(y, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if y.shape != s.shape:
        raise DataError(f"Label shape {y.shape} != score shape {s.shape}", code="length_mismatch")
    if s.shape[-1] != len(w):
        raise DataError(
            f"{s.shape[-1]} scores per sample but {len(w)} class weights",
            code="length_mismatch",
        )
    s = np.clip(s, cfg.eps, 1.0 - cfg.eps)
    if cfg.uses_weights:
        w_pos, w_neg = np.asarray(w.w_pos, dtype=np.float64), np.asarray(w.w_neg, dtype=np.float64)
    else:
        w_pos = w_neg = np.ones(s.shape[-1])
    if cfg.mode == LossMode.WEIGHTED_BOOTSTRAP:
        target = bootstrap_target(y, s, cfg.beta)
    else:
        target = y
    return target, s, w_pos, w_neg


def per_label_loss(y, s, w: ClassWeights, cfg: LossConfig) -> np.ndarray:
    """Elementwise loss terms, same shape as s."""
    target, s, w_pos, w_neg = _prepare(y, s, w, cfg)
    return -(w_pos * target * np.log(s) + w_neg * (1.0 - target) * np.log1p(-s))


def multilabel_loss(y, s, w: ClassWeights, cfg: LossConfig) -> float:
    """Sum over labels; mean over samples for (N, K) inputs."""
    terms = per_label_loss(y, s, w, cfg)
    if terms.ndim == 1:
        return float(terms.sum())
    return float(terms.sum(axis=-1).mean())


def loss_gradient(y, s, w: ClassWeights, cfg: LossConfig) -> np.ndarray:
    """dL/ds with the bootstrap target held constant."""
    target, s_c, w_pos, w_neg = _prepare(y, s, w, cfg)
    grad = -(w_pos * target / s_c - w_neg * (1.0 - target) / (1.0 - s_c))
    if grad.ndim > 1:
        grad = grad / grad.shape[0]
    return grad
