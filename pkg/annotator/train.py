"""
Minibatch SGD training of the lesion network.
"""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from annotator.loss import ClassWeights, LossConfig, class_weights, loss_gradient, multilabel_loss
from annotator.model import NetworkConfig, Parameters, backward, forward, init_parameters
from mining.dataset import label_stats
from utils.errors import DataError, ModelError, TrainingDivergedError
from utils.metrics import epoch_duration, training_loss_gauge, training_steps_counter
from utils.storage import write_csv

logger = logging.getLogger(__name__)


class Schedule(BaseModel):
    """SGD schedule. Epochs are 1-based; the drop applies from lr_drop_epoch on."""

    epochs: int = Field(default=15, ge=1)
    lr: float = Field(default=0.01, ge=0.0)
    lr_drop_epoch: int = Field(default=12, ge=1)
    lr_drop_factor: float = Field(default=0.1, ge=0.0)
    batch_size: int = Field(default=128, ge=1)
    momentum: float = Field(default=0.0, ge=0.0, lt=1.0)
    seed: int = 0

    def lr_at(self, epoch: int) -> float:
        if epoch >= self.lr_drop_epoch:
            return self.lr * self.lr_drop_factor
        return self.lr


@dataclass
class TrainingSet:
    patches: np.ndarray
    bboxes: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.bboxes = np.asarray(self.bboxes, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        n = len(self.patches)
        if n == 0:
            raise DataError("Training set is empty", code="empty_set")
        if len(self.bboxes) != n or len(self.labels) != n:
            raise DataError(
                f"Training set sizes differ: {n} patches, {len(self.bboxes)} boxes, "
                f"{len(self.labels)} label rows",
                code="length_mismatch",
            )

    def __len__(self) -> int:
        return len(self.patches)

    @property
    def n_labels(self) -> int:
        return self.labels.shape[1]


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    mean_loss: float
    duration_ms: int


@dataclass
class TrainResult:
    params: Parameters
    weights: ClassWeights
    epochs: List[EpochMetrics] = field(default_factory=list)
    # (epoch, step, lr, loss)
    step_losses: List[Tuple[int, int, float, float]] = field(default_factory=list)


def train(
    train_set: TrainingSet,
    cfg: NetworkConfig,
    loss_cfg: LossConfig,
    schedule: Schedule,
    params: Optional[Parameters] = None,
    weights: Optional[ClassWeights] = None,
) -> TrainResult:
    """Train from a seeded initialization; deterministic given the seeds."""
    if train_set.n_labels != cfg.n_labels:
        raise ModelError(
            f"Training labels have {train_set.n_labels} columns, network has "
            f"{cfg.n_labels} outputs",
            code="shape_mismatch",
        )
    if params is None:
        params = init_parameters(cfg)
    if weights is None:
        weights = (
            class_weights(label_stats(train_set.labels))
            if loss_cfg.uses_weights
            else ClassWeights.ones(cfg.n_labels)
        )

    rng = np.random.default_rng(schedule.seed)
    velocity: Dict[str, np.ndarray] = {}
    result = TrainResult(params=params, weights=weights)
    mode = loss_cfg.mode.value
    n = len(train_set)
    step = 0

    logger.info(
        f"Training {params.n_values()} parameters on {n} examples, K={cfg.n_labels}, "
        f"loss={mode}, fusion={cfg.fusion.value}"
    )
    for epoch in range(1, schedule.epochs + 1):
        start = time.time()
        lr = schedule.lr_at(epoch)
        order = rng.permutation(n)
        batch_losses = []
        for lo in range(0, n, schedule.batch_size):
            idx = np.sort(order[lo : lo + schedule.batch_size])
            y = train_set.labels[idx]
            scores, state = forward(params, train_set.patches[idx], train_set.bboxes[idx])
            loss = multilabel_loss(y, scores, weights, loss_cfg)
            step += 1
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"Non-finite loss {loss} at epoch {epoch}, step {step}; "
                    f"try a smaller learning rate than {lr}",
                    epoch=epoch,
                    step=step,
                )
            grads = backward(state, loss_gradient(y, scores, weights, loss_cfg))
            params.assign(_sgd_updates(params, grads, velocity, lr, schedule.momentum))

            batch_losses.append(loss)
            result.step_losses.append((epoch, step, lr, loss))
            training_steps_counter.labels(loss_mode=mode).inc()

        duration = time.time() - start
        metrics = EpochMetrics(
            epoch=epoch,
            lr=lr,
            mean_loss=float(np.mean(batch_losses)),
            duration_ms=int(duration * 1000),
        )
        result.epochs.append(metrics)
        training_loss_gauge.labels(loss_mode=mode).set(metrics.mean_loss)
        epoch_duration.labels(loss_mode=mode).observe(duration)
        logger.info(
            f"Epoch {epoch}/{schedule.epochs} loss={metrics.mean_loss:.5f} lr={lr:g}",
            extra={
                "epoch": epoch,
                "lr": lr,
                "loss": metrics.mean_loss,
                "duration_ms": metrics.duration_ms,
            },
        )

    if not params.is_finite():
        raise TrainingDivergedError(
            "Training finished with non-finite parameters", epoch=schedule.epochs, step=step
        )
    return result


def _sgd_updates(
    params: Parameters,
    grads: Dict[str, np.ndarray],
    velocity: Dict[str, np.ndarray],
    lr: float,
    momentum: float,
) -> Dict[str, np.ndarray]:
    updates = {}
    for name, value in params.items():
        g = grads[name]
        if momentum > 0:
            v = momentum * velocity.get(name, np.zeros_like(g)) + g
            velocity[name] = v
            g = v
        updates[name] = value - lr * g
    return updates


def write_loss_csv(path: Union[str, Path], result: TrainResult) -> None:
    write_csv(path, ["epoch", "step", "lr", "loss"], result.step_losses)


def write_epoch_csv(path: Union[str, Path], result: TrainResult) -> None:
    write_csv(
        path,
        ["epoch", "lr", "mean_loss", "duration_ms"],
        ((m.epoch, m.lr, m.mean_loss, m.duration_ms) for m in result.epochs),
    )
