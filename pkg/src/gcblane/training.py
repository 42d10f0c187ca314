"""Training loop: Adam on cross-entropy, plateau LR decay, early stopping.

The transfer workflow is two calls: fit() on the pooled pretraining data
with the 10-epoch schedule, then finetune() on a specific dataset with the
50-epoch schedule starting from the loaded weights.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Value, no_grad
from .checkpoint import get_state, set_state
from .dataset import SequenceDataset
from .errors import ConfigError, TrainingDiverged
from .model import Model

CROSS_ENTROPY_CLAMP = 1e-7


@dataclass
class TrainConfig:
    batch_size: int = 128
    lr_init: float = 0.001
    lr_min: float = 1e-6
    lr_decay_factor: float = 0.1
    plateau_patience: int = 2
    early_stop_patience: int = 3
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    seed: int = 0
    aux_loss_weight: float = 1.0

    def __post_init__(self):
        if not 0 < self.lr_min <= self.lr_init:
            raise ConfigError(f"need 0 < lr_min <= lr_init, got {self.lr_min} and {self.lr_init}")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not 0 <= self.lr_decay_factor < 1:
            raise ConfigError(f"lr decay factor must be in [0, 1), got {self.lr_decay_factor}")

    @classmethod
    def finetune_defaults(cls, **overrides) -> "TrainConfig":
        base = {"epochs": 50, "early_stop_patience": 5}
        base.update(overrides)
        return cls(**base)


@dataclass
class TrainLogRecord:
    epoch: int
    split: str
    loss: float
    accuracy: float
    current_lr: float
    wall_time: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    records: list[TrainLogRecord]
    best_state: dict[str, np.ndarray]
    best_val_loss: float
    best_epoch: int
    final_lr: float
    epochs_run: int
    diverged: bool = False

    @property
    def lr_trace(self) -> list[float]:
        return [r.current_lr for r in self.records if r.split == "train"]


def cross_entropy(probs: Value, labels: np.ndarray | Value) -> Value:
    """Mean categorical cross-entropy with predictions clamped away from 0/1."""
    target = labels if isinstance(labels, Value) else Value(np.asarray(labels, dtype=probs.data.dtype))
    clamped = probs.clip(CROSS_ENTROPY_CLAMP, 1.0 - CROSS_ENTROPY_CLAMP)
    return -(target * clamped.log()).sum(axis=-1).mean()


class Adam:
    """Adam with bias correction; epsilon sits outside the square root."""

    def __init__(self, params: list[tuple[str, Value]], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-7):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params}
        self.v = {name: np.zeros_like(p.data) for name, p in params}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params:
            grad = p.grad
            if grad is None:
                continue
            if not np.isfinite(grad).all():
                raise TrainingDiverged(f"non-finite gradient in parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad * grad
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()


def _forward_loss(model: Model, batch, cfg: TrainConfig, training: bool, rng=None) -> tuple[Value, int]:
    probs, cut, ortho = model.forward(
        batch.seq, batch.graph, batch.adjacency, training=training, rng=rng
    )
    loss = cross_entropy(probs, batch.labels)
    if cfg.aux_loss_weight != 0.0 and model.config.uses_graph_branch:
        loss = loss + cfg.aux_loss_weight * (cut + ortho)
    correct = int((probs.data.argmax(axis=1) == batch.labels.argmax(axis=1)).sum())
    return loss, correct


def _evaluate_split(model: Model, data: SequenceDataset, cfg: TrainConfig) -> tuple[float, float]:
    total_loss = 0.0
    total_correct = 0
    with no_grad():
        for batch in data.batches(cfg.batch_size):
            loss, correct = _forward_loss(model, batch, cfg, training=False)
            total_loss += float(loss.data) * len(batch.indices)
            total_correct += correct
    return total_loss / data.size, total_correct / data.size


def fit(model: Model, train_data: SequenceDataset, val_data: SequenceDataset, cfg: TrainConfig) -> FitResult:
    """Train, monitoring validation loss.

    Returns the best-validation-loss weights (which may be the initial
    ones: an epoch must strictly improve to displace them). On divergence
    the result carries diverged=True and the last good best-state.
    """
    started = time.monotonic()
    records: list[TrainLogRecord] = []
    lr = cfg.lr_init
    params = list(model.named_parameters())
    optimizer = Adam(params, lr, cfg.beta1, cfg.beta2, cfg.eps)

    def log(epoch: int, split: str, loss: float, accuracy: float) -> None:
        records.append(TrainLogRecord(
            epoch=epoch, split=split, loss=loss, accuracy=accuracy,
            current_lr=lr, wall_time=time.monotonic() - started,
        ))

    # Informational pass with the initial weights; it also seeds the best
    # checkpoint so an entirely unproductive run hands back its input.
    val_loss, val_acc = _evaluate_split(model, val_data, cfg)
    log(0, "val", val_loss, val_acc)
    best_state = get_state(model)
    best_val = val_loss
    best_epoch = 0

    monitor_best = np.inf
    stop_wait = 0
    plateau_wait = 0
    diverged = False
    epochs_run = 0

    for epoch in range(1, cfg.epochs + 1):
        shuffle_rng = np.random.default_rng([cfg.seed, epoch, 0])
        dropout_rng = np.random.default_rng([cfg.seed, epoch, 1])
        optimizer.lr = lr
        epoch_loss = 0.0
        epoch_correct = 0
        try:
            for batch in train_data.batches(cfg.batch_size, rng=shuffle_rng):
                model.zero_grad()
                loss, correct = _forward_loss(model, batch, cfg, training=True, rng=dropout_rng)
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(f"non-finite training loss in epoch {epoch}")
                loss.backward()
                optimizer.step()
                epoch_loss += float(loss.data) * len(batch.indices)
                epoch_correct += correct
        except TrainingDiverged:
            diverged = True
            break
        epochs_run = epoch
        log(epoch, "train", epoch_loss / train_data.size, epoch_correct / train_data.size)

        val_loss, val_acc = _evaluate_split(model, val_data, cfg)
        log(epoch, "val", val_loss, val_acc)
        if not np.isfinite(val_loss):
            diverged = True
            break

        if val_loss < best_val:
            best_val = val_loss
            best_state = get_state(model)
            best_epoch = epoch

        # Keras-style counters: improvement resets, otherwise the plateau
        # counter decays the LR and the stop counter ends the run.
        if val_loss < monitor_best:
            monitor_best = val_loss
            stop_wait = 0
            plateau_wait = 0
        else:
            stop_wait += 1
            plateau_wait += 1
            if plateau_wait >= cfg.plateau_patience:
                lr = max(lr * cfg.lr_decay_factor, cfg.lr_min)
                plateau_wait = 0
            if stop_wait >= cfg.early_stop_patience:
                break

    return FitResult(
        records=records,
        best_state=best_state,
        best_val_loss=best_val,
        best_epoch=best_epoch,
        final_lr=lr,
        epochs_run=epochs_run,
        diverged=diverged,
    )


def finetune(model: Model, train_data: SequenceDataset, val_data: SequenceDataset, cfg: TrainConfig) -> FitResult:
    """Continue training loaded weights under the fine-tune schedule.

    With epochs=0 the returned best state is exactly the input weights.
    """
    return fit(model, train_data, val_data, cfg)
