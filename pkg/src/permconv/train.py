"""Training loop: Adam with per-epoch learning-rate decay and L2 weight decay.

Weight decay never touches the neighbor-mixing parameters; they start at
identity and are regularized only by the data. The loss is computed on
standardized coordinates while the logged validation metric is mean
per-vertex Euclidean error on raw coordinates, so log numbers are in the
dataset's units (mm for scan data).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter, Tensor, save_parameters
from .model import MeshAutoencoder, Normalizer, reconstruction_error

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; message carries the state."""


@dataclass
class TrainConfig:
    lr: float = 0.001
    lr_decay_per_epoch: float = 0.99
    batch_size: int = 32
    epochs: int = 300
    weight_decay: float = 5e-4
    seed: int = 0
    loss: str = "l1"                  # on standardized coordinates
    dtype: str = "f64"
    val_samples: int = 100

    def __post_init__(self):
        if min(self.lr, self.batch_size, self.epochs) <= 0:
            raise ValueError("lr, batch_size and epochs must be positive")
        if not 0 < self.lr_decay_per_epoch <= 1:
            raise ValueError("lr_decay_per_epoch must be in (0, 1]")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.loss not in ("l1", "l2"):
            raise ValueError(f"loss must be 'l1' or 'l2', got {self.loss!r}")
        if self.dtype not in ("f32", "f64"):
            raise ValueError(f"dtype must be 'f32' or 'f64', got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "f64" else np.float32

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay_per_epoch ** epoch


class Adam:
    """Adam with coupled L2 weight decay added to the gradient.

    Parameters flagged decay_exempt skip the decay term entirely, so a
    step with decay equals the no-decay step for them. Non-trainable
    parameters are ignored.
    """

    def __init__(self, params, lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay and not p.decay_exempt:
                g = g + self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)   # (epoch, lr, train_loss, val_error_mm)
    best_epoch: int = -1
    best_val_error: float = float("inf")

    def append(self, epoch, lr, train_loss, val_error):
        self.rows.append((epoch, lr, train_loss, val_error))

    def to_csv(self, path) -> None:
        with open(str(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "lr", "train_loss", "val_error_mm"])
            for epoch, lr, train_loss, val_error in self.rows:
                writer.writerow([epoch, format(lr, ".17g"),
                                 format(train_loss, ".17g"), format(val_error, ".17g")])


def read_log(path) -> TrainingLog:
    log = TrainingLog()
    with open(str(path), newline="") as fh:
        for row in csv.DictReader(fh):
            log.append(int(row["epoch"]), float(row["lr"]),
                       float(row["train_loss"]), float(row["val_error_mm"]))
    for epoch, _, _, val in log.rows:
        if val < log.best_val_error:
            log.best_val_error = val
            log.best_epoch = epoch
    return log


def validation_split(num_samples: int, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """(val, fit) index arrays; a function of (seed, num_samples) only.

    Kept separate from the epoch shuffling stream so an evaluation run can
    rebuild the exact split a finished training run used.
    """
    rng = np.random.default_rng(config.seed)
    n_val = min(config.val_samples, num_samples - 1) if num_samples > 1 else 0
    perm = rng.permutation(num_samples)
    return perm[:n_val], perm[n_val:]


def _loss(pred: Tensor, target: Tensor, kind: str) -> Tensor:
    diff = pred - target
    if kind == "l1":
        return diff.abs().mean()
    return (diff * diff).mean()


def evaluate(model: MeshAutoencoder, normalizer: Normalizer, raw: np.ndarray,
             batch_size: int = 32) -> float:
    """Mean per-vertex Euclidean error of the model on raw coordinates."""
    raw = np.asarray(raw)
    total = 0.0
    for start in range(0, raw.shape[0], batch_size):
        chunk = raw[start:start + batch_size]
        std = normalizer.normalize(chunk).astype(model.dtype)
        pred = normalizer.denormalize(model(std))
        total += reconstruction_error(pred, chunk) * chunk.shape[0]
    return total / raw.shape[0]


def train(model: MeshAutoencoder, train_raw: np.ndarray, config: TrainConfig, *,
          normalizer: Normalizer | None = None, checkpoint_path=None,
          log_path=None) -> tuple[TrainingLog, Normalizer]:
    """Fit the model; returns the log and the normalizer actually used.

    Validation is min(val_samples, S-1) samples drawn from the training
    set by the config seed and removed from the gradient batches; with a
    single training sample the train split doubles as validation. The
    best-validation parameters are restored into the model at the end and
    written to checkpoint_path (with the normalizer stats) when given.
    """
    train_raw = np.asarray(train_raw, dtype=np.float64)
    if train_raw.ndim != 3 or train_raw.shape[0] < 1:
        raise ValueError(f"expected a non-empty (S, N, 3) train set, got {train_raw.shape}")
    if train_raw.shape[1] != model.level_sizes[0]:
        raise ValueError(f"dataset has {train_raw.shape[1]} vertices, "
                         f"model template has {model.level_sizes[0]}")
    if normalizer is None:
        normalizer = Normalizer().fit(train_raw)

    s = train_raw.shape[0]
    val_idx, fit_idx = validation_split(s, config)
    val_raw = train_raw[val_idx] if len(val_idx) else train_raw
    fit_raw = train_raw[fit_idx]
    rng = np.random.default_rng([config.seed, 1])  # epoch shuffles only
    fit_std = normalizer.normalize(fit_raw).astype(config.np_dtype)

    optimizer = Adam(model.parameters(), config.lr, weight_decay=config.weight_decay)
    log = TrainingLog()
    best_state: dict | None = None

    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        optimizer.lr = lr
        order = rng.permutation(fit_std.shape[0])
        loss_sum = 0.0
        for bi, start in enumerate(range(0, len(order), config.batch_size)):
            batch = fit_std[order[start:start + config.batch_size]]
            target = Tensor(batch.copy())
            optimizer.zero_grad()
            loss = _loss(model(Tensor(batch)), target, config.loss)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {bi}, lr {lr:.6g}")
            loss.backward()
            optimizer.step()
            loss_sum += value * batch.shape[0]
        train_loss = loss_sum / fit_std.shape[0]
        val_error = evaluate(model, normalizer, val_raw, config.batch_size)
        log.append(epoch, lr, train_loss, val_error)
        if val_error < log.best_val_error:
            log.best_val_error = val_error
            log.best_epoch = epoch
            best_state = {p.name: p.data.copy() for p in model.parameters()}
        if epoch % 10 == 0 or epoch == config.epochs - 1:
            logger.info("epoch %d lr %.6g train %.6g val %.6g mm",
                        epoch, lr, train_loss, val_error)

    if best_state is not None:
        for p in model.parameters():
            p.data = best_state[p.name]
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, normalizer)
    if log_path is not None:
        log.to_csv(log_path)
    return log, normalizer


def save_checkpoint(path, model: MeshAutoencoder, normalizer: Normalizer) -> None:
    """Model weights and normalizer statistics in one parameter container."""
    params: list[Parameter] = list(model.parameters()) + normalizer.as_parameters()
    save_parameters(path, params)
