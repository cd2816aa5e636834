"""Mini-batch SGD training, evaluation metrics, and checkpointing.

Training mutates model parameters in place (single writer); everything else
in the toolkit treats models as frozen. Runs are deterministic under the
config seed: the shuffle order is drawn from one generator and updates are
applied sequentially.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import tensor as T
from .data import Dataset, TriggerSpec, apply_trigger
from .exceptions import TrainingDiverged, ValidationError
from .models import Model, save_model

EVAL_BATCH = 256


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    checkpoint_every: int = 0          # 0 disables checkpointing
    checkpoint_dir: Optional[str] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        # learning_rate == 0 is allowed: it makes "training changes nothing"
        # an observable contract.
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")
        if self.checkpoint_every and not self.checkpoint_dir:
            raise ValidationError("checkpoint_every needs a checkpoint_dir")


@dataclass
class TrainRecord:
    epochs: List[int] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    clean_accuracy: List[float] = field(default_factory=list)
    trigger_success: List[Optional[float]] = field(default_factory=list)
    checkpoint_paths: List[Optional[str]] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "clean_acc", "trigger_success"])
            for i, epoch in enumerate(self.epochs):
                success = self.trigger_success[i]
                writer.writerow([epoch, f"{self.losses[i]:.6f}",
                                 f"{self.clean_accuracy[i]:.6f}",
                                 "" if success is None else f"{success:.6f}"])


def _forward_batch(model: Model, images: np.ndarray) -> np.ndarray:
    return model.forward(images).data


def evaluate_accuracy(model: Model, dataset: Dataset) -> float:
    """Fraction of items whose argmax logit matches the label."""
    n = len(dataset)
    if n == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    hits = 0
    for start in range(0, n, EVAL_BATCH):
        batch = dataset.images[start:start + EVAL_BATCH]
        preds = _forward_batch(model, batch).argmax(axis=1)
        hits += int((preds == dataset.labels[start:start + EVAL_BATCH]).sum())
    return hits / n


def trigger_success_rate(model: Model, dataset: Dataset,
                         trigger: TriggerSpec) -> float:
    """Fraction of non-target-class items redirected to the target class when
    the trigger is applied. Items already labeled with the target class are
    excluded so correct predictions cannot inflate the rate."""
    keep = dataset.labels != trigger.target_class
    if not keep.any():
        raise ValidationError("no items left after excluding the target class")
    images = dataset.images[keep]
    hits = 0
    for start in range(0, len(images), EVAL_BATCH):
        batch = apply_trigger(images[start:start + EVAL_BATCH], trigger)
        preds = _forward_batch(model, batch).argmax(axis=1)
        hits += int((preds == trigger.target_class).sum())
    return hits / len(images)


def train(model: Model, train_set: Dataset, test_set: Dataset,
          cfg: TrainConfig, trigger: Optional[TriggerSpec] = None) -> TrainRecord:
    """SGD with momentum on cross-entropy; returns the per-epoch record.

    When ``trigger`` is given, the record also tracks its success rate on the
    test split. Aborts with :class:`TrainingDiverged` if the loss goes
    non-finite.
    """
    if train_set.image_shape != model.input_shape:
        raise ValidationError(f"dataset images {train_set.image_shape} do not "
                              f"match model input {model.input_shape}")
    rng = np.random.default_rng(cfg.seed)
    velocity = {name: np.zeros_like(p.data) for name, p in model.params.items()}
    lr = np.float32(cfg.learning_rate)
    mu = np.float32(cfg.momentum)
    record = TrainRecord()
    n = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            images = train_set.images[idx]
            labels = train_set.labels[idx]
            model.zero_grad()
            with T.Tape():
                logits = model.forward(images)
                loss = T.cross_entropy_loss(logits, labels)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise TrainingDiverged(epoch, bi)
            T.backward(loss)
            if lr != 0.0:
                for name, p in model.params.items():
                    v = velocity[name]
                    v *= mu
                    v -= lr * p.grad
                    p.data += v
            loss_sum += loss_val * len(idx)
        record.epochs.append(epoch)
        record.losses.append(loss_sum / n)
        record.clean_accuracy.append(evaluate_accuracy(model, test_set))
        record.trigger_success.append(
            trigger_success_rate(model, test_set, trigger) if trigger else None)
        ckpt = None
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            os.makedirs(cfg.checkpoint_dir, exist_ok=True)
            ckpt = os.path.join(cfg.checkpoint_dir, f"epoch_{epoch:03d}.nrtm")
            model.metadata["epoch"] = epoch
            save_model(model, ckpt)
        record.checkpoint_paths.append(ckpt)
    return record
