"""SGD training loop: momentum + weight decay, cosine-annealed LR.

Each epoch visits every training piece once in a seeded-shuffled order
and draws one fresh random segment per piece, so segment diversity comes
from the epoch count rather than a precomputed crop set.  Validation
weighted F1 is computed every epoch on the held-out side of the split;
best-by-F1 and last checkpoints are kept.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import SplitManifest
from .errors import ConfigError, OptimizerError, TrainingDivergedError
from .evaluation import evaluate
from .nn import functional as F
from .nn.autodiff import Tensor
from .nn.checkpoint import save_checkpoint
from .nn.resnet import ModelConfig, ResNet, build_model
from .pianoroll import VARIANT_CHANNELS, PianoRoll, sample_training_segment

LOG_COLUMNS = ("epoch", "lr", "train_loss", "train_acc", "val_f1")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.01
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 16
    epochs: int = 100
    seed: int = 0
    val_segments: int = 10
    schedule: str = "epoch"   # cosine step granularity: "epoch" or "step"

    def __post_init__(self):
        if self.lr0 < 0 or self.lr_min < 0:
            raise ConfigError("learning rates must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 (batch-norm statistics)")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.val_segments < 1:
            raise ConfigError(f"val_segments must be positive, got {self.val_segments}")
        if self.schedule not in ("epoch", "step"):
            raise ConfigError(f"schedule must be 'epoch' or 'step', got {self.schedule!r}")


def cosine_lr(t: int, total: int, lr0: float, lr_min: float = 0.0) -> float:
    if total <= 0:
        raise ConfigError(f"schedule horizon must be positive, got {total}")
    if not 0 <= t <= total:
        raise ConfigError(f"schedule step {t} outside [0, {total}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + np.cos(np.pi * t / total))


class SgdOptimizer:
    """Classical SGD: g' = g + wd*p, v = m*v + g', p = p - lr*v."""

    def __init__(self, params: dict[str, Tensor], momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.params = dict(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocities = {name: np.zeros_like(t.data) for name, t in self.params.items()}

    def step(self, lr: float) -> None:
        for name, t in self.params.items():
            if t.grad is None:
                raise OptimizerError(f"parameter {name!r} has no gradient")
            g = t.grad
            if self.weight_decay:
                g = g + self.weight_decay * t.data
            v = self.velocities[name]
            v *= self.momentum
            v += g
            t.data -= lr * v

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()


@dataclass
class TrainResult:
    run_dir: Path
    log_rows: list[dict] = field(default_factory=list)
    best_val_f1: float = float("-inf")
    best_epoch: int = -1
    config_hash: str = ""

    @property
    def final_train_acc(self) -> float:
        return self.log_rows[-1]["train_acc"] if self.log_rows else 0.0


def config_hash_of(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _format_cell(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _epoch_batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    # a trailing single segment cannot feed batch norm; fold it into the
    # previous batch instead of dropping the piece
    if len(batches) >= 2 and len(batches[-1]) == 1:
        batches[-2:] = [np.concatenate(batches[-2:])]
    return batches


def fit(manifest: SplitManifest, roll_loader: Callable[[str], PianoRoll],
        model_config: ModelConfig, train_config: TrainConfig, run_dir,
        variant: str = "full", config_extra: dict | None = None) -> TrainResult:
    if VARIANT_CHANNELS.get(variant) != model_config.in_channels:
        raise ConfigError(
            f"variant {variant!r} produces {VARIANT_CHANNELS.get(variant)} channels "
            f"but the model expects {model_config.in_channels}")
    if len(manifest.train) < 2:
        raise ConfigError("training needs at least 2 pieces")
    if not manifest.test:
        raise ConfigError("manifest has no held-out pieces for validation")
    if model_config.n_classes != len(manifest.label_vocab):
        raise ConfigError(
            f"model predicts {model_config.n_classes} classes but the manifest "
            f"vocabulary lists {len(manifest.label_vocab)}")

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    payload = {
        "model": dataclasses.asdict(model_config),
        "train": dataclasses.asdict(train_config),
        "variant": variant,
        "split_seed": manifest.seed,
        "label_vocab": list(manifest.label_vocab),
        "extra": config_extra or {},
    }
    chash = config_hash_of(payload)
    payload["config_hash"] = chash
    (run_dir / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    model = build_model(model_config, seed=train_config.seed)
    optimizer = SgdOptimizer(model.named_parameters(),
                             momentum=train_config.momentum,
                             weight_decay=train_config.weight_decay)

    shuffle_ss, segment_ss = np.random.SeedSequence(train_config.seed).spawn(2)
    rng_shuffle = np.random.default_rng(shuffle_ss)
    rng_segment = np.random.default_rng(segment_ss)

    pieces = manifest.train
    n_train = len(pieces)
    steps_per_epoch = len(_epoch_batches(np.arange(n_train), train_config.batch_size))
    total_steps = train_config.epochs * steps_per_epoch

    result = TrainResult(run_dir=run_dir, config_hash=chash)
    ckpt_extra = {"config_hash": chash, "variant": variant,
                  "label_vocab": list(manifest.label_vocab)}
    global_step = 0

    with open(run_dir / "log.csv", "w", newline="") as log_fh:
        log_fh.write(",".join(LOG_COLUMNS) + "\n")
        for epoch in range(train_config.epochs):
            lr = cosine_lr(epoch, train_config.epochs,
                           train_config.lr0, train_config.lr_min)
            order = rng_shuffle.permutation(n_train)
            loss_sum = 0.0
            correct = 0
            model.train()
            for batch_idx in _epoch_batches(order, train_config.batch_size):
                if train_config.schedule == "step":
                    lr = cosine_lr(global_step, total_steps,
                                   train_config.lr0, train_config.lr_min)
                segments, labels = [], []
                for i in batch_idx:
                    piece = pieces[int(i)]
                    roll = roll_loader(piece.midi_filename)
                    seg = sample_training_segment(roll, rng_segment, variant=variant,
                                                  piece_id=piece.midi_filename)
                    segments.append(seg.data)
                    labels.append(piece.composer_label)
                batch = np.stack(segments)
                y = np.asarray(labels)

                model.zero_grad()
                logits = model(batch)
                loss = F.cross_entropy(logits, y)
                if not np.isfinite(loss.data):
                    raise TrainingDivergedError(
                        f"non-finite loss {float(loss.data)} at epoch {epoch}, "
                        f"step {global_step} (lr={lr})")
                loss.backward()
                optimizer.step(lr)
                global_step += 1

                loss_sum += loss.item() * len(batch_idx)
                correct += int((logits.data.argmax(axis=1) == y).sum())

            val_report = evaluate(model, manifest.test, manifest.label_vocab,
                                  roll_loader, train_config.val_segments,
                                  variant=variant)
            row = {
                "epoch": epoch,
                "lr": float(lr),
                "train_loss": loss_sum / n_train,
                "train_acc": correct / n_train,
                "val_f1": val_report.weighted_f1,
            }
            result.log_rows.append(row)
            log_fh.write(",".join(_format_cell(row[c]) for c in LOG_COLUMNS) + "\n")
            log_fh.flush()

            save_checkpoint(run_dir / "last.ckpt", model,
                            extra={**ckpt_extra, "epoch": epoch,
                                   "val_f1": val_report.weighted_f1})
            if val_report.weighted_f1 > result.best_val_f1:
                result.best_val_f1 = val_report.weighted_f1
                result.best_epoch = epoch
                save_checkpoint(run_dir / "best.ckpt", model,
                                extra={**ckpt_extra, "epoch": epoch,
                                       "val_f1": val_report.weighted_f1})
    return result
