"""Piece-level prediction and metrics.

A recording is scored by running the model over n fixed segment windows
and majority-voting the per-segment argmaxes.  Vote ties fall back to
the highest summed probability among the tied classes, then to the
lowest class index, so a result never depends on iteration order.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import ComposerInfo, Piece
from .errors import ConfigError, MetricError, ShapeError
from .nn import functional as F
from .nn.autodiff import no_grad
from .nn.resnet import ResNet
from .pianoroll import VARIANT_CHANNELS, PianoRoll, cut, segment_positions

_FORWARD_CHUNK = 16   # segments per forward pass, bounds im2col memory


@dataclass
class PiecePrediction:
    piece_id: str
    segment_probs: np.ndarray    # [n_segments, n_classes], rows sum to 1
    vote_counts: np.ndarray      # [n_classes] int
    final_label: int


def resolve_votes(vote_counts: np.ndarray, prob_sums: np.ndarray) -> int:
    """Argmax of votes; ties by summed probability, then lowest index."""
    vote_counts = np.asarray(vote_counts)
    prob_sums = np.asarray(prob_sums, dtype=np.float64)
    if vote_counts.shape != prob_sums.shape:
        raise ShapeError(f"vote/prob shape mismatch: {vote_counts.shape} vs {prob_sums.shape}")
    top = vote_counts.max()
    tied = np.flatnonzero(vote_counts == top)
    if len(tied) == 1:
        return int(tied[0])
    tied_sums = prob_sums[tied]
    best = tied_sums.max()
    winners = tied[tied_sums == best]
    return int(winners.min())


def predict_segments(model: ResNet, batch: np.ndarray) -> np.ndarray:
    """Eval-mode class probabilities for a stack of segments, float64."""
    was_training = model.training
    model.eval()
    try:
        probs = []
        with no_grad():
            for start in range(0, batch.shape[0], _FORWARD_CHUNK):
                logits = model(batch[start:start + _FORWARD_CHUNK])
                probs.append(F.softmax(logits.data.astype(np.float64)))
        return np.concatenate(probs, axis=0)
    finally:
        if was_training:
            model.train()


def predict_piece(model: ResNet, roll: PianoRoll, n_segments: int,
                  variant: str = "full", piece_id: str = "") -> PiecePrediction:
    if n_segments < 1:
        raise MetricError(f"n_segments must be at least 1, got {n_segments}")
    if VARIANT_CHANNELS[variant] != model.config.in_channels:
        raise ShapeError(
            f"variant {variant!r} produces {VARIANT_CHANNELS[variant]} channels, "
            f"model expects {model.config.in_channels}")
    positions = segment_positions(roll.n_bins, n_segments)
    batch = np.stack([cut(roll, p, variant=variant, piece_id=piece_id).data
                      for p in positions])
    probs = predict_segments(model, batch)
    votes = np.bincount(probs.argmax(axis=1), minlength=probs.shape[1])
    final = resolve_votes(votes, probs.sum(axis=0))
    return PiecePrediction(piece_id=piece_id, segment_probs=probs,
                           vote_counts=votes, final_label=final)


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int],
                     n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred, strict=True):
        cm[t, p] += 1
    return cm


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    cm = np.asarray(cm)
    diag = np.diag(cm).astype(np.float64)
    col = cm.sum(axis=0).astype(np.float64)
    row = cm.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(col > 0, diag / col, 0.0)
        recall = np.where(row > 0, diag / row, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return f1


def weighted_f1(cm: np.ndarray) -> float:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ShapeError(f"confusion matrix must be square, got {cm.shape}")
    support = cm.sum(axis=1)
    total = support.sum()
    if total == 0:
        raise MetricError("confusion matrix is all zero")
    return float((per_class_f1(cm) * support).sum() / total)


def fractional_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the average of their positions."""
    arr = np.asarray(values, dtype=np.float64)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(len(arr), dtype=np.float64)
    i = 0
    while i < len(arr):
        j = i
        while j + 1 < len(arr) and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"spearman needs two equal-length vectors, got {x.shape}, {y.shape}")
    if len(x) < 2:
        raise MetricError("spearman needs at least two observations")
    rx = fractional_ranks(x)
    ry = fractional_ranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sx = np.sqrt((dx * dx).sum())
    sy = np.sqrt((dy * dy).sum())
    if sx == 0.0 or sy == 0.0:
        raise MetricError("spearman undefined: zero rank variance")
    return float((dx * dy).sum() / (sx * sy))


def era_blocks_from_vocab(label_vocab: Sequence[str],
                          composer_meta: dict[str, ComposerInfo],
                          era_order: Sequence[str]) -> list[tuple[str, tuple[int, int]]]:
    """Contiguous [start, end) index ranges per era, in vocab order."""
    eras = []
    for name in label_vocab:
        if name not in composer_meta:
            raise MetricError(f"composer {name!r} missing from composer config")
        eras.append(composer_meta[name].era)
    blocks: list[tuple[str, tuple[int, int]]] = []
    start = 0
    for i in range(1, len(eras) + 1):
        if i == len(eras) or eras[i] != eras[start]:
            blocks.append((eras[start], (start, i)))
            start = i
    seen = [era for era, _ in blocks]
    if len(set(seen)) != len(seen):
        raise MetricError(f"era blocks are not contiguous in vocab order: {seen}")
    known = [e for e in era_order if e in seen]
    if seen != known:
        raise MetricError(f"era blocks out of declared order: {seen} vs {known}")
    return blocks


def era_analysis(cm: np.ndarray,
                 blocks: Sequence[tuple[str, tuple[int, int]]]) -> tuple[int, int, int]:
    """Count nonzero off-diagonal cells within vs across era blocks."""
    cm = np.asarray(cm)
    n = cm.shape[0]
    owner = np.full(n, -1)
    for b, (_, (start, end)) in enumerate(blocks):
        owner[start:end] = b
    if (owner < 0).any():
        raise MetricError("era blocks do not cover every class")
    within = cross = 0
    for i in range(n):
        for j in range(n):
            if i != j and cm[i, j] != 0:
                if owner[i] == owner[j]:
                    within += 1
                else:
                    cross += 1
    return within, cross, within + cross


@dataclass
class EvalReport:
    label_vocab: list[str]
    confusion: np.ndarray
    per_class_f1: np.ndarray
    weighted_f1: float
    piece_accuracy: float
    spearman_birthyear: float | None
    spearman_classsize: float | None
    era_blocks: list[tuple[str, tuple[int, int]]]
    within_era_errors: int
    cross_era_errors: int
    misclassified_pairs: int
    n_segments_used: int


def evaluate(model: ResNet, pieces: Sequence[Piece], label_vocab: Sequence[str],
             roll_loader: Callable[[str], PianoRoll], n_segments: int,
             variant: str = "full",
             composer_meta: dict[str, ComposerInfo] | None = None,
             era_order: Sequence[str] | None = None,
             train_class_counts: Sequence[int] | None = None) -> EvalReport:
    if not pieces:
        raise MetricError("nothing to evaluate: empty piece list")
    if model.config.n_classes != len(label_vocab):
        raise ConfigError(
            f"model predicts {model.config.n_classes} classes but the "
            f"vocabulary lists {len(label_vocab)}")
    y_true, y_pred = [], []
    for piece in pieces:
        roll = roll_loader(piece.midi_filename)
        pred = predict_piece(model, roll, n_segments, variant=variant,
                             piece_id=piece.midi_filename)
        y_true.append(piece.composer_label)
        y_pred.append(pred.final_label)

    k = len(label_vocab)
    cm = confusion_matrix(y_true, y_pred, k)
    f1s = per_class_f1(cm)
    accuracy = float(np.trace(cm) / cm.sum())

    def safe_spearman(x, y):
        try:
            return spearman(x, y)
        except MetricError:
            return None

    sp_birth = None
    blocks: list[tuple[str, tuple[int, int]]] = []
    within = cross = total = 0
    if composer_meta is not None:
        birth_years = [composer_meta[name].birth_year for name in label_vocab]
        sp_birth = safe_spearman(birth_years, f1s)
        if era_order is not None:
            blocks = era_blocks_from_vocab(label_vocab, composer_meta, era_order)
            within, cross, total = era_analysis(cm, blocks)
    sp_size = None
    if train_class_counts is not None:
        sp_size = safe_spearman(np.asarray(train_class_counts, dtype=np.float64), f1s)

    return EvalReport(
        label_vocab=list(label_vocab),
        confusion=cm,
        per_class_f1=f1s,
        weighted_f1=weighted_f1(cm),
        piece_accuracy=accuracy,
        spearman_birthyear=sp_birth,
        spearman_classsize=sp_size,
        era_blocks=blocks,
        within_era_errors=within,
        cross_era_errors=cross,
        misclassified_pairs=total,
        n_segments_used=n_segments,
    )


def report_to_dict(report: EvalReport) -> dict:
    d = dataclasses.asdict(report)
    d["confusion"] = report.confusion.tolist()
    d["per_class_f1"] = [float(v) for v in report.per_class_f1]
    d["era_blocks"] = [[era, [start, end]] for era, (start, end) in report.era_blocks]
    return d


def write_report(run_dir, report: EvalReport) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "report.json").write_text(
        json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n")

    with open(run_dir / "confusion.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + report.label_vocab)
        for name, row in zip(report.label_vocab, report.confusion):
            writer.writerow([name] + [int(v) for v in row])

    with open(run_dir / "per_class_f1.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["composer", "f1", "support"])
        support = report.confusion.sum(axis=1)
        for name, f1, sup in zip(report.label_vocab, report.per_class_f1, support):
            writer.writerow([name, repr(float(f1)), int(sup)])


SEGMENT_GRID = (5, 10, 20, 30, 60, 90)


def ablation_segment_sweep(model: ResNet, pieces: Sequence[Piece],
                           label_vocab: Sequence[str],
                           roll_loader: Callable[[str], PianoRoll],
                           grid: Sequence[int] = SEGMENT_GRID,
                           variant: str = "full") -> list[tuple[str, str, float]]:
    """Re-scores one trained model at several vote counts; no retraining."""
    rows = []
    for n in grid:
        report = evaluate(model, pieces, label_vocab, roll_loader, n, variant=variant)
        rows.append(("n_segments", str(n), report.weighted_f1))
    return rows


def ablation_variant_rows(models: dict[str, ResNet], pieces: Sequence[Piece],
                          label_vocab: Sequence[str],
                          roll_loader: Callable[[str], PianoRoll],
                          n_segments: int) -> list[tuple[str, str, float]]:
    rows = []
    for variant, model in models.items():
        report = evaluate(model, pieces, label_vocab, roll_loader, n_segments,
                          variant=variant)
        rows.append(("variant", variant, report.weighted_f1))
    return rows


def write_ablation_csv(path, rows: Sequence[tuple[str, str, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "setting", "weighted_f1"])
        for axis, setting, value in rows:
            writer.writerow([axis, setting, repr(float(value))])
