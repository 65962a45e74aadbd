"""MAESTRO-style metadata ingestion, composer filtering/labeling, and the
deterministic stratified train/test split.

A "piece" is a unique (composer, canonical title) pair.  MAESTRO holds
several performances of many titles; we keep one representative recording
per title (lexicographically smallest midi_filename) so piece counts
match the unique-title convention.  Composers are kept only when they own
strictly more than 16 unique titles, and the label vocabulary is ordered
by composer birth date ascending.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from importlib import resources
from math import floor
from pathlib import Path

import numpy as np

from composer_forge.errors import DatasetError

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("canonical_composer", "canonical_title", "midi_filename", "duration")
MULTI_COMPOSER_SEPARATOR = "/"
DEFAULT_TITLE_THRESHOLD = 16  # keep composers with strictly more unique titles
DEFAULT_EVAL_SEGMENTS = 90


@dataclass(frozen=True)
class MetadataRecord:
    canonical_composer: str
    canonical_title: str
    midi_filename: str
    duration_seconds: float
    source_split: str = ""


@dataclass(frozen=True)
class ComposerInfo:
    born: str   # ISO date, used only for ordering and birth-year analysis
    era: str

    @property
    def birth_year(self) -> int:
        return int(self.born[:4])


@dataclass
class Piece:
    composer_label: int
    canonical_title: str
    midi_filename: str
    n_eval_segments: int = DEFAULT_EVAL_SEGMENTS


@dataclass
class SplitManifest:
    label_vocab: list[str]
    seed: int
    train: list[Piece]
    test: list[Piece]
    ratio: float = 0.7
    composer_meta: dict[str, ComposerInfo] = field(default_factory=dict)

    def class_counts(self, pieces: list[Piece]) -> list[int]:
        counts = [0] * len(self.label_vocab)
        for piece in pieces:
            counts[piece.composer_label] += 1
        return counts

    @property
    def train_counts(self) -> list[int]:
        return self.class_counts(self.train)

    @property
    def test_counts(self) -> list[int]:
        return self.class_counts(self.test)


def load_composer_meta(path=None) -> dict[str, ComposerInfo]:
    """Composer -> (birth date, era) from a JSON config; the packaged file
    covers every composer MAESTRO's filters can keep."""
    if path is None:
        payload = json.loads(
            resources.files("composer_forge.data").joinpath("composers.json").read_text("utf-8"))
    else:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    era_order = payload.get("era_order", ["baroque", "classical", "romantic", "modern"])
    meta = {}
    for name, entry in payload["composers"].items():
        era = entry["era"]
        if era not in era_order:
            raise DatasetError(f"composer config: unknown era {era!r} for {name}")
        meta[name] = ComposerInfo(born=entry["born"], era=era)
    return meta


def load_metadata(path) -> list[MetadataRecord]:
    """Read a MAESTRO-format CSV.  Rows missing a required field are
    dropped with a diagnostic; a missing column is an error."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"metadata CSV not found: {path}")
    records = []
    dropped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise DatasetError(f"{path}: missing required columns {missing}")
        for row in reader:
            values = {c: (row.get(c) or "").strip() for c in REQUIRED_COLUMNS}
            if not all(values[c] for c in REQUIRED_COLUMNS):
                dropped += 1
                continue
            try:
                duration = float(values["duration"])
            except ValueError:
                dropped += 1
                continue
            if duration <= 0:
                dropped += 1
                continue
            records.append(MetadataRecord(
                canonical_composer=values["canonical_composer"],
                canonical_title=values["canonical_title"],
                midi_filename=values["midi_filename"],
                duration_seconds=duration,
                source_split=(row.get("split") or "").strip(),
            ))
    if dropped:
        log.warning("%s: dropped %d rows with missing/invalid fields", path, dropped)
    return records


def is_multi_composer(name: str, separator: str = MULTI_COMPOSER_SEPARATOR) -> bool:
    return separator in name


def filter_and_label(
    records,
    composer_meta: dict[str, ComposerInfo],
    title_threshold: int = DEFAULT_TITLE_THRESHOLD,
    separator: str = MULTI_COMPOSER_SEPARATOR,
    n_eval_segments: int = DEFAULT_EVAL_SEGMENTS,
) -> tuple[dict[str, list[Piece]], list[str]]:
    """Drop multi-composer rows, dedup recordings to one piece per unique
    title, keep composers with more than `title_threshold` titles, and
    label classes in birth-date order.

    Returns (composer -> pieces, label vocabulary).  Idempotent and
    independent of the input row order.
    """
    by_title: dict[tuple[str, str], str] = {}
    for rec in records:
        if is_multi_composer(rec.canonical_composer, separator):
            continue
        key = (rec.canonical_composer, rec.canonical_title)
        current = by_title.get(key)
        if current is None or rec.midi_filename < current:
            by_title[key] = rec.midi_filename

    titles_by_composer: dict[str, list[tuple[str, str]]] = {}
    for (composer, title), filename in by_title.items():
        titles_by_composer.setdefault(composer, []).append((title, filename))

    kept = {c: t for c, t in titles_by_composer.items() if len(t) > title_threshold}

    missing = sorted(c for c in kept if c not in composer_meta)
    if missing:
        raise DatasetError(
            "no birth date/era configured for: " + ", ".join(missing)
            + " (extend the composer config file)")

    vocab = sorted(kept, key=lambda c: (composer_meta[c].born, c))
    grouped: dict[str, list[Piece]] = {}
    for label, composer in enumerate(vocab):
        pieces = [
            Piece(composer_label=label, canonical_title=title,
                  midi_filename=filename, n_eval_segments=n_eval_segments)
            for title, filename in sorted(kept[composer])
        ]
        grouped[composer] = pieces
    return grouped, vocab


def _allocate_train_counts(sizes: list[int], ratio: float,
                           target_train: int | None) -> list[int]:
    """Per-class train counts: round(ratio * n) baseline, then a
    largest-remainder correction moving boundary pieces until the global
    train total hits the target.

    The default target is sum(floor(ratio * n_c)), the allocation that
    reproduces the reference 347/158 totals on the full corpus.
    """
    quotas = [ratio * n for n in sizes]
    alloc = [round(q) for q in quotas]
    if target_train is None:
        target_train = sum(floor(q) for q in quotas)
    if not 0 <= target_train <= sum(sizes):
        raise DatasetError(f"target_train {target_train} outside [0, {sum(sizes)}]")

    while sum(alloc) > target_train:
        movable = [i for i in range(len(alloc)) if alloc[i] > 0]
        if not movable:
            break
        i = max(movable, key=lambda j: (alloc[j] - quotas[j], -j))
        alloc[i] -= 1
    while sum(alloc) < target_train:
        movable = [i for i in range(len(alloc)) if alloc[i] < sizes[i]]
        if not movable:
            break
        i = max(movable, key=lambda j: (quotas[j] - alloc[j], -j))
        alloc[i] += 1
    return alloc


def stratified_split(
    grouped: dict[str, list[Piece]],
    label_vocab: list[str],
    seed: int,
    ratio: float = 0.7,
    target_train: int | None = None,
    composer_meta: dict[str, ComposerInfo] | None = None,
) -> SplitManifest:
    """Shuffle each class with one seeded generator and split it
    train/test at the allocated boundary.  Deterministic for a fixed seed;
    no canonical title ever lands on both sides."""
    if not 0.0 < ratio < 1.0:
        raise DatasetError(f"split ratio must be in (0, 1), got {ratio}")
    for composer in label_vocab:
        if len(grouped[composer]) < 2:
            raise DatasetError(f"class {composer!r} has fewer than 2 pieces")

    sizes = [len(grouped[c]) for c in label_vocab]
    alloc = _allocate_train_counts(sizes, ratio, target_train)

    rng = np.random.default_rng(seed)
    train: list[Piece] = []
    test: list[Piece] = []
    for composer, n_train in zip(label_vocab, alloc):
        pieces = grouped[composer]
        order = rng.permutation(len(pieces))
        shuffled = [pieces[i] for i in order]
        train.extend(shuffled[:n_train])
        test.extend(shuffled[n_train:])

    meta = {}
    if composer_meta is not None:
        meta = {c: composer_meta[c] for c in label_vocab}
    return SplitManifest(label_vocab=list(label_vocab), seed=seed,
                         train=train, test=test, ratio=ratio,
                         composer_meta=meta)


# --- manifest (de)serialization -------------------------------------------

def manifest_to_dict(manifest: SplitManifest) -> dict:
    return {
        "label_vocab": manifest.label_vocab,
        "seed": manifest.seed,
        "ratio": manifest.ratio,
        "composers": {name: asdict(info) for name, info in manifest.composer_meta.items()},
        "train": [asdict(p) for p in manifest.train],
        "test": [asdict(p) for p in manifest.test],
    }


def save_manifest(path, manifest: SplitManifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest_to_dict(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> SplitManifest:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"split manifest not found: {path}")
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        return SplitManifest(
            label_vocab=payload["label_vocab"],
            seed=payload["seed"],
            ratio=payload.get("ratio", 0.7),
            composer_meta={name: ComposerInfo(**info)
                           for name, info in payload.get("composers", {}).items()},
            train=[Piece(**p) for p in payload["train"]],
            test=[Piece(**p) for p in payload["test"]],
        )
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"{path}: not a valid split manifest ({exc})") from exc
