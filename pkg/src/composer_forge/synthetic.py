"""Synthetic corpus with three trivially separable composer styles.

Each style owns a disjoint pitch-class set and a disjoint velocity band,
so a working model must overfit it quickly.  The corpus exists in two
forms: in-memory note lists for fast tests, and an on-disk tree (MIDI
files + metadata CSV + composer config) that exercises the same paths a
real dataset does.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import ComposerInfo, MetadataRecord
from .pianoroll import PianoRoll, encode
from .smf.parser import NoteEvent
from .smf.writer import write_smf

PIANO_LOW, PIANO_HIGH = 21, 108


@dataclass(frozen=True)
class SyntheticStyle:
    name: str
    born: str
    era: str
    pitch_classes: tuple[int, ...]
    velocity_range: tuple[int, int]   # inclusive bounds


STYLES = (
    SyntheticStyle("Synthetic Alpha", "1700-01-01", "early", (0, 3, 6, 9), (30, 50)),
    SyntheticStyle("Synthetic Beta", "1800-01-01", "middle", (1, 4, 7, 10), (60, 80)),
    SyntheticStyle("Synthetic Gamma", "1900-01-01", "late", (2, 5, 8, 11), (90, 110)),
)

ERA_ORDER = ("early", "middle", "late")


def style_pitches(style: SyntheticStyle) -> np.ndarray:
    pitches = [p for p in range(PIANO_LOW, PIANO_HIGH + 1)
               if p % 12 in style.pitch_classes]
    return np.asarray(pitches)


def make_piece_notes(rng: np.random.Generator, style: SyntheticStyle,
                     duration: float = 60.0, rate: float = 4.0) -> list[NoteEvent]:
    n_notes = int(duration * rate)
    pitches = style_pitches(style)
    onsets = np.sort(rng.uniform(0.0, duration - 1.0, size=n_notes))
    lengths = rng.uniform(0.15, 0.6, size=n_notes)
    pitch_idx = rng.integers(0, len(pitches), size=n_notes)
    lo, hi = style.velocity_range
    velocities = rng.integers(lo, hi + 1, size=n_notes)

    raw = sorted(zip(onsets, pitches[pitch_idx], lengths, velocities),
                 key=lambda r: (r[1], r[0]))
    notes: list[NoteEvent] = []
    for i, (onset, pitch, length, velocity) in enumerate(raw):
        offset = onset + length
        # clip against the next strike of the same pitch; drop exact rearticulations
        if i + 1 < len(raw) and raw[i + 1][1] == pitch:
            offset = min(offset, raw[i + 1][0])
        if offset <= onset:
            continue
        notes.append(NoteEvent(onset_seconds=float(onset), offset_seconds=float(offset),
                               pitch=int(pitch), velocity=int(velocity)))
    notes.sort(key=lambda n: (n.onset_seconds, n.pitch))
    return notes


@dataclass
class SyntheticCorpus:
    records: list[MetadataRecord]
    notes: dict[str, list[NoteEvent]]          # midi_filename -> notes
    composer_meta: dict[str, ComposerInfo]
    era_order: tuple[str, ...] = ERA_ORDER
    seed: int = 0
    _rolls: dict[str, PianoRoll] = field(default_factory=dict, repr=False)

    def roll(self, midi_filename: str) -> PianoRoll:
        if midi_filename not in self._rolls:
            self._rolls[midi_filename] = encode(self.notes[midi_filename])
        return self._rolls[midi_filename]


def make_corpus(seed: int = 0, pieces_per_style: int = 10,
                duration: float = 60.0) -> SyntheticCorpus:
    rng = np.random.default_rng(seed)
    records: list[MetadataRecord] = []
    notes: dict[str, list[NoteEvent]] = {}
    for style in STYLES:
        slug = style.name.split()[-1].lower()
        for i in range(pieces_per_style):
            filename = f"synthetic/{slug}_{i:02d}.midi"
            title = f"{style.name} Study {i:02d}"
            piece_notes = make_piece_notes(rng, style, duration=duration)
            notes[filename] = piece_notes
            records.append(MetadataRecord(
                canonical_composer=style.name,
                canonical_title=title,
                midi_filename=filename,
                duration_seconds=duration,
            ))
    meta = {s.name: ComposerInfo(born=s.born, era=s.era) for s in STYLES}
    return SyntheticCorpus(records=records, notes=notes, composer_meta=meta, seed=seed)


def write_corpus(corpus: SyntheticCorpus, root) -> tuple[Path, Path]:
    """Materialize the corpus on disk: MIDI files, a metadata CSV in the
    same column layout the real dataset uses, and a composer config."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for filename, piece_notes in corpus.notes.items():
        path = root / filename
        path.parent.mkdir(parents=True, exist_ok=True)
        write_smf(path, piece_notes)

    csv_path = root / "synthetic.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["canonical_composer", "canonical_title", "midi_filename", "duration"])
        for rec in corpus.records:
            writer.writerow([rec.canonical_composer, rec.canonical_title,
                             rec.midi_filename, repr(rec.duration_seconds)])

    config_path = root / "composers.json"
    payload = {
        "era_order": list(corpus.era_order),
        "composers": {name: {"born": info.born, "era": info.era}
                      for name, info in corpus.composer_meta.items()},
    }
    config_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return csv_path, config_path
