"""Onset/frame piano-roll encoding, fixed-length segmenting, and the
on-disk roll cache.

A roll holds two time x pitch planes at 0.05 s per bin: a binary onset
plane and a frame plane carrying MIDI velocity (0-127) for every bin a
note sounds in.  Segments are 400-bin (20 s) windows, zero-padded past
the end of the recording, in one of three variants:

  full             2 channels: onset, frame scaled to [0, 1] by /127
  onset_omitted    1 channel:  scaled frame only
  frame_binarized  2 channels: onset, frame mapped v>0 -> 1
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from composer_forge.errors import CacheError
from composer_forge.smf import NoteEvent

log = logging.getLogger(__name__)

BIN_SECONDS = 0.05
BINS_PER_SECOND = 20.0
SEGMENT_BINS = 400
N_PITCHES = 128

# snap tolerance for seconds -> bin conversion; absorbs float noise far
# below the 50 ms bin width
_TIME_EPS = 1e-7

VARIANTS = ("full", "onset_omitted", "frame_binarized")
VARIANT_CHANNELS = {"full": 2, "onset_omitted": 1, "frame_binarized": 2}


@dataclass
class PianoRoll:
    onset: np.ndarray   # uint8 [T, 128], values {0, 1}
    frame: np.ndarray   # uint8 [T, 128], values 0..127

    bin_seconds = BIN_SECONDS

    @property
    def n_bins(self) -> int:
        return self.onset.shape[0]


@dataclass
class Segment:
    data: np.ndarray    # float32 [C, 400, 128]
    start_bin: int
    piece_id: str = ""


def time_to_bin(seconds: float) -> int:
    """Bin index containing a time point (floor with snap tolerance)."""
    return int(math.floor(seconds * BINS_PER_SECOND + _TIME_EPS))


def time_to_bin_end(seconds: float) -> int:
    """Exclusive bin bound for an interval ending at `seconds`."""
    return int(math.ceil(seconds * BINS_PER_SECOND - _TIME_EPS))


def encode(notes: Sequence[NoteEvent]) -> PianoRoll:
    """Rasterize note events into an onset/frame roll covering the
    whole recording (T = ceil(end / 0.05); empty input gives T = 0).

    A note marks one onset bin at floor(onset / 0.05) and fills the frame
    plane over every bin its [onset, offset) span touches.  Colliding
    frame values take the maximum velocity, so encoding is
    order-independent; notes with pitches outside 0..127 are rejected
    with a diagnostic.
    """
    end = 0.0
    for note in notes:
        if 0 <= note.pitch < N_PITCHES:
            end = max(end, note.offset_seconds)
    n_bins = max(time_to_bin_end(end), 0)

    onset = np.zeros((n_bins, N_PITCHES), dtype=np.uint8)
    frame = np.zeros((n_bins, N_PITCHES), dtype=np.uint8)

    rejected = 0
    for note in notes:
        if not 0 <= note.pitch < N_PITCHES:
            rejected += 1
            continue
        if n_bins == 0:  # every span shorter than the snap tolerance
            continue
        t0 = time_to_bin(note.onset_seconds)
        t1 = max(time_to_bin_end(note.offset_seconds), t0 + 1)
        t0 = min(t0, n_bins - 1)
        t1 = min(t1, n_bins)
        velocity = min(max(int(note.velocity), 0), 127)
        onset[t0, note.pitch] = 1
        np.maximum(frame[t0:t1, note.pitch], velocity,
                   out=frame[t0:t1, note.pitch])
    if rejected:
        log.warning("rejected %d notes with out-of-range pitch", rejected)
    return PianoRoll(onset=onset, frame=frame)


def segment_positions(total_bins: int, n_segments: int) -> list[int]:
    """Evenly spaced segment starts covering [0, total_bins - 400].

    Inclusive endpoints: the first start is 0 and the last is
    total_bins - 400 (clamped at 0 for short recordings, which yields
    duplicate starts).
    """
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    span = max(total_bins - SEGMENT_BINS, 0)
    denom = max(n_segments - 1, 1)
    return [int(round(i * span / denom)) for i in range(n_segments)]


def cut(roll: PianoRoll, start_bin: int, variant: str = "full",
        piece_id: str = "") -> Segment:
    """Cut a 400-bin window starting at `start_bin`, zero-padded past the
    end of the roll, formatted per the requested variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    if start_bin < 0:
        raise ValueError("start_bin must be >= 0")

    n_bins = roll.n_bins
    stop = min(start_bin + SEGMENT_BINS, n_bins)
    length = max(stop - start_bin, 0)

    onset_win = np.zeros((SEGMENT_BINS, N_PITCHES), dtype=np.float32)
    frame_win = np.zeros((SEGMENT_BINS, N_PITCHES), dtype=np.float32)
    if length > 0:
        onset_win[:length] = roll.onset[start_bin:stop]
        frame_win[:length] = roll.frame[start_bin:stop]

    if variant == "full":
        data = np.stack([onset_win, frame_win / 127.0])
    elif variant == "onset_omitted":
        data = (frame_win / 127.0)[None, :, :]
    else:  # frame_binarized
        data = np.stack([onset_win, (frame_win > 0).astype(np.float32)])
    return Segment(data=data, start_bin=start_bin, piece_id=piece_id)


def sample_training_segment(roll: PianoRoll, rng: np.random.Generator,
                            variant: str = "full", piece_id: str = "") -> Segment:
    """One random window, start uniform over [0, max(T - 400, 0)]."""
    high = max(roll.n_bins - SEGMENT_BINS, 0)
    start = int(rng.integers(0, high + 1))
    return cut(roll, start, variant=variant, piece_id=piece_id)


# ---------------------------------------------------------------------------
# on-disk roll cache
#
# One file per recording.  16-byte header, then the onset plane and the
# frame plane as dense row-major uint8 arrays (little-endian by virtue of
# being single bytes):
#
#   bytes 0..3   magic  b"CFPR"
#   bytes 4..5   format version, uint16 little-endian (currently 1)
#   bytes 6..9   T (number of time bins), uint32 little-endian
#   bytes 10..15 reserved, zero
#   bytes 16..               onset plane, T*128 bytes
#   bytes 16+T*128..         frame plane, T*128 bytes
# ---------------------------------------------------------------------------

CACHE_MAGIC = b"CFPR"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sHI6s")


def save_roll(path, roll: PianoRoll) -> None:
    header = _CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, roll.n_bins, b"\0" * 6)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(roll.onset, dtype=np.uint8).tobytes())
        fh.write(np.ascontiguousarray(roll.frame, dtype=np.uint8).tobytes())
    os.replace(tmp, path)


def load_roll(path) -> PianoRoll:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CACHE_HEADER.size:
        raise CacheError(f"{path}: too short for a roll cache header")
    magic, version, n_bins, _ = _CACHE_HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise CacheError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise CacheError(f"{path}: unsupported cache version {version}")
    plane = n_bins * N_PITCHES
    if len(raw) != _CACHE_HEADER.size + 2 * plane:
        raise CacheError(f"{path}: size does not match T={n_bins}")
    body = np.frombuffer(raw, dtype=np.uint8, offset=_CACHE_HEADER.size)
    onset = body[:plane].reshape(n_bins, N_PITCHES).copy()
    frame = body[plane:].reshape(n_bins, N_PITCHES).copy()
    return PianoRoll(onset=onset, frame=frame)


def cache_path(cache_dir, midi_filename: str) -> Path:
    """Deterministic cache location for a recording.

    Hash prefix keeps names unique across MAESTRO's year subdirectories
    while the basename stays readable.
    """
    digest = hashlib.sha1(midi_filename.encode("utf-8")).hexdigest()[:12]
    stem = Path(midi_filename).stem
    return Path(cache_dir) / f"{digest}__{stem}.roll"


def has_valid_cache(cache_dir, midi_filename: str) -> bool:
    path = cache_path(cache_dir, midi_filename)
    if not path.exists():
        return False
    try:
        load_roll(path)
    except (CacheError, OSError):
        return False
    return True


def make_roll_loader(cache_dir):
    """Loader closure used by training/evaluation: midi_filename -> PianoRoll."""
    def load(midi_filename: str) -> PianoRoll:
        path = cache_path(cache_dir, midi_filename)
        if not path.exists():
            raise CacheError(f"no cached roll for {midi_filename} "
                             f"(expected {path}); run the encode step first")
        return load_roll(path)
    return load


def iter_nonzero_bins(roll: PianoRoll) -> Iterable[tuple[int, int]]:
    """(t, pitch) pairs with any activity; handy for debugging dumps."""
    t_idx, p_idx = np.nonzero(roll.frame)
    return zip(t_idx.tolist(), p_idx.tolist())
