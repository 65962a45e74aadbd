"""SMF serialization used by test fixtures and the synthetic corpus.

Not part of the public parsing API: real recordings are only ever read.
Times are quantized to the nearest tick, so a write/parse round trip is
exact up to one tick.
"""

from __future__ import annotations

import struct
from typing import Iterable, Sequence

from composer_forge.smf.parser import DEFAULT_TEMPO, NoteEvent, TempoMap


def encode_vlq(value: int) -> bytes:
    if value < 0 or value > 0x0FFFFFFF:
        raise ValueError(f"value {value} outside variable-length range")
    chunks = [value & 0x7F]
    value >>= 7
    while value:
        chunks.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(chunks))


def _seconds_to_tick(seconds: float, tempo: TempoMap) -> int:
    # invert the piecewise map: locate the segment by cumulative seconds
    i = 0
    for j in range(len(tempo._seconds)):
        if tempo._seconds[j] <= seconds + 1e-12:
            i = j
    within = seconds - tempo._seconds[i]
    return tempo._ticks[i] + round(within * 1e6 * tempo.division / tempo._mpq[i])


def _chunk(magic: bytes, payload: bytes) -> bytes:
    return magic + struct.pack(">I", len(payload)) + payload


def build_track(events: Sequence[tuple[int, bytes]]) -> bytes:
    """Assemble an MTrk payload from (absolute tick, raw event bytes) pairs,
    append end-of-track, and wrap it in a chunk."""
    out = bytearray()
    last = 0
    for tick, raw in events:
        out += encode_vlq(tick - last)
        out += raw
        last = tick
    out += encode_vlq(0) + b"\xff\x2f\x00"
    return _chunk(b"MTrk", bytes(out))


def build_smf(
    notes: Iterable[NoteEvent],
    division: int = 480,
    tempo_changes: Sequence[tuple[int, int]] | None = None,
) -> bytes:
    """Serialize note events to a format-1 file: tempo track + one note track."""
    changes = list(tempo_changes) if tempo_changes else [(0, DEFAULT_TEMPO)]
    tempo = TempoMap(changes, division)

    meta_events = []
    for tick, mpq in tempo.changes:
        raw = b"\xff\x51\x03" + struct.pack(">I", mpq)[1:]
        meta_events.append((tick, raw))

    # note-offs sort before note-ons at equal ticks so back-to-back notes
    # of one pitch re-trigger instead of closing the new onset
    channel_events = []
    for note in notes:
        on_tick = _seconds_to_tick(note.onset_seconds, tempo)
        off_tick = _seconds_to_tick(note.offset_seconds, tempo)
        channel_events.append((on_tick, 1, note.pitch,
                               bytes([0x90 | note.channel, note.pitch, note.velocity])))
        channel_events.append((off_tick, 0, note.pitch,
                               bytes([0x80 | note.channel, note.pitch, 0])))
    channel_events.sort(key=lambda e: (e[0], e[1], e[2]))

    header = _chunk(b"MThd", struct.pack(">HHH", 1, 2, division))
    track0 = build_track(meta_events)
    track1 = build_track([(t, raw) for t, _, _, raw in channel_events])
    return header + track0 + track1


def write_smf(path, notes: Iterable[NoteEvent], division: int = 480,
              tempo_changes: Sequence[tuple[int, int]] | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(build_smf(notes, division=division, tempo_changes=tempo_changes))
