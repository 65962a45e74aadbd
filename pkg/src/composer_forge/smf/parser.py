"""Standard MIDI File (format 0/1) parsing.

Produces tick-stamped event lists per track plus a tempo map, and turns
those into absolute-time note events.  All reads are bounds-checked
against the declared chunk lengths, so arbitrary (including corrupt)
input either parses or raises MalformedFileError / UnsupportedFeatureError,
never an unhandled exception.

Deliberately out of scope: SMPTE division, format 2, real-time streams,
aftertouch and pitch-bend interpretation.  Sustain pedal (CC64) events are
surfaced as ControlChange but not folded into note durations.
"""

from __future__ import annotations

import bisect
import json
import logging
import struct
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

from composer_forge.errors import MalformedFileError, UnsupportedFeatureError

log = logging.getLogger(__name__)

DEFAULT_TEMPO = 500_000  # microseconds per quarter note (120 bpm)

_HEADER_STRUCT = struct.Struct(">HHH")
_CHUNK_HEAD = struct.Struct(">4sI")


@dataclass(frozen=True)
class SmfHeader:
    format: int          # 0 or 1
    track_count: int
    division: int        # ticks per quarter note, > 0


class NoteOn(NamedTuple):
    channel: int
    pitch: int
    velocity: int


class NoteOff(NamedTuple):
    channel: int
    pitch: int
    velocity: int


class ControlChange(NamedTuple):
    channel: int
    controller: int
    value: int


class SetTempo(NamedTuple):
    microseconds_per_quarter: int


class EndOfTrack(NamedTuple):
    pass


MidiEvent = Union[NoteOn, NoteOff, ControlChange, SetTempo, EndOfTrack]
Track = list  # list[tuple[int, MidiEvent]], entries are (absolute tick, event)


@dataclass(frozen=True)
class NoteEvent:
    """One sounded note with absolute times in seconds.

    Invariants (enforced by the producers, not by this record):
    offset_seconds > onset_seconds >= 0, pitch in 0..127,
    velocity in 1..127, channel in 0..15.
    """

    onset_seconds: float
    offset_seconds: float
    pitch: int
    velocity: int
    channel: int = 0


@dataclass
class NoteExtractionStats:
    dangling_note_offs: int = 0
    zero_length_dropped: int = 0


def parse_vlq(data, offset: int = 0) -> tuple[int, int]:
    """Decode one variable-length quantity starting at `offset`.

    Returns (value, bytes consumed).  At most 4 bytes contribute; a longer
    run or truncated input raises MalformedFileError.
    """
    value = 0
    for i in range(4):
        pos = offset + i
        if pos >= len(data):
            raise MalformedFileError("truncated variable-length quantity")
        byte = data[pos]
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, i + 1
    raise MalformedFileError("variable-length quantity longer than 4 bytes")


def _parse_track_chunk(chunk) -> Track:
    """Parse one MTrk payload into (absolute tick, event) pairs.

    Honors running status; meta and sysex events cancel it.  Events we do
    not care about (aftertouch, program change, pitch bend, unknown metas,
    sysex) are skipped by their declared lengths.
    """
    events: Track = []
    pos = 0
    tick = 0
    running_status = None
    n = len(chunk)

    def need(count, what):
        if pos + count > n:
            raise MalformedFileError(f"track chunk truncated inside {what}")

    while pos < n:
        delta, used = parse_vlq(chunk, pos)
        pos += used
        tick += delta

        need(1, "event status")
        first = chunk[pos]
        if first & 0x80:
            status = first
            pos += 1
            if status < 0xF0:
                running_status = status
            else:
                running_status = None
        else:
            if running_status is None:
                raise MalformedFileError("data byte with no running status")
            status = running_status

        if status == 0xFF:
            need(2, "meta event header")
            meta_type = chunk[pos]
            pos += 1
            length, used = parse_vlq(chunk, pos)
            pos += used
            need(length, "meta event payload")
            payload = chunk[pos:pos + length]
            pos += length
            if meta_type == 0x51:
                if length != 3:
                    raise MalformedFileError("tempo meta event must carry 3 bytes")
                mpq = (payload[0] << 16) | (payload[1] << 8) | payload[2]
                if mpq == 0:
                    raise MalformedFileError("tempo of 0 microseconds per quarter")
                events.append((tick, SetTempo(mpq)))
            elif meta_type == 0x2F:
                events.append((tick, EndOfTrack()))
                return events
            # all other metas: skipped by length
        elif status in (0xF0, 0xF7):
            length, used = parse_vlq(chunk, pos)
            pos += used
            need(length, "sysex payload")
            pos += length
        elif status >= 0xF1:
            raise MalformedFileError(f"status byte 0x{status:02X} is not valid in a file")
        else:
            kind = status & 0xF0
            channel = status & 0x0F
            n_data = 1 if kind in (0xC0, 0xD0) else 2
            need(n_data, "channel event data")
            d1 = chunk[pos]
            d2 = chunk[pos + 1] if n_data == 2 else 0
            pos += n_data
            if d1 & 0x80 or d2 & 0x80:
                raise MalformedFileError("channel event data byte with high bit set")
            if kind == 0x90:
                events.append((tick, NoteOn(channel, d1, d2)))
            elif kind == 0x80:
                events.append((tick, NoteOff(channel, d1, d2)))
            elif kind == 0xB0:
                events.append((tick, ControlChange(channel, d1, d2)))
            # 0xA0 / 0xC0 / 0xD0 / 0xE0: parsed for framing, not emitted

    raise MalformedFileError("track chunk ended without end-of-track meta")


def parse_smf(data: bytes) -> tuple[SmfHeader, list[Track]]:
    """Parse a complete Standard MIDI File byte string.

    Returns the header and one (tick, event) list per MTrk chunk.  Unknown
    chunk types between tracks are skipped, as the SMF spec requires.
    """
    view = memoryview(data)
    if len(view) < 8 or bytes(view[0:4]) != b"MThd":
        raise MalformedFileError("file does not start with an MThd chunk")
    (_, header_len) = _CHUNK_HEAD.unpack(view[0:8])
    if header_len < 6:
        raise MalformedFileError(f"MThd declares {header_len} bytes, need at least 6")
    if len(view) < 8 + header_len:
        raise MalformedFileError("file truncated inside MThd chunk")
    fmt, track_count, division = _HEADER_STRUCT.unpack(view[8:14])

    if fmt == 2:
        raise UnsupportedFeatureError("SMF format 2 is not supported")
    if fmt not in (0, 1):
        raise MalformedFileError(f"unknown SMF format {fmt}")
    if track_count < 1:
        raise MalformedFileError("header declares zero tracks")
    if fmt == 0 and track_count != 1:
        raise MalformedFileError(f"format 0 file declares {track_count} tracks")
    if division & 0x8000:
        raise UnsupportedFeatureError("SMPTE division is not supported")
    if division == 0:
        raise MalformedFileError("division of 0 ticks per quarter note")

    header = SmfHeader(format=fmt, track_count=track_count, division=division)

    tracks: list[Track] = []
    pos = 8 + header_len
    while len(tracks) < track_count:
        if pos + 8 > len(view):
            raise MalformedFileError(
                f"expected {track_count} MTrk chunks, found {len(tracks)}")
        magic, length = _CHUNK_HEAD.unpack(view[pos:pos + 8])
        pos += 8
        if pos + length > len(view):
            raise MalformedFileError("chunk length overruns end of file")
        if magic == b"MTrk":
            tracks.append(_parse_track_chunk(view[pos:pos + length]))
        # any other chunk type: skip it whole
        pos += length

    return header, tracks


class TempoMap:
    """Piecewise-constant tick -> seconds conversion.

    `changes` are (tick, microseconds_per_quarter) pairs with strictly
    increasing ticks.  If none starts at tick 0, an implicit
    (0, 500000) entry is prepended.
    """

    def __init__(self, changes: Sequence[tuple[int, int]], division: int):
        if division <= 0:
            raise MalformedFileError("division must be positive")
        cleaned = sorted(changes, key=lambda c: c[0])
        if not cleaned or cleaned[0][0] != 0:
            cleaned.insert(0, (0, DEFAULT_TEMPO))
        last_tick = -1
        for tick, mpq in cleaned:
            if tick <= last_tick:
                raise MalformedFileError("tempo change ticks must strictly increase")
            if mpq <= 0:
                raise MalformedFileError("tempo must be a positive tick rate")
            last_tick = tick
        self.division = division
        self._ticks = [t for t, _ in cleaned]
        self._mpq = [m for _, m in cleaned]
        # cumulative seconds at each change point
        self._seconds = [0.0]
        for i in range(1, len(cleaned)):
            dt = self._ticks[i] - self._ticks[i - 1]
            self._seconds.append(
                self._seconds[-1] + dt * self._mpq[i - 1] / (division * 1e6))

    @property
    def changes(self) -> list[tuple[int, int]]:
        return list(zip(self._ticks, self._mpq))

    def seconds_at(self, tick: int) -> float:
        if tick < 0:
            raise ValueError("tick must be >= 0")
        i = bisect.bisect_right(self._ticks, tick) - 1
        return self._seconds[i] + (tick - self._ticks[i]) * self._mpq[i] / (self.division * 1e6)


def tempo_map_from_tracks(tracks: Sequence[Track], division: int) -> TempoMap:
    """Collect SetTempo events from every track into one TempoMap.

    When several changes land on one tick the last one parsed wins.
    """
    by_tick: dict[int, int] = {}
    for track in tracks:
        for tick, event in track:
            if isinstance(event, SetTempo):
                by_tick[tick] = event.microseconds_per_quarter
    return TempoMap(sorted(by_tick.items()), division)


def extract_notes(
    header: SmfHeader,
    tracks: Sequence[Track],
    tempo_map: TempoMap | None = None,
) -> tuple[list[NoteEvent], NoteExtractionStats]:
    """Match note-ons to note-offs and convert ticks to seconds.

    A note-on pairs with the next note-off (or velocity-0 note-on) of the
    same pitch and channel; a second note-on on an already-sounding
    pitch+channel closes the first (last-wins).  Anything still open when
    the events run out is closed at the final event's time.  Channels are
    kept on the events but otherwise merged.

    Returns the notes sorted by onset time (ties by pitch ascending) and a
    count of ignored dangling note-offs / dropped zero-length notes.
    """
    if tempo_map is None:
        tempo_map = tempo_map_from_tracks(tracks, header.division)

    merged: list[tuple[int, MidiEvent]] = []
    for track in tracks:
        merged.extend(track)
    merged.sort(key=lambda pair: pair[0])  # stable: keeps track order within a tick

    stats = NoteExtractionStats()
    open_notes: dict[tuple[int, int], tuple[int, int]] = {}  # (ch, pitch) -> (tick, vel)
    spans: list[tuple[int, int, int, int, int]] = []  # (on_tick, off_tick, pitch, vel, ch)
    final_tick = merged[-1][0] if merged else 0

    for tick, event in merged:
        if isinstance(event, NoteOn) and event.velocity > 0:
            key = (event.channel, event.pitch)
            prev = open_notes.pop(key, None)
            if prev is not None:
                spans.append((prev[0], tick, event.pitch, prev[1], event.channel))
            open_notes[key] = (tick, event.velocity)
        elif isinstance(event, NoteOff) or isinstance(event, NoteOn):
            # genuine note-off, or the velocity-0 note-on convention
            key = (event.channel, event.pitch)
            prev = open_notes.pop(key, None)
            if prev is None:
                stats.dangling_note_offs += 1
            else:
                spans.append((prev[0], tick, event.pitch, prev[1], event.channel))

    for (channel, pitch), (on_tick, velocity) in open_notes.items():
        spans.append((on_tick, final_tick, pitch, velocity, channel))

    notes = []
    for on_tick, off_tick, pitch, velocity, channel in spans:
        onset = tempo_map.seconds_at(on_tick)
        offset = tempo_map.seconds_at(off_tick)
        if offset <= onset:
            stats.zero_length_dropped += 1
            continue
        notes.append(NoteEvent(onset, offset, pitch, velocity, channel))

    notes.sort(key=lambda n: (n.onset_seconds, n.pitch, n.channel, n.offset_seconds))
    if stats.dangling_note_offs:
        log.debug("ignored %d dangling note-offs", stats.dangling_note_offs)
    return notes, stats


def load_notes(data: bytes) -> tuple[list[NoteEvent], NoteExtractionStats]:
    """Parse SMF bytes straight to note events (header/tempo handled here)."""
    header, tracks = parse_smf(data)
    tempo = tempo_map_from_tracks(tracks, header.division)
    return extract_notes(header, tracks, tempo)


def load_notes_from_file(path) -> tuple[list[NoteEvent], NoteExtractionStats]:
    with open(path, "rb") as fh:
        return load_notes(fh.read())


def notes_to_json(notes: Sequence[NoteEvent]) -> str:
    """Debug dump: {"notes": [{onset, offset, pitch, velocity}, ...]}."""
    payload = {
        "notes": [
            {
                "onset": n.onset_seconds,
                "offset": n.offset_seconds,
                "pitch": n.pitch,
                "velocity": n.velocity,
            }
            for n in notes
        ]
    }
    return json.dumps(payload, indent=2)
