from composer_forge.smf.parser import (
    DEFAULT_TEMPO,
    ControlChange,
    EndOfTrack,
    MidiEvent,
    NoteEvent,
    NoteExtractionStats,
    NoteOff,
    NoteOn,
    SetTempo,
    SmfHeader,
    TempoMap,
    extract_notes,
    load_notes,
    load_notes_from_file,
    notes_to_json,
    parse_smf,
    parse_vlq,
    tempo_map_from_tracks,
)

__all__ = [
    "DEFAULT_TEMPO",
    "ControlChange",
    "EndOfTrack",
    "MidiEvent",
    "NoteEvent",
    "NoteExtractionStats",
    "NoteOff",
    "NoteOn",
    "SetTempo",
    "SmfHeader",
    "TempoMap",
    "extract_notes",
    "load_notes",
    "load_notes_from_file",
    "notes_to_json",
    "parse_smf",
    "parse_vlq",
    "tempo_map_from_tracks",
]
